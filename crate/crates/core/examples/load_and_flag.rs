//! Load a CSV with a schema, summarize it, derive the missing flag of the
//! response and draw a simple random sample.
//!
//! cargo run --example load_and_flag

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeimpute::dataset::{derive_flag, load_csv, srswor_sample, Schema};

const CSV: &str = "\
cu_id,age,tenure,region,dividends
A001,34,own,north,120
A002,51,rent,south,NA
A003,,own,south,800
A004,29,rent,east,
A005,62,own,north,2400
A006,45,NA,west,300
A007,38,rent,east,NA
A008,57,own,west,1500
";

const SCHEMA: &str = "\
# one line per column
cu_id = categorical
age = ordinal
tenure = categorical
region = categorical
dividends = ordinal
";

pub fn main() -> treeimpute::Result<()> {
    let dir = std::env::temp_dir().join(format!("treeimpute-load-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("households.csv");
    std::fs::write(&path, CSV)?;

    let data = load_csv(&path, &Schema::parse(SCHEMA)?)?;
    println!("{} rows, {} columns, {} missing cells", data.n_rows(), data.n_cols(), data.missing_cells());
    for col in data.columns() {
        println!("  {:<10} {:<12} missing {}", col.name(), col.kind().to_string(), col.missing_count());
    }
    println!("identifier-like: {:?}", data.identifier_like_columns());

    let flag = derive_flag(&data, "dividends")?;
    println!("dividends missing in {} of {} rows", flag.missing_count(), flag.len());
    let with_flag = data.with_column(flag.to_column())?;
    println!("columns now: {:?}", with_flag.names());

    let sample = srswor_sample(&data, 0.5, &mut ChaCha8Rng::seed_from_u64(1))?;
    let ids: Vec<String> = (0..sample.n_rows()).filter_map(|r| sample.column(0).cell_text(r)).collect();
    println!("half sample: {ids:?}");

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
