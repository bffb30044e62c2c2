use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeimpute::dataset::{
    derive_flag, load_csv, read_csv, sample_size, srswor_indices, srswor_sample, write_csv, Column, Dataset, Flag, Schema, VariableKind,
};
use treeimpute::Error;

fn schema(cols: &[(&str, VariableKind)]) -> Schema {
    Schema::new(cols.iter().map(|(n, k)| (n.to_string(), *k)).collect())
}

fn label() -> impl Strategy<Value = String> {
    "[a-z ,\"]{1,6}".prop_filter("not a missing token", |s| s != "NA")
}

fn mixed_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::option::of(-1e6f64..1e6), n),
            prop::collection::vec(prop::option::of(label()), n),
            prop::collection::vec(prop::option::of(any::<i32>().prop_map(f64::from)), n),
        )
            .prop_map(|(a, b, c)| {
                Dataset::new(vec![Column::ordinal("a", a), Column::categorical("b", &b), Column::ordinal("c", c)]).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn csv_round_trip(data in mixed_dataset()) {
        let mut buf = Vec::new();
        write_csv(&data, &mut buf, "NA").unwrap();
        let back = read_csv(buf.as_slice(), &data.schema()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn srswor_has_distinct_rows_of_the_right_size(n in 1usize..2000, fraction in 0.01f64..=1.0, seed in any::<u64>()) {
        let Ok(k) = sample_size(n, fraction) else { return Ok(()) };
        let mut rows = srswor_indices(n, fraction, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(rows.len(), k);
        rows.sort_unstable();
        rows.dedup();
        prop_assert_eq!(rows.len(), k);
        prop_assert!(rows.iter().all(|&r| r < n));
    }
}

#[test]
fn loads_file_with_missing_tokens_and_levels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cu.csv");
    let mut text = String::from("region,income,tenure\n");
    for i in 0..78 {
        let income = if i % 5 == 0 { "NA".to_owned() } else { format!("{}", 1000 + i * 10) };
        let tenure = if i % 7 == 0 { "" } else { ["own", "rent"][i % 2] };
        text.push_str(&format!("r{},{income},{tenure}\n", i % 39));
    }
    std::fs::write(&path, text).unwrap();
    let s = schema(&[("region", VariableKind::Categorical), ("income", VariableKind::Ordinal), ("tenure", VariableKind::Categorical)]);
    let data = load_csv(&path, &s).unwrap();
    assert_eq!(data.n_rows(), 78);
    assert_eq!(data.column_by_name("region").unwrap().levels().len(), 39);
    assert_eq!(data.column_by_name("income").unwrap().missing_count(), 16);
    assert_eq!(data.column_by_name("tenure").unwrap().missing_count(), 12);

    let flag = derive_flag(&data, "income").unwrap();
    assert_eq!(flag.missing_count(), 16);
    assert_eq!(flag.flags[0], Flag::Missing);
    assert_eq!(flag.flags[1], Flag::Observed);
    let col = flag.to_column();
    assert_eq!(col.name(), "income_");
    assert_eq!(col.missing_count(), 0);
}

#[test]
fn load_errors_name_the_row() {
    let s = schema(&[("a", VariableKind::Ordinal), ("b", VariableKind::Categorical)]);
    match read_csv("a,b\n1,x\n2\n".as_bytes(), &s) {
        Err(Error::RowLength { row: 2, expected: 2, found: 1 }) => {}
        other => panic!("{other:?}"),
    }
    match read_csv("a,b\n1,x\nabc,y\n".as_bytes(), &s) {
        Err(Error::ParseCell { row: 2, column, value }) => {
            assert_eq!(column, "a");
            assert_eq!(value, "abc");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(read_csv("a,z\n1,x\n".as_bytes(), &s), Err(Error::Schema(_))));
    assert!(matches!(read_csv("a\n1\n".as_bytes(), &s), Err(Error::Schema(_))));
    assert!(matches!(Schema::parse("a = ordinal\nb = weird\n"), Err(Error::Schema(_))));
    assert!(matches!(Schema::parse("a = ordinal\na = ordinal\n"), Err(Error::Schema(_))));
}

#[test]
fn identifier_like_columns_are_flagged() {
    let ids: Vec<Option<String>> = (0..50).map(|i| Some(format!("id{i}"))).collect();
    let few: Vec<Option<&str>> = (0..50).map(|i| Some(["a", "b", "c"][i % 3])).collect();
    let data = Dataset::new(vec![Column::categorical("id", &ids), Column::categorical("g", &few)]).unwrap();
    assert_eq!(data.identifier_like_columns(), vec!["id"]);
}

#[test]
fn sample_sizes_of_the_study_fractions() {
    assert_eq!(sample_size(4609, 0.05).unwrap(), 230);
    assert_eq!(sample_size(4609, 0.10).unwrap(), 461);
    assert_eq!(sample_size(4609, 0.25).unwrap(), 1152);
    assert!(sample_size(4609, 0.0).is_err());
    assert!(sample_size(4609, 1.5).is_err());
    assert!(sample_size(10, 0.01).is_err());
}

#[test]
fn full_fraction_is_a_permutation() {
    let rows = srswor_indices(100, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut sorted = rows.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..100).collect::<Vec<_>>());
}

#[test]
fn inclusion_frequencies_are_uniform() {
    let (n, fraction, draws) = (50usize, 0.2, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = vec![0u32; n];
    for _ in 0..draws {
        for r in srswor_indices(n, fraction, &mut rng).unwrap() {
            hits[r] += 1;
        }
    }
    let mean = draws as f64 * fraction;
    let sd = (draws as f64 * fraction * (1.0 - fraction)).sqrt();
    for (r, &h) in hits.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 4.0 * sd, "row {r}: {h} inclusions, expected {mean}");
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let x: Vec<Option<f64>> = (0..200).map(|i| Some(i as f64)).collect();
    let data = Dataset::new(vec![Column::ordinal("x", x)]).unwrap();
    let a = srswor_sample(&data, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = srswor_sample(&data, 0.3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let c = srswor_sample(&data, 0.3, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.n_rows(), 60);
}
