//! Tree- and forest-based estimation of a population mean from survey data
//! with missing values.
//!
//! - [`dataset`]: columnar data with explicit missing cells, CSV and schema
//!   files, missingness flags and simple random sampling.
//! - [`split`]: variable selection and split search, either by chi-squared
//!   association tests with missing values as their own level (`Guide`) or by
//!   exhaustive impurity reduction with surrogate splits (`Greedy`).
//! - [`tree`], [`forest`]: fitted classification and regression trees and
//!   bagged ensembles of them.
//! - [`estimators`]: inverse-probability-weighted and imputation estimators
//!   built on the trees and forests.
//! - [`gmice`]: chained-equations multiple imputation with tree models.
//! - [`sim`]: synthetic surveys and the two-step population simulation.
//! - [`config`], [`cli`]: the command-line tool.
//!
//! ```
//! use treeimpute::dataset::{Column, Dataset};
//! use treeimpute::estimators::{estimate, EstimatorConfig, Method};
//!
//! let x: Vec<Option<f64>> = (0..200).map(|i| Some(i as f64)).collect();
//! let y: Vec<Option<f64>> = (0..200)
//!     .map(|i| if i % 3 == 0 && i > 100 { None } else { Some(i as f64) })
//!     .collect();
//! let data = Dataset::new(vec![Column::ordinal("x", x), Column::ordinal("y", y)]).unwrap();
//! let sim = estimate(Method::Sim, &data, "y", &EstimatorConfig::default()).unwrap();
//! let grt = estimate(Method::Grt, &data, "y", &EstimatorConfig::default()).unwrap();
//! assert!((grt.estimate - 99.5).abs() < (sim.estimate - 99.5).abs());
//! ```

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod forest;
pub(crate) mod frame;
pub mod gmice;
pub mod rng;
pub mod sim;
pub mod split;
pub mod tree;

pub use error::{Error, Result};
pub use frame::{Response, TrainingSet};
