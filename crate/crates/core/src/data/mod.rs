//! Domain types, file formats, the synthetic city and fold splitting.

pub mod config;
pub mod dataset;
pub mod format;
pub mod kfold;
pub mod synthetic;
pub mod types;

pub use config::{RegressorKind, RunConfig};
pub use dataset::{load_dataset, save_dataset, Dataset, DatasetPaths};
pub use kfold::kfold_split;
pub use synthetic::{generate_synthetic_city, write_synthetic_city, GroundTruth, SyntheticSpec};
pub use types::*;
