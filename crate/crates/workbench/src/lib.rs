//! File formats, configuration, parallel drivers and the `dynmed` command
//! line on top of `dynmed-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod format;
pub mod model_file;
pub mod parallel;

pub use cli::run_cli;
pub use config::RunConfig;
pub use dataset::{load_dataset, merge_meals, save_dataset, StudyDataset};
pub use error::{Result, WorkbenchError};
pub use model_file::{load_model, save_model, ModelFile};
