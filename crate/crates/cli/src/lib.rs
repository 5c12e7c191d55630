//! Command-line front end: run configuration, checkpoint files and trial CSV
//! ingestion around the `amortize` library.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod infer;
pub mod rtcsv;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Network};
pub use config::Config;
pub use error::{AppError, AppResult};
pub use infer::{infer_many, Inference};
pub use rtcsv::{format_rt_csv, ingest_csv, parse_rt_csv};
