//! Config-driven experiments: the training-loop studies (approximation error,
//! width sweeps, polynomial grokking), the boosted-tree comparison and the
//! mode-connectivity study. Each seed writes one JSONL log into the output
//! directory and a summary CSV aggregates the logs across seeds.

pub mod config;
mod datasets;
mod gnuplot;
mod runner;
pub mod summary;

pub use config::{
    batch_seed, ActivationName, ArchSection, DataSource, DatasetSection, ExperimentConfig,
    ExperimentKind, ExperimentSection, GbtSection, LmcSection, OptimSection, SweepSection,
    TrackingSection, DATA_DIR_ENV,
};
pub use datasets::{binary_task, load_datasets, tabular_pool};
pub use gnuplot::gnuplot_script;
pub use runner::{resume, run, summary_for, Outcome, RunOptions};
pub use summary::{mean_se, read_jsonl, summarize, Summary};
