//! Datasets, synthetic data, session splits, the intra-session benchmark grid
//! and its reports.

pub mod dataset;
pub mod grid;
pub mod report;
pub mod split;
pub mod synth;

pub use dataset::{load_dataset, load_recording, save_recording, DatasetError};
pub use grid::{
    cell_seed, intra_session_benchmark, intra_session_benchmark_with, BenchConfig, BenchError, DataSource,
    ModelEntry, Preset,
};
pub use report::{render_report, BenchmarkReport, CellResult, ReportFormat};
pub use split::{split_session, SessionDataset, Split, SplitRatios};
pub use synth::{synth_generate, Reflector, ReflectorModel, SynthConfig};
