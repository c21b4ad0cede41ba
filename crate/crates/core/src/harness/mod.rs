//! Experiment orchestration: configuration, Monte Carlo comparison runs
//! and their CSV and manifest outputs.

pub mod config;
pub mod output;
pub mod run;
pub mod stats;

pub use config::{load_config, parse_config, parse_config_with_overrides, preset, ExperimentConfig, PAPER_PRESET, SCALAR_PRESET};
pub use output::{
    parse_series_csv, read_series_csv, write_comparison, write_series_csv, write_sweep_summary, RunManifest, SeriesTable,
    INFEASIBLE_MARKER, SERIES_COLUMNS, THEORY_COLUMNS,
};
pub use run::{run_comparison, run_theory_overlay, simulate_trajectory, ComparisonRun, ComparisonSeries, MeanFieldSummary, TheoryColumns};
