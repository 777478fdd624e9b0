//! Config-driven experiment pipelines, sweeps and plot data.

pub mod config;
pub mod plotdata;
pub mod presets;
pub mod run;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig};
pub use plotdata::{activation_table, emit_plotdata, Figure};
pub use presets::{preset, PRESET_NAMES};
pub use run::{run_experiment, ExperimentError, RunOptions, RunReport, VENTILATOR_ENV};
pub use sweep::{sweep, SearchSpace, SweepReport};
