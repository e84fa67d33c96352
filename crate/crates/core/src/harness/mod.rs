//! Monte Carlo experiment engine behind the `risloc` binary.

pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod trial;

pub use config::{ArrayConfig, ExperimentConfig, ScenarioConfig, StageToggles, SweepConfig};
pub use output::write_report;
pub use scenario::{snap_on_grid, Scenario};
pub use sweep::{aggregate, run_sweep, run_sweep_with, ParamStats, PowerSummary, SweepReport};
pub use trial::{run_trial, run_trial_with, trial_seed, TrialRecord};
