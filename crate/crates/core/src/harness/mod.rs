//! Configuration, seeded runs, sweeps, CSV output and the rate fit.

pub mod config;
pub mod rate;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{LrSchedule, RunConfig};
pub use rate::{rate_fit, RateFit};
pub use run::{run_averaged, run_single, smoothness_capped_lr, AveragedRow, AveragedSeries, Problem, RunTrace};
pub use sweep::{check_sweep, sweep, SweepAxes};
