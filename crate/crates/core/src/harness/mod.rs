//! Experiment orchestration: configuration, SNR sweeps, online runs and
//! result files.

pub mod config;
pub mod output;
pub mod sweep;
pub mod workflows;

pub use config::{Method, ScenarioConfig};
pub use output::{emit_csv, emit_plot, parse_csv, read_csv, render_svg, write_csv};
pub use sweep::{
    cell_seed, gansic_blocks, gansic_run, run_dynamic_sweep, run_static_sweep, OnlineRun, SweepResult,
    SweepRow,
};
pub use workflows::{gan_fidelity, gradient_suites, run_train_gan, FidelityReport, TrainGanRun};
