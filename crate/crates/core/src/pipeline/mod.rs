//! Experiment orchestration and persistence.

pub mod chart;
pub mod checks;
pub mod checkpoint;
pub mod config;
pub mod run;
pub mod validation;

pub use chart::{emit_report, render_svg};
pub use checks::{theory_checks, write_theory_checks, TheoryCheck};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind};
pub use config::ExperimentConfig;
pub use run::{run_experiment, ExperimentResult, RunSummary};
pub use validation::{validate_disentanglement, DisentanglementTable};
