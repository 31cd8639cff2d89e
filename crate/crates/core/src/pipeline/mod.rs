//! Configuration-driven orchestration with a resumable run directory.

pub mod config;
pub mod manifest;
pub mod run;

pub use config::{Gating, ProviderConfig, RunConfig, StandardizationReference, TaskSelection, TranslationConfig};
pub use manifest::{RunManifest, StageRecord, StageStatus};
pub use run::{
    apply_gate, build_provider, compute_task_metrics, precache_translations, read_submission, render_run_report, run,
    run_task1, run_task2, write_submission, Pipeline, RunDir, RunOutcome, Stage, TaskOutcome,
};
