//! Multi-round experiments, observation regimes, solver benchmarks, and
//! report files.

mod benchmark;
mod config;
mod report;
mod run;
mod store;

pub use benchmark::{mixed_policies, solver_benchmark, BenchRow, BenchSolver, BenchmarkTable, BENCH_ERROR_CAP};
pub use config::{sample_observation_times, RunConfig, Spacing};
pub use report::{
    checkpoint_dir, emit_reports, load_checkpoint, rounds_csv, save_checkpoint, CheckpointMeta, LoadedCheckpoint,
    ROUNDS_HEADER,
};
pub use run::{bootstrap_dataset, run_experiment, run_round, RoundRecord, RunState};
pub use store::{ExperienceStore, Provenance, StoredTrajectory};
