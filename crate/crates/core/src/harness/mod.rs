//! End-to-end episodes, metrics, the ablation grid, and report files.

pub mod config;
pub mod episode;
pub mod report;

pub use config::{AblationFlags, RunConfig};
pub use episode::{
    generate_episodes, oracle_field, read_episodes, run_episode, scene_seeds, success_cells, write_episodes,
    EpisodeResult, EpisodeTrace, EvalWorld, FailureReason,
};
pub use report::{
    ablation_rows, compute_spl, compute_success, emit_grid, emit_report, read_csv, run_ablation_grid, run_benchmark,
    svg_chart, trace_episode, worker_count, write_csv, BenchmarkReport, CsvRow,
};
