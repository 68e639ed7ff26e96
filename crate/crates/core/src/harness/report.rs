//! Aggregation, parallel benchmark runs, the ablation grid, and report
//! files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, RunConfig};
use super::episode::{run_episode, EpisodeResult, EpisodeTrace, EvalWorld, FailureReason};
use crate::error::{Error, Result};
use crate::predictor::TargetPredictor;
use crate::world::{category_by_name, category_name, EpisodeSpec};

/// Mean of `S * l / max(p, l)`; zero for an empty set.
pub fn compute_spl(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(EpisodeResult::spl).sum::<f64>() / results.len() as f64
}

pub fn compute_success(results: &[EpisodeResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.success).count() as f64 / results.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub name: String,
    #[serde(skip)]
    pub rows: Vec<EpisodeResult>,
    pub count: usize,
    pub success: f64,
    pub spl: f64,
    pub fingerprint: String,
    pub seed: u64,
    pub predictor_calls: usize,
    pub failures: FailureCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub timeout: usize,
    pub false_stop: usize,
    pub stuck: usize,
}

impl BenchmarkReport {
    /// Sorts `rows` by episode id and aggregates them.
    pub fn new(name: &str, cfg: &RunConfig, mut rows: Vec<EpisodeResult>, predictor_calls: usize) -> Self {
        rows.sort_by_key(|r| r.spec.episode_id);
        let mut failures = FailureCounts::default();
        for r in &rows {
            match r.failure_reason {
                FailureReason::Timeout => failures.timeout += 1,
                FailureReason::FalseStop => failures.false_stop += 1,
                FailureReason::Stuck => failures.stuck += 1,
                FailureReason::None => {}
            }
        }
        Self {
            name: name.to_string(),
            count: rows.len(),
            success: compute_success(&rows),
            spl: compute_spl(&rows),
            fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            predictor_calls,
            failures,
            rows,
        }
    }
}

/// Worker count from `PEANUT_WORKERS`, else every available core.
pub fn worker_count() -> usize {
    std::env::var("PEANUT_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every episode on `workers` threads. Results are independent of the
/// worker count and of execution order.
pub fn run_benchmark(
    name: &str,
    cfg: &RunConfig,
    world: &EvalWorld,
    specs: &[EpisodeSpec],
    predictor: Option<&dyn TargetPredictor>,
    workers: usize,
) -> Result<BenchmarkReport> {
    let before = predictor.map_or(0, |p| p.calls());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let scene = world.scene(spec.scene_seed)?;
                let oracle = world.oracle_length(spec)?;
                Ok(run_episode(cfg, scene, spec, oracle, predictor, None))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let calls = predictor.map_or(0, |p| p.calls()) - before;
    Ok(BenchmarkReport::new(name, cfg, rows, calls))
}

/// Reruns one episode with its trace recorded.
pub fn trace_episode(
    cfg: &RunConfig,
    world: &EvalWorld,
    spec: &EpisodeSpec,
    predictor: Option<&dyn TargetPredictor>,
) -> Result<(EpisodeResult, EpisodeTrace)> {
    let mut trace = EpisodeTrace::default();
    let r = run_episode(cfg, world.scene(spec.scene_seed)?, spec, world.oracle_length(spec)?, predictor, Some(&mut trace));
    Ok((r, trace))
}

/// The four ablation rows: name and flags.
pub fn ablation_rows() -> Vec<(&'static str, AblationFlags)> {
    let f = |use_prediction, use_distance_weighting, gt_segmentation| AblationFlags {
        use_prediction,
        use_distance_weighting,
        gt_segmentation,
    };
    vec![
        ("pred+dw", f(true, true, false)),
        ("pred", f(true, false, false)),
        ("frontier", f(false, false, false)),
        ("pred+dw+gtseg", f(true, true, true)),
    ]
}

/// Evaluates every ablation row on the same episodes. `make_predictor`
/// yields a fresh predictor per row so call counts stay per row.
pub fn run_ablation_grid(
    base: &RunConfig,
    world: &EvalWorld,
    specs: &[EpisodeSpec],
    make_predictor: &dyn Fn() -> Box<dyn TargetPredictor>,
    workers: usize,
) -> Result<Vec<BenchmarkReport>> {
    ablation_rows()
        .into_iter()
        .map(|(name, flags)| {
            let cfg = RunConfig {
                flags,
                ..base.clone()
            };
            let predictor = flags.use_prediction.then(make_predictor);
            run_benchmark(name, &cfg, world, specs, predictor.as_deref(), workers)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 9] = [
    "episode_id",
    "scene_seed",
    "target",
    "success",
    "steps",
    "path_m",
    "oracle_m",
    "spl",
    "failure_reason",
];

pub fn write_csv(rows: &[EpisodeResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.spec.episode_id.to_string(),
            r.spec.scene_seed.to_string(),
            category_name(r.spec.target).to_string(),
            u8::from(r.success).to_string(),
            r.steps.to_string(),
            format!("{:.6}", r.agent_path_length),
            format!("{:.6}", r.oracle_path_length),
            format!("{:.6}", r.spl()),
            r.failure_reason.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub episode_id: u64,
    pub scene_seed: u64,
    pub target: u8,
    pub success: bool,
    pub steps: usize,
    pub path_m: f64,
    pub oracle_m: f64,
    pub spl: f64,
    pub failure_reason: FailureReason,
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<CsvRow>> {
    let bad = |m: String| Error::Format {
        path: "<episodes csv>".into(),
        reason: m,
    };
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing column {i}")));
        let num = |i: usize| -> Result<f64> { field(i)?.parse().map_err(|e| bad(format!("{e}"))) };
        let int = |i: usize| -> Result<u64> { field(i)?.parse().map_err(|e| bad(format!("{e}"))) };
        rows.push(CsvRow {
            episode_id: int(0)?,
            scene_seed: int(1)?,
            target: category_by_name(field(2)?).ok_or_else(|| bad("unknown target".into()))?,
            success: int(3)? == 1,
            steps: int(4)? as usize,
            path_m: num(5)?,
            oracle_m: num(6)?,
            spl: num(7)?,
            failure_reason: FailureReason::parse(field(8)?).ok_or_else(|| bad("unknown failure reason".into()))?,
        });
    }
    Ok(rows)
}

/// Grouped Success/SPL bars, one group per report.
pub fn svg_chart(reports: &[BenchmarkReport]) -> String {
    let (group_w, bar_w, plot_h, left, top) = (120.0, 40.0, 200.0, 50.0, 30.0);
    let width = left + group_w * reports.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 60.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            left - 6.0,
            y + 4.0
        );
    }
    for (i, r) in reports.iter().enumerate() {
        let x0 = left + group_w * i as f64 + 15.0;
        for (j, (v, color)) in [(r.success, "#4c78a8"), (r.spl, "#f58518")].into_iter().enumerate() {
            let h = plot_h * v.clamp(0.0, 1.0);
            let x = x0 + bar_w * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{h}" fill="{color}"/><text x="{}" y="{}" text-anchor="middle">{v:.3}</text>"#,
                top + plot_h - h,
                bar_w - 4.0,
                x + (bar_w - 4.0) / 2.0,
                top + plot_h - h - 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + bar_w - 2.0,
            top + plot_h + 16.0,
            xml_escape(&r.name)
        );
    }
    let ly = top + plot_h + 38.0;
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{}" width="10" height="10" fill="#4c78a8"/><text x="{}" y="{ly}">Success</text><rect x="{}" y="{}" width="10" height="10" fill="#f58518"/><text x="{}" y="{ly}">SPL</text>"##,
        ly - 9.0,
        left + 14.0,
        left + 80.0,
        ly - 9.0,
        left + 94.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<name>.csv`, `<name>.json` and `<name>.svg` into `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&report.rows, fs::File::create(dir.join(format!("{}.csv", report.name)))?)?;
    fs::write(dir.join(format!("{}.json", report.name)), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join(format!("{}.svg", report.name)), svg_chart(std::slice::from_ref(report)))?;
    Ok(())
}

/// Per-row files plus `ablation.csv`, `ablation.json` and `ablation.svg`.
pub fn emit_grid(reports: &[BenchmarkReport], dir: &Path) -> Result<()> {
    for r in reports {
        emit_report(r, dir)?;
    }
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record(["row", "episodes", "success", "spl", "predictor_calls", "timeout", "false_stop", "stuck", "fingerprint"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.count.to_string(),
            format!("{:.6}", r.success),
            format!("{:.6}", r.spl),
            r.predictor_calls.to_string(),
            r.failures.timeout.to_string(),
            r.failures.false_stop.to_string(),
            r.failures.stuck.to_string(),
            r.fingerprint.clone(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(reports)? + "\n")?;
    fs::write(dir.join("ablation.svg"), svg_chart(reports))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AgentPose;

    fn result(id: u64, success: bool, path: f64, oracle: f64) -> EpisodeResult {
        EpisodeResult {
            spec: EpisodeSpec {
                episode_id: id,
                scene_seed: 9,
                spawn: AgentPose::new(1.0, 1.0, 0.0),
                target: 2,
                step_limit: 500,
                success_radius: 1.0,
            },
            success,
            agent_path_length: path,
            oracle_path_length: oracle,
            steps: 10,
            failure_reason: if success { FailureReason::None } else { FailureReason::Timeout },
        }
    }

    #[test]
    fn spl_formula_cases() {
        assert_eq!(compute_spl(&[result(0, true, 4.0, 4.0)]), 1.0);
        assert_eq!(compute_spl(&[result(0, true, 8.0, 4.0)]), 0.5);
        assert_eq!(compute_spl(&[result(0, false, 4.0, 4.0)]), 0.0);
        // shorter than the oracle (discretisation) still caps at one
        assert_eq!(compute_spl(&[result(0, true, 3.5, 4.0)]), 1.0);
        assert_eq!(compute_spl(&[]), 0.0);
    }

    #[test]
    fn empty_report_has_header_only() {
        let cfg = RunConfig::default();
        let r = BenchmarkReport::new("empty", &cfg, Vec::new(), 0);
        assert_eq!((r.count, r.success, r.spl), (0, 0.0, 0.0));
        let mut buf = Vec::new();
        write_csv(&r.rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER.join(","));
    }

    #[test]
    fn csv_round_trip_reproduces_aggregates() {
        let rows = vec![result(2, true, 6.0, 4.0), result(0, false, 3.0, 2.0), result(1, true, 2.0, 2.0)];
        let r = BenchmarkReport::new("x", &RunConfig::default(), rows, 0);
        assert_eq!(r.rows.iter().map(|r| r.spec.episode_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        let mut buf = Vec::new();
        write_csv(&r.rows, &mut buf).unwrap();
        let parsed = read_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), 3);
        let succ = parsed.iter().filter(|p| p.success).count() as f64 / 3.0;
        let spl = parsed.iter().map(|p| p.spl).sum::<f64>() / 3.0;
        assert!((succ - r.success).abs() < 1e-12);
        assert!((spl - r.spl).abs() < 1e-6);
        assert!(r.spl <= r.success);
        assert_eq!(parsed[0].failure_reason, FailureReason::Timeout);
    }

    #[test]
    fn grid_rows_cover_the_ablations() {
        let rows = ablation_rows();
        assert_eq!(rows.len(), 4);
        assert!(!rows[2].1.use_prediction);
        assert!(rows[3].1.gt_segmentation);
    }

    #[test]
    fn svg_has_two_bars_per_row() {
        let cfg = RunConfig::default();
        let reports = vec![
            BenchmarkReport::new("a", &cfg, vec![result(0, true, 1.0, 1.0)], 0),
            BenchmarkReport::new("b<c", &cfg, vec![], 0),
        ];
        let svg = svg_chart(&reports);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect x=").count(), 4 + 2);
        assert!(svg.contains("b&lt;c"));
    }
}
