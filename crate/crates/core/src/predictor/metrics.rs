//! Prediction-quality metrics and the held-out comparison of input modes.
//!
//! Both modes are scored on the same egocentric window around the agent so
//! the numbers are comparable: the global model's full-map prediction is
//! cropped to the window, the egocentric model only ever sees the window.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{default_frustum, Snapshot, SnapshotDataset, Split};
use super::model::{InputMode, PredictorModel};
use super::{ProbabilityMap, CROP_M};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mapping::{crop_egocentric, crop_sources, semantic_channel, CH_EXPLORED};
use crate::world::NUM_TARGETS;

/// Euclidean distance from the highest-probability cell (lowest index on
/// ties) to the nearest ground-truth cell.
pub fn eval_dto(z: &ProbabilityMap, truth: &Grid<bool>, resolution: f64) -> Result<f64> {
    if !z.z.same_shape(truth) {
        return Err(Error::ShapeMismatch("prediction and ground truth differ".into()));
    }
    let targets: Vec<usize> = (0..truth.len()).filter(|&i| truth[i]).collect();
    if targets.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut best = 0;
    for (i, &v) in z.z.data().iter().enumerate() {
        if v > z.z[best] {
            best = i;
        }
    }
    let (r, c) = z.z.rc(best);
    let d2 = targets
        .iter()
        .map(|&t| {
            let (tr, tc) = truth.rc(t);
            let (dr, dc) = (tr as f64 - r as f64, tc as f64 - c as f64);
            dr * dr + dc * dc
        })
        .fold(f64::INFINITY, f64::min);
    Ok(d2.sqrt() * resolution)
}

/// Mean negative log of the sum-normalized prediction over ground-truth cells.
pub fn eval_nll(z: &ProbabilityMap, truth: &Grid<bool>) -> Result<f64> {
    if !z.z.same_shape(truth) {
        return Err(Error::ShapeMismatch("prediction and ground truth differ".into()));
    }
    let total: f64 = z.z.data().iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegeneratePrediction);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &t) in truth.data().iter().enumerate() {
        if t {
            sum -= (z.z[i] / total).max(f64::MIN_POSITIVE).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoGroundTruth);
    }
    Ok(sum / n as f64)
}

/// Scores of one `(snapshot, category)` item under both input modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item: usize,
    pub trajectory: usize,
    pub step: usize,
    pub category: u8,
    pub dto_global: f64,
    pub nll_global: f64,
    pub dto_egocrop: f64,
    pub nll_egocrop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    /// Positive and larger than its own half-width.
    pub fn clearly_positive(&self) -> bool {
        self.lo > 0.0 && self.mean > self.half_width()
    }
}

/// Mean and percentile bootstrap 95% interval of `values`.
pub fn bootstrap(values: &[f64], resamples: usize, seed: u64) -> Interval {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 {
        return Interval { mean, lo: 0.0, hi: 0.0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Interval {
        mean,
        lo: at(0.025),
        hi: at(0.975),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub items: usize,
    pub dto_global: f64,
    pub dto_egocrop: f64,
    pub nll_global: f64,
    pub nll_egocrop: f64,
    /// Paired `egocrop - global` differences; positive favours global.
    pub dto_gap: Interval,
    pub nll_gap: Interval,
}

pub fn compare(items: &[EvalItem], resamples: usize, seed: u64) -> Comparison {
    let n = items.len().max(1) as f64;
    let mean = |f: fn(&EvalItem) -> f64| items.iter().map(f).sum::<f64>() / n;
    let dto: Vec<f64> = items.iter().map(|i| i.dto_egocrop - i.dto_global).collect();
    let nll: Vec<f64> = items.iter().map(|i| i.nll_egocrop - i.nll_global).collect();
    Comparison {
        items: items.len(),
        dto_global: mean(|i| i.dto_global),
        dto_egocrop: mean(|i| i.dto_egocrop),
        nll_global: mean(|i| i.nll_global),
        nll_egocrop: mean(|i| i.nll_egocrop),
        dto_gap: bootstrap(&dto, resamples, seed),
        nll_gap: bootstrap(&nll, resamples, seed ^ 1),
    }
}

/// Window-scored items for one snapshot; categories whose window holds no
/// unseen target are skipped.
pub fn evaluate_snapshot(
    input: &Snapshot,
    final_map: &Snapshot,
    global: &PredictorModel,
    egocrop: &PredictorModel,
) -> Result<Vec<(u8, [f64; 4])>> {
    let m = input.map.unpack();
    let last = final_map.map.unpack();
    let (n, src) = crop_sources(&m, &input.pose, CROP_M, None);
    let window = |f: &dyn Fn(usize) -> f64| -> Grid<f64> {
        Grid::from_vec(n, n, src.iter().map(|s| s.map_or(0.0, f)).collect())
    };
    let explored = window(&|i| m.at(CH_EXPLORED, i) as f64);

    let pg = global.apply(&m)?;
    let crop = crop_egocentric(&m, &input.pose, CROP_M, Some(default_frustum()));
    let pe = egocrop.apply(&crop)?;

    let mut out = Vec::new();
    for c in 1..=NUM_TARGETS as u8 {
        let k = (c - 1) as usize;
        let truth = window(&|i| last.at(semantic_channel(c), i) as f64);
        let g = Grid::from_vec(
            n,
            n,
            (0..n * n).map(|i| truth[i] >= 0.5 && explored[i] < 0.5).collect::<Vec<bool>>(),
        );
        if !g.data().iter().any(|&b| b) {
            continue;
        }
        let zg = window(&|i| pg[k][i]);
        let zg = ProbabilityMap {
            z: Grid::from_vec(n, n, (0..n * n).map(|i| if explored[i] >= 0.5 { 0.0 } else { zg[i] }).collect()),
            target: c,
            masked: true,
        };
        let ze = ProbabilityMap {
            z: Grid::from_vec(
                n,
                n,
                (0..n * n).map(|i| if crop.is_explored(i) { 0.0 } else { pe[k][i] }).collect(),
            ),
            target: c,
            masked: true,
        };
        let res = m.resolution;
        out.push((
            c,
            [eval_dto(&zg, &g, res)?, eval_nll(&zg, &g)?, eval_dto(&ze, &g, res)?, eval_nll(&ze, &g)?],
        ));
    }
    Ok(out)
}

/// Scores both models on (up to `limit` evenly spaced) validation snapshots.
pub fn evaluate(
    data: &SnapshotDataset,
    global: &PredictorModel,
    egocrop: &PredictorModel,
    limit: usize,
) -> Result<Vec<EvalItem>> {
    if global.spec.mode != InputMode::Global || egocrop.spec.mode != InputMode::Egocrop {
        return Err(Error::Config("expected a global and an egocrop model".into()));
    }
    let all = data.items(Split::Val);
    let picks: Vec<(usize, usize)> = if limit == 0 || all.len() <= limit {
        all
    } else {
        (0..limit).map(|k| all[k * all.len() / limit]).collect()
    };
    let scored = picks
        .par_iter()
        .map(|&(t, s)| {
            let traj = &data.trajectories[t];
            evaluate_snapshot(&traj.inputs[s], &traj.final_map, global, egocrop).map(|v| (t, traj.inputs[s].step, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut items = Vec::new();
    for (t, step, v) in scored {
        for (c, [dg, ng, de, ne]) in v {
            items.push(EvalItem {
                item: items.len(),
                trajectory: t,
                step,
                category: c,
                dto_global: dg,
                nll_global: ng,
                dto_egocrop: de,
                nll_egocrop: ne,
            });
        }
    }
    Ok(items)
}

#[derive(Serialize)]
struct Row {
    item: usize,
    category: u8,
    dto_m: f64,
    nll: f64,
    mode: &'static str,
}

/// One CSV row per item and mode: `item,category,dto_m,nll,mode`.
pub fn write_csv(items: &[EvalItem], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for it in items {
        for (mode, dto_m, nll) in [
            (InputMode::Global, it.dto_global, it.nll_global),
            (InputMode::Egocrop, it.dto_egocrop, it.nll_egocrop),
        ] {
            w.serialize(Row {
                item: it.item,
                category: it.category,
                dto_m,
                nll,
                mode: mode.as_str(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
