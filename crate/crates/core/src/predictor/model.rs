//! Per-cell logistic regression over multi-scale box means.
//!
//! Every input channel is averaged over square windows of half-width `r` for
//! each radius in the feature spec (zero outside the map, constant divisor),
//! giving `channels * radii` features per cell. A second copy of those
//! features is gated by the cell's own unexplored indicator, so unexplored
//! cells get their own weights. Category `c` has its own
//! weight row and bias; `theta` stores, for each category in turn, its
//! weights followed by its bias.

use serde::{Deserialize, Serialize};

use super::{ProbabilityMap, TrainingTarget};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mapping::{semantic_channel, ExplorationMask, SemanticMap, CH_EXPLORED};

pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The whole allocentric map.
    Global,
    /// A frustum-masked egocentric window.
    Egocrop,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Global => "global",
            InputMode::Egocrop => "egocrop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: InputMode,
    pub radii: Vec<usize>,
}

impl FeatureSpec {
    pub fn new(mode: InputMode) -> Self {
        Self {
            mode,
            radii: vec![1, 2, 4, 8, 16, 48],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub spec: FeatureSpec,
    pub channels: usize,
    pub categories: usize,
    pub theta: Vec<f64>,
}

/// Box-mean features, feature-major: `data[f * cells + i]`.
#[derive(Clone, Debug)]
pub struct Features {
    pub count: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        let n = self.cells();
        &self.data[f * n..(f + 1) * n]
    }
}

/// Computes the features of `input` (channel-major `channels x h x w`).
pub fn features(input: &[f32], channels: usize, h: usize, w: usize, radii: &[usize]) -> Features {
    let n = h * w;
    let plain = channels * radii.len();
    let mut data = vec![0.0f64; 2 * plain * n];
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    let sw = w + 1;
    for k in 0..channels {
        let src = &input[k * n..(k + 1) * n];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += src[r * w + c] as f64;
                sat[(r + 1) * sw + c + 1] = sat[r * sw + c + 1] + row;
            }
        }
        for (ri, &rad) in radii.iter().enumerate() {
            let f = k * radii.len() + ri;
            let out = &mut data[f * n..(f + 1) * n];
            let norm = 1.0 / ((2 * rad + 1) * (2 * rad + 1)) as f64;
            for r in 0..h {
                let r0 = r.saturating_sub(rad);
                let r1 = (r + rad + 1).min(h);
                for c in 0..w {
                    let c0 = c.saturating_sub(rad);
                    let c1 = (c + rad + 1).min(w);
                    let s = sat[r1 * sw + c1] - sat[r0 * sw + c1] - sat[r1 * sw + c0] + sat[r0 * sw + c0];
                    out[r * w + c] = s * norm;
                }
            }
        }
    }
    let unexplored: Vec<f64> = match input.get(CH_EXPLORED * n..(CH_EXPLORED + 1) * n) {
        Some(e) => e.iter().map(|&v| 1.0 - v as f64).collect(),
        None => vec![1.0; n],
    };
    let (base, gated) = data.split_at_mut(plain * n);
    for (g, b) in gated.chunks_mut(n).zip(base.chunks(n)) {
        for ((o, &x), &u) in g.iter_mut().zip(b).zip(&unexplored) {
            *o = x * u;
        }
    }
    Features {
        count: 2 * plain,
        h,
        w,
        data,
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PredictorModel {
    /// All-zero parameters: every output is 0.5.
    pub fn zeros(spec: FeatureSpec, channels: usize, categories: usize) -> Self {
        let n = categories * (2 * channels * spec.radii.len() + 1);
        Self {
            spec,
            channels,
            categories,
            theta: vec![0.0; n],
        }
    }

    pub fn num_features(&self) -> usize {
        2 * self.channels * self.spec.radii.len()
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn row(&self, c: usize) -> &[f64] {
        let f = self.num_features() + 1;
        &self.theta[c * f..(c + 1) * f]
    }

    pub fn bias_mut(&mut self, c: usize) -> &mut f64 {
        let f = self.num_features() + 1;
        &mut self.theta[c * f + f - 1]
    }

    fn check(&self, map: &SemanticMap) -> Result<()> {
        if map.channels() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} channels, map has {}",
                self.channels,
                map.channels()
            )));
        }
        Ok(())
    }

    pub fn features(&self, map: &SemanticMap) -> Features {
        features(map.data(), map.channels(), map.h(), map.w(), &self.spec.radii)
    }

    /// Logits of category index `c` (0-based) at every cell.
    pub fn logits(&self, feats: &Features, c: usize) -> Vec<f64> {
        let row = self.row(c);
        let nf = self.num_features();
        let mut z = vec![row[nf]; feats.cells()];
        for (f, &wt) in row[..nf].iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            for (zi, &x) in z.iter_mut().zip(feats.feature(f)) {
                *zi += wt * x;
            }
        }
        z
    }

    /// Probabilities for every category, `C x h x w`.
    pub fn apply(&self, map: &SemanticMap) -> Result<Vec<Grid<f64>>> {
        self.check(map)?;
        let feats = self.features(map);
        Ok((0..self.categories)
            .map(|c| Grid::from_vec(map.h(), map.w(), self.logits(&feats, c).into_iter().map(sigmoid).collect()))
            .collect())
    }

    /// Mean binary cross-entropy over all categories and cells, and its exact
    /// gradient with respect to `theta`. Probabilities are clamped to
    /// `[CLAMP_EPS, 1 - CLAMP_EPS]` before the logarithm; the gradient is zero
    /// where the clamp is active.
    pub fn loss_and_grad(&self, map: &SemanticMap, y: &TrainingTarget) -> Result<(f64, Vec<f64>)> {
        self.check(map)?;
        let feats = self.features(map);
        self.loss_and_grad_feats(&feats, y)
    }

    pub fn loss_and_grad_feats(&self, feats: &Features, y: &TrainingTarget) -> Result<(f64, Vec<f64>)> {
        let n = feats.cells();
        if y.categories != self.categories || y.h * y.w != n {
            return Err(Error::ShapeMismatch("target does not match the input".into()));
        }
        let nf = self.num_features();
        let scale = 1.0 / (self.categories * n) as f64;
        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        let mut g = vec![0.0f64; n];
        for c in 0..self.categories {
            let z = self.logits(feats, c);
            let yc = y.channel(c);
            for i in 0..n {
                let p = sigmoid(z[i]);
                let t = yc[i] as f64;
                let pc = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                g[i] = if p == pc { (p - t) * scale } else { 0.0 };
            }
            let base = c * (nf + 1);
            for f in 0..nf {
                grad[base + f] = g.iter().zip(feats.feature(f)).map(|(a, b)| a * b).sum();
            }
            grad[base + nf] = g.iter().sum();
        }
        Ok((loss * scale, grad))
    }

    /// Mean BCE without the gradient.
    pub fn loss(&self, map: &SemanticMap, y: &TrainingTarget) -> Result<f64> {
        self.check(map)?;
        let feats = self.features(map);
        let n = feats.cells();
        let mut loss = 0.0;
        for c in 0..self.categories {
            let z = self.logits(&feats, c);
            for (zi, &t) in z.iter().zip(y.channel(c)) {
                let pc = sigmoid(*zi).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                let t = t as f64;
                loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            }
        }
        Ok(loss / (self.categories * n) as f64)
    }

    /// Probability map for `target` (1-based) with explored cells zeroed.
    pub fn infer(&self, map: &SemanticMap, target: u8, mask: &ExplorationMask) -> Result<ProbabilityMap> {
        self.check(map)?;
        let c = target as usize;
        if c == 0 || c > self.categories {
            return Err(Error::InvalidEpisode(format!("category {target} is not predicted")));
        }
        if mask.0.h() != map.h() || mask.0.w() != map.w() {
            return Err(Error::ShapeMismatch("mask does not match the map".into()));
        }
        let feats = self.features(map);
        let z: Vec<f64> = self
            .logits(&feats, c - 1)
            .into_iter()
            .zip(mask.0.data())
            .map(|(l, &e)| if e { 0.0 } else { sigmoid(l) })
            .collect();
        Ok(ProbabilityMap {
            z: Grid::from_vec(map.h(), map.w(), z),
            target,
            masked: true,
        })
    }
}

/// `y[c] = (1 - e) * M[c]` for the target channels of `final_map`.
pub fn make_target(final_map: &SemanticMap, e: &ExplorationMask, categories: usize) -> Result<TrainingTarget> {
    if e.0.h() != final_map.h() || e.0.w() != final_map.w() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs map {}x{}",
            e.0.h(),
            e.0.w(),
            final_map.h(),
            final_map.w()
        )));
    }
    let n = final_map.cells();
    let mut y = vec![0u8; categories * n];
    for c in 0..categories {
        let m = final_map.channel(semantic_channel(c as u8 + 1));
        for i in 0..n {
            if !e.0[i] && m[i] >= 0.5 {
                y[c * n + i] = 1;
            }
        }
    }
    Ok(TrainingTarget {
        categories,
        h: final_map.h(),
        w: final_map.w(),
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{CH_EXPLORED, NUM_CHANNELS};
    use crate::world::NUM_TARGETS;

    fn spec() -> FeatureSpec {
        FeatureSpec::new(InputMode::Global)
    }

    #[test]
    fn reference_parameter_count() {
        let m = PredictorModel::zeros(spec(), NUM_CHANNELS, NUM_TARGETS);
        assert_eq!(m.param_count(), NUM_TARGETS * (2 * NUM_CHANNELS * spec().radii.len() + 1));
    }

    #[test]
    fn zero_theta_gives_one_half_and_ln2() {
        let m = PredictorModel::zeros(spec(), NUM_CHANNELS, NUM_TARGETS);
        let mut map = SemanticMap::new(NUM_CHANNELS, 9, 7, 0.2, (0, 0));
        map.channel_mut(5)[3] = 1.0;
        for p in m.apply(&map).unwrap() {
            assert!(p.data().iter().all(|&v| v == 0.5));
        }
        let y = make_target(&map, &map.exploration_mask(), NUM_TARGETS).unwrap();
        let loss = m.loss_and_grad(&map, &y).unwrap().0;
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_bias() {
        let mut m = PredictorModel::zeros(spec(), NUM_CHANNELS, 2);
        *m.bias_mut(0) = 10.0;
        let map = SemanticMap::new(NUM_CHANNELS, 4, 4, 0.2, (0, 0));
        assert!(m.apply(&map).unwrap()[0].data().iter().all(|&v| v > 0.9999));
    }

    #[test]
    fn target_is_masked_by_exploration() {
        let mut fin = SemanticMap::new(NUM_CHANNELS, 2, 2, 0.2, (0, 0));
        fin.channel_mut(semantic_channel(1)).fill(1.0);
        let mut e = fin.exploration_mask();
        let y = make_target(&fin, &e, 2).unwrap();
        assert_eq!(y.channel(0), &[1, 1, 1, 1]);
        e.0[2] = true;
        let y = make_target(&fin, &e, 2).unwrap();
        assert_eq!(y.channel(0), &[1, 1, 0, 1]);
        e.0.fill(true);
        assert!(make_target(&fin, &e, 2).unwrap().y.iter().all(|&v| v == 0));
        let bad = ExplorationMask(Grid::new(3, 2, false));
        assert!(make_target(&fin, &bad, 2).is_err());
    }

    #[test]
    fn infer_zeroes_explored_cells() {
        let m = PredictorModel::zeros(spec(), NUM_CHANNELS, NUM_TARGETS);
        let mut map = SemanticMap::new(NUM_CHANNELS, 5, 5, 0.2, (0, 0));
        map.channel_mut(CH_EXPLORED)[..10].fill(1.0);
        let z = m.infer(&map, 3, &map.exploration_mask()).unwrap();
        assert!(z.z.data()[..10].iter().all(|&v| v == 0.0));
        assert!(z.z.data()[10..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gated_copy_vanishes_on_explored_cells() {
        let (h, w, ch) = (3, 4, 2);
        let mut input = vec![1.0f32; ch * h * w];
        input[CH_EXPLORED * h * w] = 1.0;
        for v in &mut input[CH_EXPLORED * h * w + 1..] {
            *v = 0.0;
        }
        let f = features(&input, ch, h, w, &[0]);
        assert_eq!(f.count, 4);
        assert_eq!(f.feature(0), f.feature(2).iter().map(|_| 1.0).collect::<Vec<_>>().as_slice());
        assert_eq!(f.feature(2)[0], 0.0);
        assert!(f.feature(2)[1..].iter().all(|&v| v == 1.0));
    }
}
