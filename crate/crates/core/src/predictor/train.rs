//! Mini-batch Adam training with polynomial learning-rate decay.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FeatureSpec, PredictorModel};
use super::TrainingTarget;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mapping::SemanticMap;

/// Indexed access to `(input, target)` pairs.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;

    fn example(&self, i: usize) -> Result<(SemanticMap, TrainingTarget)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Exponent of the polynomial decay `lr * (1 - t / T)^power`.
    pub poly_power: f64,
    pub seed: u64,
    pub augment: bool,
    /// Smallest random crop, as a fraction of each side.
    pub min_crop: f64,
    pub val_every: usize,
    pub val_subset: usize,
    /// Start each bias at the logit of the category's training base rate.
    pub prior_bias_init: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            iterations: 1500,
            batch_size: 8,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            poly_power: 0.9,
            seed: 0,
            augment: true,
            min_crop: 0.75,
            val_every: 100,
            val_subset: 512,
            prior_bias_init: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per iteration.
    pub train_loss: Vec<f64>,
    /// `(iteration, validation loss)`; iteration 0 is before any update.
    pub val_loss: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
}

/// Joint geometric augmentation of an input map and its target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    /// Quarter turns counter-clockwise.
    pub rot: usize,
    pub flip: bool,
    /// Kept window `(r0, c0, h, w)` in the rotated frame; the rest is zeroed.
    pub window: Option<(usize, usize, usize, usize)>,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        rot: 0,
        flip: false,
        window: None,
    };

    pub fn sample(h: usize, w: usize, min_crop: f64, rng: &mut impl Rng) -> Self {
        let rot = rng.gen_range(0..4);
        let flip = rng.gen_bool(0.5);
        let (h, w) = if rot % 2 == 1 { (w, h) } else { (h, w) };
        let frac = rng.gen_range(min_crop.min(1.0)..=1.0);
        let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
        let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
        let r0 = rng.gen_range(0..=h - ch);
        let c0 = rng.gen_range(0..=w - cw);
        Self {
            rot,
            flip,
            window: Some((r0, c0, ch, cw)),
        }
    }

    fn grid<T: Copy + Default>(&self, g: Grid<T>) -> Grid<T> {
        let mut g = g.rot90_k(self.rot);
        if self.flip {
            g = g.flip();
        }
        if let Some((r0, c0, ch, cw)) = self.window {
            let (h, w) = (g.h(), g.w());
            for r in 0..h {
                for c in 0..w {
                    if r < r0 || r >= r0 + ch || c < c0 || c >= c0 + cw {
                        g[(r, c)] = T::default();
                    }
                }
            }
        }
        g
    }

    pub fn apply(&self, map: &SemanticMap, y: &TrainingTarget) -> Result<(SemanticMap, TrainingTarget)> {
        let (h, w) = (map.h(), map.w());
        let n = h * w;
        let mut data = Vec::with_capacity(map.data().len());
        for k in 0..map.channels() {
            data.extend(self.grid(Grid::from_vec(h, w, map.channel(k).to_vec())).into_vec());
        }
        let (nh, nw) = if self.rot % 2 == 1 { (w, h) } else { (h, w) };
        let out = SemanticMap::from_data(map.channels(), nh, nw, map.resolution, data)?;
        let mut ty = Vec::with_capacity(y.y.len());
        for c in 0..y.categories {
            ty.extend(self.grid(Grid::from_vec(h, w, y.y[c * n..(c + 1) * n].to_vec())).into_vec());
        }
        Ok((
            out,
            TrainingTarget {
                categories: y.categories,
                h: nh,
                w: nw,
                y: ty,
            },
        ))
    }
}

/// Fraction of positive target cells per category over (up to `limit`
/// evenly spaced) examples.
pub fn base_rates(source: &dyn ExampleSource, categories: usize, limit: usize) -> Result<Vec<f64>> {
    let idx = spread(source.len(), limit);
    let counts = idx
        .par_iter()
        .map(|&i| {
            let (_, y) = source.example(i)?;
            let n = y.h * y.w;
            Ok((0..categories)
                .map(|c| {
                    let ones = y.channel(c).iter().filter(|&&v| v == 1).count();
                    (ones as f64, n as f64)
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rates = vec![0.0; categories];
    for c in 0..categories {
        let (ones, total) = counts.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v[c].0, acc.1 + v[c].1));
        rates[c] = if total > 0.0 { ones / total } else { 0.0 };
    }
    Ok(rates)
}

/// Mean BCE of predicting the constant `rates[c]` for category `c`.
pub fn constant_loss(source: &dyn ExampleSource, rates: &[f64], limit: usize) -> Result<f64> {
    use super::model::CLAMP_EPS;
    let idx = spread(source.len(), limit);
    let parts = idx
        .par_iter()
        .map(|&i| {
            let (_, y) = source.example(i)?;
            let n = (y.h * y.w) as f64;
            let mut loss = 0.0;
            for (c, &p) in rates.iter().enumerate() {
                let p = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                let ones = y.channel(c).iter().filter(|&&v| v == 1).count() as f64;
                loss -= ones * p.ln() + (n - ones) * (1.0 - p).ln();
            }
            Ok(loss / (rates.len() as f64 * n))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / parts.len().max(1) as f64)
}

/// Mean per-example loss of `model` on (up to `limit` of) `source`.
pub fn mean_loss(model: &PredictorModel, source: &dyn ExampleSource, limit: usize) -> Result<f64> {
    let idx = spread(source.len(), limit);
    let parts = idx
        .par_iter()
        .map(|&i| {
            let (m, y) = source.example(i)?;
            model.loss(&m, &y)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / parts.len().max(1) as f64)
}

/// `limit` evenly spaced indices of `0..n`, or all of them.
fn spread(n: usize, limit: usize) -> Vec<usize> {
    if limit == 0 || n <= limit {
        return (0..n).collect();
    }
    (0..limit).map(|k| k * n / limit).collect()
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Trains a model from scratch and returns the parameters with the lowest
/// validation loss.
pub fn train(
    spec: FeatureSpec,
    channels: usize,
    categories: usize,
    train_set: &dyn ExampleSource,
    val_set: &dyn ExampleSource,
    params: &TrainParams,
) -> Result<(PredictorModel, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation split".into()));
    }
    let mut model = PredictorModel::zeros(spec, channels, categories);
    if params.prior_bias_init {
        let rates = base_rates(train_set, categories, params.val_subset)?;
        for (c, &p) in rates.iter().enumerate() {
            *model.bias_mut(c) = logit(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let np = model.param_count();
    let (mut m1, mut m2) = (vec![0.0; np], vec![0.0; np]);
    let mut report = TrainReport::default();
    let v0 = mean_loss(&model, val_set, params.val_subset)?;
    report.val_loss.push((0, v0));
    report.best_val_loss = v0;
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    for t in 1..=params.iterations {
        let mut batch = Vec::with_capacity(params.batch_size);
        for _ in 0..params.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let augs: Vec<Option<u64>> = batch
            .iter()
            .map(|_| params.augment.then(|| rng.gen::<u64>()))
            .collect();
        let parts = batch
            .par_iter()
            .zip(augs.par_iter())
            .map(|(&i, aug)| {
                let (m, y) = train_set.example(i)?;
                let (m, y) = match aug {
                    Some(seed) => {
                        let mut r = ChaCha8Rng::seed_from_u64(*seed);
                        Augmentation::sample(m.h(), m.w(), params.min_crop, &mut r).apply(&m, &y)?
                    }
                    None => (m, y),
                };
                model.loss_and_grad(&m, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        let b = parts.len() as f64;
        let mut grad = vec![0.0; np];
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l / b;
            for (a, v) in grad.iter_mut().zip(g) {
                *a += v / b;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iter: t, loss });
        }
        report.train_loss.push(loss);

        let lr = params.lr * (1.0 - (t - 1) as f64 / params.iterations as f64).powf(params.poly_power);
        let bc1 = 1.0 - params.beta1.powi(t as i32);
        let bc2 = 1.0 - params.beta2.powi(t as i32);
        for k in 0..np {
            m1[k] = params.beta1 * m1[k] + (1.0 - params.beta1) * grad[k];
            m2[k] = params.beta2 * m2[k] + (1.0 - params.beta2) * grad[k] * grad[k];
            model.theta[k] -= lr * (m1[k] / bc1) / ((m2[k] / bc2).sqrt() + params.adam_eps);
        }

        if t % params.val_every.max(1) == 0 || t == params.iterations {
            let v = mean_loss(&model, val_set, params.val_subset)?;
            if !v.is_finite() {
                return Err(Error::Diverged { iter: t, loss: v });
            }
            report.val_loss.push((t, v));
            if v < report.best_val_loss {
                report.best_val_loss = v;
                report.best_iteration = t;
                best = model.clone();
            }
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{semantic_channel, CH_EXPLORED};
    use crate::predictor::model::InputMode;

    struct Toy(Vec<(SemanticMap, TrainingTarget)>);

    impl ExampleSource for Toy {
        fn len(&self) -> usize {
            self.0.len()
        }

        fn example(&self, i: usize) -> Result<(SemanticMap, TrainingTarget)> {
            Ok(self.0[i].clone())
        }
    }

    /// Targets sit next to bed cells in the unexplored half.
    fn toy(seed: u64, n: usize) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 16);
        let items = (0..n)
            .map(|_| {
                let mut m = SemanticMap::new(13, h, w, 0.2, (0, 0));
                let mut y = vec![0u8; 6 * h * w];
                for r in 0..h {
                    for c in 0..w / 2 {
                        m.channel_mut(CH_EXPLORED)[r * w + c] = 1.0;
                    }
                }
                let r = rng.gen_range(2..h - 2);
                let c = rng.gen_range(4..w / 2);
                m.channel_mut(semantic_channel(2))[r * w + c] = 1.0;
                for dc in 1..=4 {
                    if c + dc >= w / 2 {
                        y[r * w + c + dc] = 1;
                    }
                }
                (m, TrainingTarget { categories: 6, h, w, y })
            })
            .collect();
        Toy(items)
    }

    #[test]
    fn augmentation_keeps_map_and_target_aligned() {
        let set = toy(1, 1);
        let (m, y) = &set.0[0];
        let aug = Augmentation {
            rot: 1,
            flip: true,
            window: None,
        };
        let (am, ay) = aug.apply(m, y).unwrap();
        let bed = |mm: &SemanticMap| mm.channel(semantic_channel(2)).iter().position(|&v| v > 0.0).unwrap();
        let (r, c) = am.rc(bed(&am));
        let (r0, c0) = m.rc(bed(m));
        let ones: Vec<usize> = ay.channel(0).iter().enumerate().filter(|x| *x.1 == 1).map(|x| x.0).collect();
        let orig: usize = y.channel(0).iter().filter(|&&v| v == 1).count();
        assert_eq!(ones.len(), orig);
        for o in ones {
            let (or, oc) = am.rc(o);
            assert_eq!(oc, c, "target stays in the bed's column after a quarter turn");
            assert!(or != r);
        }
        assert_ne!((r, c), (r0, c0));
    }

    #[test]
    fn loss_is_invariant_under_quarter_turns() {
        let set = toy(2, 1);
        let (m, y) = &set.0[0];
        let mut model = PredictorModel::zeros(FeatureSpec::new(InputMode::Global), 13, 6);
        for (i, v) in model.theta.iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.01;
        }
        let base = model.loss(m, y).unwrap();
        for rot in 1..4 {
            let (am, ay) = Augmentation { rot, flip: rot == 2, window: None }.apply(m, y).unwrap();
            assert!((model.loss(&am, &ay).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn training_beats_the_constant_baseline_and_is_deterministic() {
        let (tr, va) = (toy(3, 64), toy(4, 16));
        let params = TrainParams {
            iterations: 300,
            lr: 2e-2,
            val_every: 50,
            augment: false,
            ..TrainParams::default()
        };
        let spec = FeatureSpec::new(InputMode::Global);
        let (model, report) = train(spec.clone(), 13, 6, &tr, &va, &params).unwrap();
        let rates = base_rates(&tr, 6, 0).unwrap();
        let baseline = constant_loss(&va, &rates, 0).unwrap();
        assert!(report.best_val_loss < 0.9 * baseline, "{} vs {baseline}", report.best_val_loss);
        assert!(report.train_loss.iter().all(|l| l.is_finite()));
        let (again, _) = train(spec, 13, 6, &tr, &va, &params).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn empty_split_is_rejected() {
        let spec = FeatureSpec::new(InputMode::Global);
        let err = train(spec, 13, 6, &Toy(vec![]), &toy(0, 1), &TrainParams::default());
        assert!(matches!(err, Err(Error::EmptyDataset(_))));
    }
}
