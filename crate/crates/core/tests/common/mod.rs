//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use objnav::grid::Grid;
use objnav::mapping::{SemanticMap, NUM_CHANNELS};
use objnav::predictor::{FeatureSpec, InputMode, PredictorModel, TrainingTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest ratio of an 8-connected path length to the straight-line
/// distance it approximates: `sqrt(4 - 2 sqrt 2)`.
pub fn octile_excess() -> f64 {
    (4.0 - 2.0 * std::f64::consts::SQRT_2).sqrt()
}

/// 8-connected Dijkstra in cell units; diagonal moves need both side cells
/// free.
pub fn dijkstra8(trav: &Grid<bool>, sources: &[usize]) -> Vec<f64> {
    let (h, w) = (trav.h(), trav.w());
    let mut d = vec![f64::INFINITY; h * w];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if trav[s] {
            d[s] = 0.0;
            heap.push(Reverse((0u64, s)));
        }
    }
    while let Some(Reverse((bits, i))) = heap.pop() {
        let di = f64::from_bits(bits);
        if di > d[i] {
            continue;
        }
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let free = |rr: isize, cc: isize| trav.get(rr, cc).copied().unwrap_or(false);
                if !free(r + dr, c + dc) {
                    continue;
                }
                let step = if dr != 0 && dc != 0 {
                    if !free(r + dr, c) || !free(r, c + dc) {
                        continue;
                    }
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let j = ((r + dr) as usize) * w + (c + dc) as usize;
                if di + step < d[j] {
                    d[j] = di + step;
                    heap.push(Reverse((d[j].to_bits(), j)));
                }
            }
        }
    }
    d
}

/// Scattered cells plus a few walls and boxes.
pub fn random_obstacles(h: usize, w: usize, rng: &mut impl Rng) -> Grid<bool> {
    let mut g = Grid::new(h, w, true);
    let p = rng.gen_range(0.02..0.2);
    for v in g.data_mut() {
        if rng.gen_bool(p) {
            *v = false;
        }
    }
    for _ in 0..rng.gen_range(2..8) {
        let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (rh, cw) = if rng.gen_bool(0.5) {
            (rng.gen_range(1..4), rng.gen_range(5..w / 2))
        } else {
            (rng.gen_range(5..h / 2), rng.gen_range(1..4))
        };
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                g[(r, c)] = false;
            }
        }
    }
    g
}

/// Worst per-component relative gap between the analytic gradient and
/// extrapolated central differences over `instances` random 8x8 maps with two
/// categories.
pub fn gradient_check(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let data: Vec<f32> = (0..NUM_CHANNELS * 64).map(|_| rng.gen::<f32>()).collect();
        let map = SemanticMap::from_data(NUM_CHANNELS, 8, 8, 0.2, data).unwrap();
        let y = TrainingTarget {
            categories: 2,
            h: 8,
            w: 8,
            y: (0..128).map(|_| rng.gen_bool(0.3) as u8).collect(),
        };
        let mut model = PredictorModel::zeros(FeatureSpec::new(InputMode::Global), NUM_CHANNELS, 2);
        for t in model.theta.iter_mut() {
            *t = rng.gen_range(-0.3..0.3);
        }
        let (_, grad) = model.loss_and_grad(&map, &y).unwrap();
        for k in 0..model.theta.len() {
            let t0 = model.theta[k];
            let mut central = |h: f64| {
                model.theta[k] = t0 + h;
                let up = model.loss(&map, &y).unwrap();
                model.theta[k] = t0 - h;
                let down = model.loss(&map, &y).unwrap();
                model.theta[k] = t0;
                (up - down) / (2.0 * h)
            };
            // Richardson step cancels the h^2 term, so h can stay large
            // enough for rounding not to dominate small components
            let (coarse, fine) = (central(2e-3), central(1e-3));
            let fd = (4.0 * fine - coarse) / 3.0;
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    worst
}
