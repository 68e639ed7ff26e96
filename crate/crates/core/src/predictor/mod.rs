//! Dense prediction of where unseen target objects are.

pub mod checkpoint;
pub mod data;
pub mod explorer;
pub mod metrics;
pub mod model;
pub mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::grid::Grid;
use crate::mapping::{ExplorationMask, SemanticMap};

pub use model::{make_target, FeatureSpec, InputMode, PredictorModel};

/// The predictor runs on maps max-pooled by this factor.
pub const POOL: usize = 4;
/// Side of the egocentric window, meters.
pub const CROP_M: f64 = 6.0;

/// Per-cell probability for one target category.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub z: Grid<f64>,
    pub target: u8,
    /// Explored cells are zero.
    pub masked: bool,
}

/// Supervision `y`, category-major `C x h x w`, values 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTarget {
    pub categories: usize,
    pub h: usize,
    pub w: usize,
    pub y: Vec<u8>,
}

impl TrainingTarget {
    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.h * self.w;
        &self.y[c * n..(c + 1) * n]
    }
}

/// Source of target probability maps for the navigation agent.
pub trait TargetPredictor: Send + Sync {
    /// Probability map over `map`'s grid with explored cells zeroed.
    fn predict(&self, map: &SemanticMap, target: u8) -> ProbabilityMap;

    /// Number of `predict` calls so far.
    fn calls(&self) -> usize;
}

/// Runs a global-context model on the pooled map and spreads each pooled
/// cell's probability back over its block.
pub struct PooledPredictor {
    pub model: PredictorModel,
    pub factor: usize,
    calls: AtomicUsize,
}

impl PooledPredictor {
    pub fn new(model: PredictorModel) -> Self {
        Self {
            model,
            factor: POOL,
            calls: AtomicUsize::new(0),
        }
    }
}

impl TargetPredictor for PooledPredictor {
    fn predict(&self, map: &SemanticMap, target: u8) -> ProbabilityMap {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let pooled = map.pooled(self.factor);
        let coarse = self
            .model
            .infer(&pooled, target, &nothing_explored(&pooled))
            .expect("predictor and map channel counts agree");
        let pw = pooled.w();
        let mut z = Grid::new(map.h(), map.w(), 0.0);
        for idx in 0..map.cells() {
            if map.is_explored(idx) {
                continue;
            }
            let (r, c) = map.rc(idx);
            z[idx] = coarse.z[(r / self.factor) * pw + c / self.factor];
        }
        ProbabilityMap {
            z,
            target,
            masked: true,
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Constant probability everywhere unexplored; a sanity baseline.
pub struct UniformPredictor {
    pub value: f64,
    calls: AtomicUsize,
}

impl UniformPredictor {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            calls: AtomicUsize::new(0),
        }
    }
}

impl TargetPredictor for UniformPredictor {
    fn predict(&self, map: &SemanticMap, target: u8) -> ProbabilityMap {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let z = (0..map.cells())
            .map(|i| if map.is_explored(i) { 0.0 } else { self.value })
            .collect();
        ProbabilityMap {
            z: Grid::from_vec(map.h(), map.w(), z),
            target,
            masked: true,
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Mask with nothing explored, for when the caller masks at another
/// resolution.
fn nothing_explored(map: &SemanticMap) -> ExplorationMask {
    ExplorationMask(Grid::new(map.h(), map.w(), false))
}
