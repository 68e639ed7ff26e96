//! Long-term goal selection.

use serde::{Deserialize, Serialize};

use super::fmm::{DistanceField, Fmm};
use crate::grid::Grid;
use crate::mapping::SemanticMap;
use crate::predictor::ProbabilityMap;

/// Above this, distance weighting is switched off entirely.
pub const LAMBDA_UNWEIGHTED: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSelection {
    pub goal: usize,
    pub score: f64,
    /// Geodesic distance to the goal in meters.
    pub distance: f64,
    pub lambda: f64,
}

/// `exp(-d / lambda)`; zero for unreachable cells and one for every
/// reachable cell once `lambda` reaches `LAMBDA_UNWEIGHTED`.
#[inline]
pub fn distance_weight(d: f64, lambda: f64) -> f64 {
    if !d.is_finite() {
        0.0
    } else if lambda >= LAMBDA_UNWEIGHTED {
        1.0
    } else {
        (-d / lambda).exp()
    }
}

#[inline]
fn better(score: f64, d: f64, idx: usize, best: &Option<GoalSelection>) -> bool {
    match best {
        None => score > 0.0,
        Some(b) => score > b.score || (score == b.score && (d < b.distance || (d == b.distance && idx < b.goal))),
    }
}

/// Cell maximising `exp(-d / lambda) * z`, ties going to the nearer cell and
/// then to the lower index. `None` when every score is zero.
pub fn select_goal(z: &ProbabilityMap, d: &DistanceField, lambda: f64) -> Option<GoalSelection> {
    let mut best = None;
    for (idx, (&p, &dist)) in z.z.data().iter().zip(d.d.data()).enumerate() {
        if p <= 0.0 {
            continue;
        }
        let score = distance_weight(dist, lambda) * p;
        if better(score, dist, idx, &best) {
            best = Some(GoalSelection {
                goal: idx,
                score,
                distance: dist,
                lambda,
            });
        }
    }
    best
}

/// Same result as [`select_goal`] over the field marched from `source`, but
/// stops marching once no farther cell can beat the best score so far.
pub fn select_goal_bounded(
    z: &ProbabilityMap,
    trav: &Grid<bool>,
    source: usize,
    resolution: f64,
    lambda: f64,
    fmm: &mut Fmm,
) -> Option<GoalSelection> {
    let zmax = z
        .z
        .data()
        .iter()
        .zip(trav.data())
        .filter(|(_, &t)| t)
        .map(|(&p, _)| p)
        .fold(0.0f64, f64::max);
    if zmax <= 0.0 {
        return None;
    }
    let mut best: Option<GoalSelection> = None;
    let zd = z.z.data();
    fmm.solve(trav, &[source], |idx, t| {
        let dist = t * resolution;
        // later cells are no nearer, so at best they tie and lose on distance
        if let Some(b) = &best {
            if distance_weight(dist, lambda) * zmax <= b.score {
                return false;
            }
        }
        let p = zd[idx];
        if p > 0.0 {
            let score = distance_weight(dist, lambda) * p;
            if better(score, dist, idx, &best) {
                best = Some(GoalSelection {
                    goal: idx,
                    score,
                    distance: dist,
                    lambda,
                });
            }
        }
        true
    });
    best
}

#[inline]
fn frontier_candidate(map: &SemanticMap, idx: usize) -> bool {
    !map.is_explored(idx) && !map.is_obstacle(idx)
}

/// Nearest unexplored free cell at least `clip_m` away; without one, the
/// farthest unexplored cell closer than that. `None` means nothing
/// unexplored is reachable.
pub fn frontier_goal(map: &SemanticMap, d: &DistanceField, clip_m: f64) -> Option<usize> {
    let mut near: Option<(f64, usize)> = None;
    let mut far: Option<(f64, usize)> = None;
    for (idx, &dist) in d.d.data().iter().enumerate() {
        if !dist.is_finite() || !frontier_candidate(map, idx) {
            continue;
        }
        if dist >= clip_m {
            if far.map_or(true, |(bd, _)| dist < bd) {
                far = Some((dist, idx));
            }
        } else if near.map_or(true, |(bd, _)| dist > bd) {
            near = Some((dist, idx));
        }
    }
    far.or(near).map(|(_, idx)| idx)
}

/// [`frontier_goal`] fused with the march from `source`.
pub fn frontier_goal_bounded(
    map: &SemanticMap,
    trav: &Grid<bool>,
    source: usize,
    clip_m: f64,
    fmm: &mut Fmm,
) -> Option<usize> {
    let res = map.resolution;
    let mut near: Option<(f64, usize)> = None;
    let mut found = None;
    fmm.solve(trav, &[source], |idx, t| {
        if !frontier_candidate(map, idx) {
            return true;
        }
        let dist = t * res;
        if dist >= clip_m {
            found = Some(idx);
            return false;
        }
        if near.map_or(true, |(bd, _)| dist > bd) {
            near = Some((dist, idx));
        }
        true
    });
    found.or(near.map(|(_, idx)| idx))
}
