//! Exploration policies used to collect training maps.
//!
//! The frontier explorer sees only its own map. It plans on a coarse grid
//! (the map max-pooled by `POOL`) with 8-connected Dijkstra, heads for a
//! randomly chosen nearby unexplored cell, and keeps that goal for a bounded
//! number of steps.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::POOL;
use crate::grid::{heading_vec, Grid};
use crate::mapping::{SemanticMap, CH_EXPLORED, CH_OBSTACLE};
use crate::planning::local::steer;
use crate::world::{Action, AgentPose};

/// A terminating per-step policy over the agent's own map.
pub trait ExplorerPolicy {
    /// Chooses the next action. `collided` reports whether the previous
    /// forward step was blocked; the policy may write to `map` to remember
    /// what it bumped into.
    fn act(&mut self, map: &mut SemanticMap, pose: &AgentPose, collided: bool, rng: &mut dyn rand::RngCore) -> Action;
}

#[derive(Clone, Debug)]
pub struct FrontierExplorer {
    pub factor: usize,
    /// Goals closer than this are skipped when anything farther exists.
    pub min_goal_m: f64,
    /// A goal is dropped after this many steps.
    pub max_goal_age: usize,
    /// Random pick among this many nearest candidates.
    pub choices: usize,
    goal: Option<usize>,
    goal_age: usize,
    field: Vec<f64>,
    field_valid: bool,
    coarse: Option<Coarse>,
    collisions: usize,
    /// Coarse cells the agent bumped into.
    bumped: Vec<bool>,
    escape: Vec<Action>,
}

impl Default for FrontierExplorer {
    fn default() -> Self {
        Self {
            factor: POOL,
            min_goal_m: 1.0,
            max_goal_age: 25,
            choices: 8,
            goal: None,
            goal_age: 0,
            field: Vec::new(),
            field_valid: false,
            coarse: None,
            collisions: 0,
            bumped: Vec::new(),
            escape: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
struct Coarse {
    h: usize,
    w: usize,
    res: f64,
    obstacle: Vec<bool>,
    explored: Vec<bool>,
}

impl Coarse {
    fn empty(map: &SemanticMap, factor: usize) -> Self {
        let h = map.h().div_ceil(factor);
        let w = map.w().div_ceil(factor);
        Self {
            h,
            w,
            res: map.resolution * factor as f64,
            obstacle: vec![false; h * w],
            explored: vec![false; h * w],
        }
    }

    /// Re-pools blocks with rows `r0..r1` and columns `c0..c1` (coarse).
    /// Appends blocks that became obstacles to `blocked`.
    fn refresh(&mut self, map: &SemanticMap, factor: usize, rows: (usize, usize), cols: (usize, usize), blocked: &mut Vec<usize>) {
        let obs = map.channel(CH_OBSTACLE);
        let exp = map.channel(CH_EXPLORED);
        for br in rows.0..rows.1.min(self.h) {
            for bc in cols.0..cols.1.min(self.w) {
                let (mut o, mut e) = (false, false);
                for r in br * factor..((br + 1) * factor).min(map.h()) {
                    let row = r * map.w();
                    for c in bc * factor..((bc + 1) * factor).min(map.w()) {
                        o |= obs[row + c] >= 0.5;
                        e |= exp[row + c] >= 0.5;
                    }
                }
                let j = br * self.w + bc;
                if o && !self.obstacle[j] {
                    blocked.push(j);
                }
                self.obstacle[j] = o;
                self.explored[j] = e;
            }
        }
    }

    /// Block centre, pulled inside the map for partial edge blocks.
    fn center(&self, map: &SemanticMap, j: usize) -> (f64, f64) {
        let (r, c) = (j / self.w, j % self.w);
        let (ox, oy) = map.origin();
        let xmax = ox + map.w() as f64 * map.resolution - 1e-6;
        let ymax = oy + map.h() as f64 * map.resolution - 1e-6;
        (
            (ox + (c as f64 + 0.5) * self.res).min(xmax),
            (oy + (r as f64 + 0.5) * self.res).min(ymax),
        )
    }
}

/// 8-connected Dijkstra without corner cutting over cells with `free[j]`.
fn dijkstra(h: usize, w: usize, sources: &[usize], free: &[bool], out: &mut Vec<f64>) {
    out.clear();
    out.resize(h * w, f64::INFINITY);
    let mut heap = BinaryHeap::new();
    for &s in sources {
        out[s] = 0.0;
        heap.push(Reverse((0u64, s)));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    while let Some(Reverse((bits, i))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > out[i] {
            continue;
        }
        let (r, c) = (i / w, i % w);
        let (up, down, left, right) = (r > 0, r + 1 < h, c > 0, c + 1 < w);
        let mut relax = |j: usize, step: f64| {
            let nd = d + step;
            if nd < out[j] {
                out[j] = nd;
                heap.push(Reverse((nd.to_bits(), j)));
            }
        };
        let fu = up && free[i - w];
        let fd = down && free[i + w];
        let fl = left && free[i - 1];
        let fr = right && free[i + 1];
        if fu {
            relax(i - w, 1.0);
        }
        if fd {
            relax(i + w, 1.0);
        }
        if fl {
            relax(i - 1, 1.0);
        }
        if fr {
            relax(i + 1, 1.0);
        }
        if fu && fl && free[i - w - 1] {
            relax(i - w - 1, sqrt2);
        }
        if fu && fr && free[i - w + 1] {
            relax(i - w + 1, sqrt2);
        }
        if fd && fl && free[i + w - 1] {
            relax(i + w - 1, sqrt2);
        }
        if fd && fr && free[i + w + 1] {
            relax(i + w + 1, sqrt2);
        }
    }
}

impl FrontierExplorer {
    fn coarse_cell(&self, map: &SemanticMap, pose: &AgentPose) -> Option<usize> {
        let idx = map.cell_of(pose.x, pose.y)?;
        let (r, c) = map.rc(idx);
        let w = map.w().div_ceil(self.factor);
        Some((r / self.factor) * w + c / self.factor)
    }

    fn pick_goal(&mut self, coarse: &Coarse, agent: usize, rng: &mut dyn rand::RngCore) -> Option<usize> {
        let mut dist = Vec::new();
        dijkstra(coarse.h, coarse.w, &[agent], &self.free_mask(coarse, agent), &mut dist);
        let mut cands: Vec<(f64, usize)> = (0..dist.len())
            .filter(|&j| j != agent && dist[j].is_finite() && !coarse.explored[j])
            .map(|j| (dist[j] * coarse.res, j))
            .collect();
        if cands.is_empty() {
            return None;
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let start = cands.iter().position(|c| c.0 >= self.min_goal_m).unwrap_or(0);
        let pool = &cands[start..(start + self.choices).min(cands.len())];
        Some(pool[rng.gen_range(0..pool.len())].1)
    }
}

impl FrontierExplorer {
    fn free(&self, coarse: &Coarse, agent: usize, j: usize) -> bool {
        j == agent || !(coarse.obstacle[j] || self.bumped[j])
    }

    fn free_mask(&self, coarse: &Coarse, agent: usize) -> Vec<bool> {
        (0..coarse.obstacle.len()).map(|j| self.free(coarse, agent, j)).collect()
    }
}

impl ExplorerPolicy for FrontierExplorer {
    fn act(&mut self, map: &mut SemanticMap, pose: &AgentPose, collided: bool, rng: &mut dyn rand::RngCore) -> Action {
        let Some(agent) = self.coarse_cell(map, pose) else {
            return Action::TurnLeft;
        };
        let mut coarse = match self.coarse.take() {
            Some(c) => c,
            None => {
                let mut c = Coarse::empty(map, self.factor);
                let (h, w) = (c.h, c.w);
                map.take_dirty();
                c.refresh(map, self.factor, (0, h), (0, w), &mut Vec::new());
                self.bumped = vec![false; h * w];
                c
            }
        };
        if collided {
            self.collisions += 1;
            let (dx, dy) = heading_vec(pose.theta);
            let reach = 0.09 + map.resolution;
            if let Some(ahead) = map.cell_of(pose.x + dx * reach, pose.y + dy * reach) {
                map.inscribe_obstacle(ahead);
            }
            let probe = AgentPose::new(pose.x + dx * 0.25, pose.y + dy * 0.25, pose.theta);
            if let Some(j) = self.coarse_cell(map, &probe).filter(|&j| j != agent) {
                self.bumped[j] = true;
            }
            self.field_valid = false;
            if self.collisions >= 3 {
                self.collisions = 0;
                self.goal = None;
                let turn = if rng.gen_bool(0.5) { Action::TurnLeft } else { Action::TurnRight };
                let k = rng.gen_range(1..=6);
                self.escape = vec![Action::MoveForward, Action::MoveForward];
                self.escape.extend(std::iter::repeat(turn).take(k));
            }
        } else {
            self.collisions = 0;
        }
        if let Some((r0, r1, c0, c1)) = map.take_dirty() {
            let f = self.factor;
            let mut blocked = Vec::new();
            coarse.refresh(map, f, (r0 / f, r1 / f + 1), (c0 / f, c1 / f + 1), &mut blocked);
            // Descent from the agent only visits smaller values.
            if self.field_valid && blocked.iter().any(|&j| self.field[j] < self.field[agent]) {
                self.field_valid = false;
            }
        }
        let action = self.choose(&coarse, map, pose, agent, rng);
        self.coarse = Some(coarse);
        action
    }
}

impl FrontierExplorer {
    fn choose(&mut self, coarse: &Coarse, map: &SemanticMap, pose: &AgentPose, agent: usize, rng: &mut dyn rand::RngCore) -> Action {
        if let Some(a) = self.escape.pop() {
            return a;
        }
        self.goal_age += 1;
        let stale = match self.goal {
            None => true,
            Some(g) => g == agent || coarse.explored[g] || !self.free(coarse, agent, g) || self.goal_age > self.max_goal_age,
        };
        if stale {
            self.goal = self.pick_goal(coarse, agent, rng);
            self.goal_age = 0;
            self.field_valid = false;
        }
        let Some(goal) = self.goal else {
            return Action::TurnLeft;
        };
        for attempt in 0..2 {
            if !self.field_valid || attempt == 1 {
                let mut field = std::mem::take(&mut self.field);
                dijkstra(coarse.h, coarse.w, &[goal], &self.free_mask(coarse, agent), &mut field);
                self.field = field;
                self.field_valid = true;
            }
            if !self.field[agent].is_finite() {
                continue;
            }
            let (r, c) = ((agent / coarse.w) as isize, (agent % coarse.w) as isize);
            let mut next = agent;
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= coarse.h as isize || nc >= coarse.w as isize {
                    continue;
                }
                let j = (nr * coarse.w as isize + nc) as usize;
                if self.free(coarse, agent, j) && self.field[j] < self.field[next] {
                    next = j;
                }
            }
            if next == agent && goal != agent {
                continue;
            }
            return steer(pose, coarse.center(map, next), 15.0);
        }
        self.goal = None;
        Action::TurnLeft
    }
}

/// Coarse grid helper exposed for tests.
pub fn coarse_explored(map: &SemanticMap, factor: usize) -> Grid<bool> {
    let mut c = Coarse::empty(map, factor);
    let (h, w) = (c.h, c.w);
    c.refresh(map, factor, (0, h), (0, w), &mut Vec::new());
    Grid::from_vec(c.h, c.w, c.explored)
}
