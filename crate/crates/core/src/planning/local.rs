//! Short-horizon control: obstacle dilation, waypoint extraction along the
//! fast-marching field, the stop test, and the stuck detector.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::fmm::Fmm;
use crate::error::{Error, Result};
use crate::grid::{angle_diff, disk_offsets, sight_line, Grid};
use crate::mapping::{semantic_channel, SemanticMap};
use crate::world::{Action, AgentPose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub step_m: f64,
    pub heading_tolerance_deg: f64,
    /// Agent radius plus half a cell.
    pub dilation_m: f64,
    /// Radius within which a seen target triggers STOP.
    pub stop_radius_m: f64,
    /// Detected targets pull the goal to free cells this close to them.
    pub approach_radius_m: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            step_m: 0.25,
            heading_tolerance_deg: 15.0,
            dilation_m: 0.115,
            stop_radius_m: 1.0,
            approach_radius_m: 0.8,
        }
    }
}

/// Known obstacles dilated by a disk, maintained incrementally.
#[derive(Clone, Debug)]
pub struct Traversability {
    count: Vec<u16>,
    mask: Grid<bool>,
    offsets: Vec<(isize, isize)>,
}

impl Traversability {
    pub fn new(h: usize, w: usize, radius_cells: f64) -> Self {
        Self {
            count: vec![0; h * w],
            mask: Grid::new(h, w, true),
            offsets: disk_offsets(radius_cells),
        }
    }

    pub fn from_map(map: &SemanticMap, dilation_m: f64) -> Self {
        let mut t = Self::new(map.h(), map.w(), dilation_m / map.resolution);
        for idx in 0..map.cells() {
            if map.is_obstacle(idx) {
                t.add_obstacle(idx, &mut Vec::new());
            }
        }
        t
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    /// Temporarily clears the dilation band within two cells of `agent` so
    /// an agent squeezed against an obstacle can still be planned from.
    /// Returns the cells to hand back to [`Traversability::restore`].
    pub fn free_around(&mut self, map: &SemanticMap, agent: usize) -> Vec<usize> {
        let mut freed = Vec::new();
        if self.mask[agent] {
            return freed;
        }
        let (r, c) = map.rc(agent);
        for dr in -2isize..=2 {
            for dc in -2isize..=2 {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= map.h() as isize || nc >= map.w() as isize {
                    continue;
                }
                let j = map.idx(nr as usize, nc as usize);
                if !self.mask[j] && !map.is_obstacle(j) {
                    self.mask[j] = true;
                    freed.push(j);
                }
            }
        }
        freed
    }

    pub fn restore(&mut self, freed: &[usize]) {
        for &j in freed {
            self.mask[j] = false;
        }
    }

    /// Blocks the disk around `idx`; cells that just became untraversable
    /// are appended to `changed`.
    pub fn add_obstacle(&mut self, idx: usize, changed: &mut Vec<usize>) {
        let (h, w) = (self.mask.h() as isize, self.mask.w() as isize);
        let (r, c) = self.mask.rc(idx);
        for &(dr, dc) in &self.offsets {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h || nc >= w {
                continue;
            }
            let j = (nr * w + nc) as usize;
            if self.count[j] == 0 {
                self.mask[j] = false;
                changed.push(j);
            }
            self.count[j] = self.count[j].saturating_add(1);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Plan {
    /// The agent's cell is already part of the goal.
    Reached,
    Act { action: Action, waypoint: (f64, f64) },
}

/// Turn toward `target` or step forward once within tolerance.
pub fn steer(pose: &AgentPose, target: (f64, f64), tolerance_deg: f64) -> Action {
    let (dx, dy) = (target.0 - pose.x, target.1 - pose.y);
    if dx.hypot(dy) < 1e-9 {
        return Action::MoveForward;
    }
    let err = angle_diff(pose.theta, dy.atan2(dx).to_degrees());
    if err.abs() <= tolerance_deg {
        Action::MoveForward
    } else if err > 0.0 {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

/// Fast-marching planner that keeps the field from the goal while new
/// obstacles only appear farther out than the agent, or leave the descent
/// path from the agent and its neighbours untouched.
#[derive(Default)]
pub struct LocalPlanner {
    fmm: Fmm,
    goal_key: Option<u64>,
    valid_below: f64,
    /// Cells blocked since the field was last solved or checked.
    blocked: Vec<usize>,
    forced: bool,
    pub solves: usize,
}

impl LocalPlanner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forgets the cached field.
    pub fn invalidate(&mut self) {
        self.goal_key = None;
    }

    /// Records cells that stopped being traversable.
    pub fn notify_blocked(&mut self, cells: &[usize]) {
        if self.goal_key.is_none() {
            return;
        }
        let values = self.fmm.values();
        for &c in cells {
            if c < values.len() {
                self.valid_below = self.valid_below.min(values[c]);
                self.blocked.push(c);
            }
        }
    }

    /// Next action toward the goal set identified by `goal_key`.
    pub fn plan(
        &mut self,
        map: &SemanticMap,
        trav: &mut Traversability,
        pose: &AgentPose,
        goal_key: u64,
        goal: &[usize],
        params: &PlannerParams,
    ) -> Result<Plan> {
        let agent = map
            .cell_of(pose.x, pose.y)
            .ok_or(Error::PoseOutOfBounds { x: pose.x, y: pose.y })?;
        let agent_free = trav.mask[agent];
        let cached = self.goal_key == Some(goal_key)
            && !self.forced
            && agent_free
            && agent < self.fmm.values().len()
            && self.fmm.is_accepted(agent);
        let mut reuse = cached && self.fmm.values()[agent] < self.valid_below;
        if cached && !reuse && self.path_clear(map, agent) {
            reuse = true;
        }
        if reuse {
            self.valid_below = f64::INFINITY;
            self.blocked.clear();
        }
        if !reuse {
            // squeeze out of a dilated band for this solve only
            let restore = trav.free_around(map, agent);
            self.solves += 1;
            self.fmm.solve(&trav.mask, goal, |i, _| i != agent);
            trav.restore(&restore);
            self.forced = !restore.is_empty();
            self.goal_key = Some(goal_key);
            self.valid_below = f64::INFINITY;
            self.blocked.clear();
            if !self.fmm.is_accepted(agent) {
                self.goal_key = None;
                return Err(Error::GoalUnreachable);
            }
        }
        let values = self.fmm.values();
        if values[agent] == 0.0 {
            return Ok(Plan::Reached);
        }
        let mut cur = agent;
        while let Some(next) = self.descend(map, cur) {
            cur = next;
            let (x, y) = map.cell_center(cur);
            if (x - pose.x).hypot(y - pose.y) >= params.step_m || values[cur] == 0.0 {
                break;
            }
        }
        let waypoint = map.cell_center(cur);
        Ok(Plan::Act {
            action: steer(pose, waypoint, params.heading_tolerance_deg),
            waypoint,
        })
    }
}

impl LocalPlanner {
    /// Steepest 8-connected descent from `cur`, never cutting corners.
    fn descend(&self, map: &SemanticMap, cur: usize) -> Option<usize> {
        let values = self.fmm.values();
        let (h, w) = (map.h() as isize, map.w() as isize);
        let (r, c) = map.rc(cur);
        let mut next = None;
        let mut best = values[cur];
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h || nc >= w {
                continue;
            }
            let j = (nr * w + nc) as usize;
            if !self.fmm.is_accepted(j) {
                continue;
            }
            if dr != 0 && dc != 0 {
                let a = map.idx(r, nc as usize);
                let b = map.idx(nr as usize, c);
                if !self.fmm.is_accepted(a) || !self.fmm.is_accepted(b) {
                    continue;
                }
            }
            if values[j] < best {
                best = values[j];
                next = Some(j);
            }
        }
        next
    }

    /// Whether the descent path from `agent` to the goal keeps clear of
    /// every cell blocked since the last check, diagonal neighbours included.
    fn path_clear(&self, map: &SemanticMap, agent: usize) -> bool {
        let w = map.w();
        let blocked: HashSet<(usize, usize)> = self.blocked.iter().map(|&b| (b / w, b % w)).collect();
        let mut cur = agent;
        loop {
            let (r, c) = map.rc(cur);
            for nr in r.saturating_sub(1)..=r + 1 {
                for nc in c.saturating_sub(1)..=c + 1 {
                    if blocked.contains(&(nr, nc)) {
                        return false;
                    }
                }
            }
            if self.fmm.values()[cur] == 0.0 {
                return true;
            }
            match self.descend(map, cur) {
                Some(next) => cur = next,
                None => return false,
            }
        }
    }
}

/// One-shot planning step: dilates the map's obstacles, marches from the goal
/// cells and returns the action toward the waypoint one step ahead, or STOP
/// when a detected `target` cell is close and visible.
pub fn plan_step(
    map: &SemanticMap,
    pose: &AgentPose,
    goal: &[usize],
    target: u8,
    params: &PlannerParams,
) -> Result<Action> {
    if target_in_view(map, pose, target, params.stop_radius_m).is_some() {
        return Ok(Action::Stop);
    }
    let mut trav = Traversability::from_map(map, params.dilation_m);
    match LocalPlanner::new().plan(map, &mut trav, pose, 0, goal, params)? {
        Plan::Reached => Ok(Action::TurnLeft),
        Plan::Act { action, .. } => Ok(action),
    }
}

/// Whether the straight line from `pose` to `cell` crosses only explored
/// free cells before entering `cell`. Traced in the same frame as the
/// ground-truth visibility test.
pub fn map_sight(map: &SemanticMap, pose: &AgentPose, cell: usize) -> bool {
    let res = map.resolution;
    let (or, oc) = map.offset;
    let (r, c) = map.rc(cell);
    let (tr, tc) = (r as isize - or, c as isize - oc);
    let (h, w) = (map.h() as isize, map.w() as isize);
    let to_map = |rr: isize, cc: isize| {
        let (mr, mc) = (rr + or, cc + oc);
        (mr >= 0 && mc >= 0 && mr < h && mc < w).then(|| (mr * w + mc) as usize)
    };
    sight_line(
        (pose.x / res, pose.y / res),
        (tr, tc),
        |rr, cc| to_map(rr, cc).is_some_and(|j| map.is_explored(j) && !map.is_obstacle(j)),
        |rr, cc| (rr, cc) == (tr, tc),
    )
}

/// A detected `target` cell within `radius` with a clear line of sight, if
/// any; the nearest such cell.
pub fn target_in_view(map: &SemanticMap, pose: &AgentPose, target: u8, radius: f64) -> Option<usize> {
    target_in_view_where(map, pose, target, radius, |_| true)
}

/// [`target_in_view`] restricted to target cells passing `accept`.
pub fn target_in_view_where(
    map: &SemanticMap,
    pose: &AgentPose,
    target: u8,
    radius: f64,
    accept: impl Fn(usize) -> bool,
) -> Option<usize> {
    let ch = map.channel(semantic_channel(target));
    let res = map.resolution;
    let k = (radius / res).ceil() as isize + 1;
    let centre = map.cell_of(pose.x, pose.y)?;
    let (r0, c0) = map.rc(centre);
    let mut cands = Vec::new();
    for dr in -k..=k {
        for dc in -k..=k {
            let (r, c) = (r0 as isize + dr, c0 as isize + dc);
            if r < 0 || c < 0 || r >= map.h() as isize || c >= map.w() as isize {
                continue;
            }
            let j = map.idx(r as usize, c as usize);
            if ch[j] < 0.5 || !accept(j) {
                continue;
            }
            let (x, y) = map.cell_center(j);
            let d = (x - pose.x).hypot(y - pose.y);
            if d <= radius {
                cands.push((d, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.into_iter().find(|&(_, j)| map_sight(map, pose, j)).map(|(_, j)| j)
}

/// Detects lack of progress over the last few forward attempts.
#[derive(Clone, Debug)]
pub struct StuckDetector {
    window: usize,
    min_displacement: f64,
    history: std::collections::VecDeque<(f64, f64)>,
}

impl StuckDetector {
    pub fn new(window: usize, min_displacement: f64) -> Self {
        Self {
            window,
            min_displacement,
            history: Default::default(),
        }
    }

    /// Records the pose before a MOVE_FORWARD attempt and reports whether
    /// the agent moved less than the threshold over the whole window.
    pub fn record_forward(&mut self, pose: &AgentPose) -> bool {
        self.history.push_back((pose.x, pose.y));
        if self.history.len() > self.window + 1 {
            self.history.pop_front();
        }
        if self.history.len() <= self.window {
            return false;
        }
        let (x0, y0) = self.history[0];
        (pose.x - x0).hypot(pose.y - y0) < self.min_displacement
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}
