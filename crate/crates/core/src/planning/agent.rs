//! Per-episode controller tying goal selection, local planning and recovery
//! together.
//!
//! Every step the agent first checks whether a detected target is close and
//! visible in its own map and stops if so. A target cell only counts once
//! two scans have labelled it so; cells later seen more often as something
//! else are ignored altogether. Otherwise it walks toward its
//! long-term goal, which is refreshed every `replan_every` steps, when the
//! planner reports arrival, or when the goal cell becomes explored. Detected
//! targets that are not yet close take precedence over predicted goals.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::fmm::Fmm;
use super::goal::{frontier_goal_bounded, select_goal_bounded, GoalSelection};
use super::local::{target_in_view_where, LocalPlanner, Plan, PlannerParams, StuckDetector, Traversability};
use crate::error::Error;
use crate::grid::{angle_diff, disk_offsets, heading_vec};
use crate::mapping::{semantic_channel, SemanticMap, UpdateStats};
use crate::predictor::TargetPredictor;
use crate::world::{Action, AgentPose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    pub lambda: f64,
    pub use_distance_weighting: bool,
    pub replan_every: usize,
    /// Minimum goal distance for the frontier policy.
    pub frontier_clip_m: f64,
    pub stuck_window: usize,
    pub stuck_min_displacement: f64,
    /// Forward steps taken along the rotated heading during recovery.
    pub recovery_steps: usize,
    pub planner: PlannerParams,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            use_distance_weighting: true,
            replan_every: 10,
            frontier_clip_m: 3.0,
            stuck_window: 10,
            stuck_min_displacement: 0.05,
            recovery_steps: 3,
            planner: PlannerParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSource {
    Predicted,
    Frontier,
    /// Free cells next to a detected target.
    Approach,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlannerState {
    pub current_goal: Option<GoalSelection>,
    pub steps_since_replan: usize,
    pub stuck_counter: usize,
    pub recovery_active: bool,
}

#[derive(Clone, Copy, Debug)]
struct Recovery {
    heading: f64,
    steps_left: usize,
}

pub struct NavAgent<'a> {
    pub params: AgentParams,
    pub target: u8,
    predictor: Option<&'a dyn TargetPredictor>,
    pub state: PlannerState,
    trav: Option<Traversability>,
    planner: LocalPlanner,
    fmm: Fmm,
    goal_cells: Vec<usize>,
    goal_source: Option<GoalSource>,
    goal_key: u64,
    stuck: StuckDetector,
    recovery: Option<Recovery>,
    last_stuck_at: Option<(f64, f64)>,
    /// Step until which detected targets are ignored after an approach
    /// turned out unreachable.
    approach_blocked_until: usize,
    step: usize,
    approach_offsets: Vec<(isize, isize)>,
    /// Per-cell `(target hits, other labels)` over every scan so far.
    votes: HashMap<usize, (u32, u32)>,
}

impl<'a> NavAgent<'a> {
    /// `predictor = None` gives the frontier policy.
    pub fn new(params: AgentParams, target: u8, predictor: Option<&'a dyn TargetPredictor>) -> Self {
        let stuck = StuckDetector::new(params.stuck_window, params.stuck_min_displacement);
        Self {
            params,
            target,
            predictor,
            state: PlannerState::default(),
            trav: None,
            planner: LocalPlanner::new(),
            fmm: Fmm::new(),
            goal_cells: Vec::new(),
            goal_source: None,
            goal_key: 0,
            stuck,
            recovery: None,
            last_stuck_at: None,
            approach_blocked_until: 0,
            step: 0,
            approach_offsets: Vec::new(),
            votes: HashMap::new(),
        }
    }

    pub fn goal_source(&self) -> Option<GoalSource> {
        self.goal_source
    }

    /// Representative cell of the current goal.
    pub fn goal_cell(&self) -> Option<usize> {
        self.state.current_goal.map(|g| g.goal).or(self.goal_cells.first().copied())
    }

    /// Chooses the next action after `map` integrated the latest scan
    /// (`stats`). `collided` reports whether the previous forward step was
    /// blocked.
    pub fn act(&mut self, map: &mut SemanticMap, stats: &UpdateStats, pose: &AgentPose, collided: bool) -> Action {
        self.step += 1;
        let mut trav = match self.trav.take() {
            Some(t) => t,
            None => Traversability::from_map(map, self.params.planner.dilation_m),
        };
        for &(label, idx) in &stats.observed {
            let v = self.votes.entry(idx).or_default();
            if label == self.target {
                v.0 += 1;
            } else {
                v.1 += 1;
            }
        }
        let mut changed = Vec::new();
        for &idx in &stats.new_obstacles {
            trav.add_obstacle(idx, &mut changed);
        }
        if collided {
            self.inscribe_ahead(map, &mut trav, pose, &mut changed);
        }
        self.planner.notify_blocked(&changed);
        let action = self.decide(map, &mut trav, pose, collided);
        self.trav = Some(trav);
        action
    }

    fn inscribe_ahead(&mut self, map: &mut SemanticMap, trav: &mut Traversability, pose: &AgentPose, changed: &mut Vec<usize>) {
        let (dx, dy) = heading_vec(pose.theta);
        let reach = 0.09 + map.resolution;
        let Some(ahead) = map.cell_of(pose.x + dx * reach, pose.y + dy * reach) else {
            return;
        };
        if map.cell_of(pose.x, pose.y) != Some(ahead) && map.inscribe_obstacle(ahead) {
            trav.add_obstacle(ahead, changed);
        }
    }

    fn decide(&mut self, map: &mut SemanticMap, trav: &mut Traversability, pose: &AgentPose, collided: bool) -> Action {
        let params = self.params.planner.clone();
        if target_in_view_where(map, pose, self.target, params.stop_radius_m, |j| self.confirmed(map, j)).is_some() {
            return Action::Stop;
        }
        if let Some(rec) = self.recovery {
            if collided && rec.steps_left < self.params.recovery_steps {
                self.end_recovery();
            } else if let Some(a) = self.recovery_action(pose) {
                return self.forward_check(a, map, trav, pose);
            }
        }
        if let Some((x, y)) = self.last_stuck_at {
            if (pose.x - x).hypot(pose.y - y) > 0.5 {
                self.last_stuck_at = None;
                self.state.stuck_counter = 0;
            }
        }
        self.state.steps_since_replan += 1;
        if self.needs_refresh(map) {
            self.refresh_goal(map, trav, pose);
        }
        for attempt in 0..2 {
            if self.goal_cells.is_empty() {
                break;
            }
            match self.planner.plan(map, trav, pose, self.goal_key, &self.goal_cells, &params) {
                Ok(Plan::Act { action, .. }) => return self.forward_check(action, map, trav, pose),
                Ok(Plan::Reached) => {
                    if attempt == 1 {
                        break;
                    }
                    if self.goal_source == Some(GoalSource::Approach) {
                        // at the target but the map does not show it yet
                        return Action::TurnLeft;
                    }
                    self.refresh_goal(map, trav, pose);
                }
                Err(Error::GoalUnreachable) => {
                    if self.goal_source == Some(GoalSource::Approach) {
                        self.approach_blocked_until = self.step + 2 * self.params.replan_every;
                    }
                    self.refresh_goal(map, trav, pose);
                }
                Err(_) => break,
            }
        }
        Action::TurnLeft
    }

    fn needs_refresh(&self, map: &SemanticMap) -> bool {
        if self.goal_cells.is_empty() || self.state.steps_since_replan >= self.params.replan_every {
            return true;
        }
        match self.goal_source {
            Some(GoalSource::Approach) => !self.target_detected(map),
            // arrival at a target beats any predicted goal
            _ if self.step >= self.approach_blocked_until && self.target_detected(map) => true,
            _ => self.goal_cells.iter().all(|&g| map.is_explored(g)),
        }
    }

    fn target_detected(&self, map: &SemanticMap) -> bool {
        map.channel(semantic_channel(self.target))
            .iter()
            .enumerate()
            .any(|(j, &v)| v >= 0.5 && !self.contradicted(j))
    }

    /// Seen as the target in at least two hits around `idx`, and more often
    /// as the target than as anything else at `idx` itself.
    fn confirmed(&self, map: &SemanticMap, idx: usize) -> bool {
        let (r, c) = map.rc(idx);
        let mut hits = 0;
        for nr in r.saturating_sub(1)..(r + 2).min(map.h()) {
            for nc in c.saturating_sub(1)..(c + 2).min(map.w()) {
                hits += self.votes.get(&map.idx(nr, nc)).map_or(0, |v| v.0);
            }
        }
        let (h, m) = self.votes.get(&idx).copied().unwrap_or_default();
        hits >= 2 && h > m
    }

    fn contradicted(&self, idx: usize) -> bool {
        self.votes.get(&idx).is_some_and(|&(h, m)| m > 0 && m >= h)
    }

    fn set_goal(&mut self, cells: Vec<usize>, source: Option<GoalSource>, selection: Option<GoalSelection>) {
        // same cells keep the planner's cached field
        if cells != self.goal_cells {
            self.goal_key += 1;
        }
        self.goal_cells = cells;
        self.goal_source = source;
        self.state.current_goal = selection;
        self.state.steps_since_replan = 0;
    }

    fn refresh_goal(&mut self, map: &SemanticMap, trav: &mut Traversability, pose: &AgentPose) {
        let Some(agent) = map.cell_of(pose.x, pose.y) else {
            self.set_goal(Vec::new(), None, None);
            return;
        };
        if self.step >= self.approach_blocked_until {
            let cells = self.approach_cells(map, trav);
            if !cells.is_empty() {
                self.set_goal(cells, Some(GoalSource::Approach), None);
                return;
            }
        }
        let freed = trav.free_around(map, agent);
        let mut chosen = None;
        if let Some(predictor) = self.predictor {
            let z = predictor.predict(map, self.target);
            let lambda = if self.params.use_distance_weighting {
                self.params.lambda
            } else {
                f64::INFINITY
            };
            if let Some(sel) = select_goal_bounded(&z, trav.mask(), agent, map.resolution, lambda, &mut self.fmm) {
                chosen = Some((vec![sel.goal], GoalSource::Predicted, Some(sel)));
            }
        }
        if chosen.is_none() {
            chosen = frontier_goal_bounded(map, trav.mask(), agent, self.params.frontier_clip_m, &mut self.fmm)
                .map(|g| (vec![g], GoalSource::Frontier, None));
        }
        trav.restore(&freed);
        match chosen {
            Some((cells, source, sel)) => self.set_goal(cells, Some(source), sel),
            None => self.set_goal(Vec::new(), None, None),
        }
    }

    /// Traversable cells within the approach radius of a detected target.
    fn approach_cells(&mut self, map: &SemanticMap, trav: &Traversability) -> Vec<usize> {
        if self.approach_offsets.is_empty() {
            self.approach_offsets = disk_offsets(self.params.planner.approach_radius_m / map.resolution);
        }
        let ch = map.channel(semantic_channel(self.target));
        let mask = trav.mask();
        let mut seen = vec![false; map.cells()];
        let mut out = Vec::new();
        for (idx, &v) in ch.iter().enumerate() {
            if v < 0.5 || self.contradicted(idx) {
                continue;
            }
            let (r, c) = map.rc(idx);
            for &(dr, dc) in &self.approach_offsets {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= map.h() as isize || nc >= map.w() as isize {
                    continue;
                }
                let j = map.idx(nr as usize, nc as usize);
                if !seen[j] && mask[j] {
                    seen[j] = true;
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn recovery_action(&mut self, pose: &AgentPose) -> Option<Action> {
        let rec = self.recovery.as_mut()?;
        let err = angle_diff(pose.theta, rec.heading);
        if err.abs() > self.params.planner.heading_tolerance_deg {
            return Some(if err > 0.0 { Action::TurnLeft } else { Action::TurnRight });
        }
        if rec.steps_left > 0 {
            rec.steps_left -= 1;
            return Some(Action::MoveForward);
        }
        self.end_recovery();
        None
    }

    fn end_recovery(&mut self) {
        self.recovery = None;
        self.state.recovery_active = false;
        self.planner.invalidate();
        self.state.steps_since_replan = self.params.replan_every;
    }

    /// Feeds forward attempts to the stuck detector and starts recovery when
    /// it fires.
    fn forward_check(&mut self, action: Action, map: &mut SemanticMap, trav: &mut Traversability, pose: &AgentPose) -> Action {
        if action != Action::MoveForward || !self.stuck.record_forward(pose) {
            return action;
        }
        self.stuck.reset();
        self.state.stuck_counter += 1;
        self.last_stuck_at = Some((pose.x, pose.y));
        let mut changed = Vec::new();
        self.inscribe_ahead(map, trav, pose, &mut changed);
        self.planner.notify_blocked(&changed);
        self.planner.invalidate();
        self.recovery = Some(Recovery {
            heading: pose.theta + 90.0 * self.state.stuck_counter as f64,
            steps_left: self.params.recovery_steps,
        });
        self.state.recovery_active = true;
        self.recovery_action(pose).unwrap_or(Action::TurnLeft)
    }
}
