use serde::{Deserialize, Serialize};

use super::scene::GroundTruthScene;
use crate::error::{Error, Result};
use crate::grid::{heading_vec, sight_line};

/// Continuous allocentric pose; `theta` in degrees, `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: theta.rem_euclid(360.0),
        }
    }

    pub fn dist(&self, other: &AgentPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub step_m: f64,
    pub turn_deg: f64,
    pub body_radius_m: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            step_m: 0.25,
            turn_deg: 30.0,
            body_radius_m: 0.09,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: AgentPose,
    pub terminated: bool,
    pub collided: bool,
}

/// Applies one discrete action. A forward step that would sweep the body
/// through a blocked cell leaves the pose unchanged.
pub fn step(scene: &GroundTruthScene, pose: &AgentPose, action: Action, motion: &MotionParams) -> StepOutcome {
    match action {
        Action::Stop => StepOutcome {
            pose: *pose,
            terminated: true,
            collided: false,
        },
        Action::TurnLeft | Action::TurnRight => {
            let sign = if action == Action::TurnLeft { 1.0 } else { -1.0 };
            StepOutcome {
                pose: AgentPose::new(pose.x, pose.y, pose.theta + sign * motion.turn_deg),
                terminated: false,
                collided: false,
            }
        }
        Action::MoveForward => {
            let (dx, dy) = heading_vec(pose.theta);
            let samples = (motion.step_m / (scene.resolution * 0.4)).ceil().max(1.0) as usize;
            let blocked = (1..=samples).any(|k| {
                let s = motion.step_m * k as f64 / samples as f64;
                scene.collides(pose.x + dx * s, pose.y + dy * s, motion.body_radius_m)
            });
            if blocked {
                StepOutcome {
                    pose: *pose,
                    terminated: false,
                    collided: true,
                }
            } else {
                StepOutcome {
                    pose: AgentPose::new(pose.x + dx * motion.step_m, pose.y + dy * motion.step_m, pose.theta),
                    terminated: false,
                    collided: false,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub episode_id: u64,
    pub scene_seed: u64,
    pub spawn: AgentPose,
    pub target: u8,
    #[serde(default = "default_step_limit")]
    pub step_limit: usize,
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
}

fn default_step_limit() -> usize {
    500
}

fn default_success_radius() -> f64 {
    1.0
}

impl EpisodeSpec {
    /// Checks the episode against its scene: the target exists and the spawn is
    /// neither blocked nor already within the success radius of a target.
    pub fn validate(&self, scene: &GroundTruthScene) -> Result<()> {
        if !super::is_target(self.target) {
            return Err(Error::InvalidEpisode(format!("{} is not a target category", self.target)));
        }
        if !scene.has_category(self.target) {
            return Err(Error::TargetAbsent(self.target));
        }
        if scene.collides(self.spawn.x, self.spawn.y, 0.0) {
            return Err(Error::InvalidEpisode("spawn lies in occupied space".into()));
        }
        if nearest_target_distance(scene, self.target, &self.spawn) <= self.success_radius {
            return Err(Error::InvalidEpisode("spawn already within the success radius".into()));
        }
        Ok(())
    }
}

/// Euclidean distance in meters from `pose` to the nearest cell centre of any
/// instance of `category`; infinite when there is none.
pub fn nearest_target_distance(scene: &GroundTruthScene, category: u8, pose: &AgentPose) -> f64 {
    scene
        .objects()
        .iter()
        .filter(|o| o.category == category)
        .flat_map(|o| o.cells.iter())
        .map(|&cell| {
            let (x, y) = scene.cell_center(cell as usize);
            (x - pose.x).hypot(y - pose.y)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Whether some cell of instance `k` is visible from `(x, y)` over the
/// ground-truth occupancy.
pub fn instance_visible(scene: &GroundTruthScene, k: usize, x: f64, y: f64) -> bool {
    let res = scene.resolution;
    let from = (x / res, y / res);
    let blocked = scene.blocked();
    let mut cells: Vec<(f64, usize)> = scene.objects()[k]
        .cells
        .iter()
        .map(|&c| {
            let (cx, cy) = scene.cell_center(c as usize);
            ((cx - x).hypot(cy - y), c as usize)
        })
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cells.into_iter().any(|(_, cell)| {
        let (r, c) = blocked.rc(cell);
        sight_line(
            from,
            (r as isize, c as isize),
            |rr, cc| !blocked.get(rr, cc).copied().unwrap_or(true),
            |rr, cc| {
                blocked.contains(rr, cc) && scene.instance_at(blocked.idx(rr as usize, cc as usize)) == Some(k)
            },
        )
    })
}

/// Success rule: the agent stopped within `success_radius` of an instance of
/// the target category and can see that instance.
pub fn judge(scene: &GroundTruthScene, spec: &EpisodeSpec, pose: &AgentPose) -> bool {
    judge_with(scene, spec, pose, true)
}

pub fn judge_with(scene: &GroundTruthScene, spec: &EpisodeSpec, pose: &AgentPose, require_visibility: bool) -> bool {
    scene
        .objects()
        .iter()
        .enumerate()
        .filter(|(_, o)| o.category == spec.target)
        .any(|(k, o)| {
            let near = o.cells.iter().any(|&cell| {
                let (x, y) = scene.cell_center(cell as usize);
                (x - pose.x).hypot(y - pose.y) <= spec.success_radius
            });
            near && (!require_visibility || instance_visible(scene, k, pose.x, pose.y))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::world::scene::ObjectInstance;

    fn room_with_target() -> GroundTruthScene {
        // 3 m x 3 m, target (category 1) at the east side, wall at column 40
        let n = 60;
        let mut occ = Grid::new(n, n, false);
        for i in 0..n {
            occ[(0, i)] = true;
            occ[(n - 1, i)] = true;
            occ[(i, 0)] = true;
            occ[(i, n - 1)] = true;
        }
        for r in 1..n - 1 {
            if r != 45 {
                occ[(r, 40)] = true;
            }
        }
        let cells = vec![(30 * n + 30) as u32, (30 * n + 50) as u32];
        GroundTruthScene::new(0, 0.05, occ, vec![ObjectInstance { category: 1, cells }]).unwrap()
    }

    fn spec(radius: f64) -> EpisodeSpec {
        EpisodeSpec {
            episode_id: 0,
            scene_seed: 0,
            spawn: AgentPose::new(0.5, 0.5, 0.0),
            target: 1,
            step_limit: 500,
            success_radius: radius,
        }
    }

    #[test]
    fn turns_are_quantised() {
        let scene = room_with_target();
        let m = MotionParams::default();
        let mut pose = AgentPose::new(0.5, 0.5, 0.0);
        pose = step(&scene, &pose, Action::TurnLeft, &m).pose;
        assert_eq!(pose.theta, 30.0);
        for _ in 0..11 {
            pose = step(&scene, &pose, Action::TurnLeft, &m).pose;
        }
        assert!(pose.theta.abs() < 1e-9 || (pose.theta - 360.0).abs() < 1e-9);
        let right = step(&scene, &AgentPose::new(0.5, 0.5, 0.0), Action::TurnRight, &m).pose;
        assert_eq!(right.theta, 330.0);
    }

    #[test]
    fn forward_into_wall_is_blocked() {
        let scene = room_with_target();
        let m = MotionParams::default();
        // wall column 40 starts at x = 2.0; body edge 0.1 m away
        let pose = AgentPose::new(2.0 - 0.09 - 0.1, 0.7, 0.0);
        let out = step(&scene, &pose, Action::MoveForward, &m);
        assert!(out.collided);
        assert_eq!(out.pose, pose);
        let free = step(&scene, &AgentPose::new(0.5, 0.7, 0.0), Action::MoveForward, &m);
        assert!(!free.collided);
        assert!((free.pose.x - 0.75).abs() < 1e-12);
        assert!(step(&scene, &pose, Action::Stop, &m).terminated);
    }

    #[test]
    fn judge_checks_radius_and_visibility() {
        let scene = room_with_target();
        // target cell (30, 30) centre at (1.525, 1.525)
        assert!(judge(&scene, &spec(1.0), &AgentPose::new(1.025, 1.525, 0.0)));
        assert!(!judge(&scene, &spec(1.0), &AgentPose::new(0.025 + 0.5, 0.2, 0.0)));
        // second cell (30, 50) centre (2.525, 1.525) sits behind the wall
        let behind = AgentPose::new(1.9 - 0.06, 1.525, 0.0);
        let far_spec = EpisodeSpec { target: 1, ..spec(1.0) };
        assert!(judge(&scene, &far_spec, &behind)); // still sees cell (30, 30)
        let only_behind = {
            let mut occ = scene.occupancy().clone();
            occ[(30, 30)] = false;
            GroundTruthScene::new(0, 0.05, occ, vec![ObjectInstance { category: 1, cells: vec![30 * 60 + 50] }]).unwrap()
        };
        let p = AgentPose::new(1.9 - 0.3, 1.525, 0.0);
        assert!(nearest_target_distance(&only_behind, 1, &p) <= 1.0);
        assert!(!judge(&only_behind, &far_spec, &p));
        assert!(judge_with(&only_behind, &EpisodeSpec { success_radius: f64::INFINITY, ..far_spec.clone() }, &p, false));
    }

    #[test]
    fn validate_rejects_absent_target() {
        let scene = room_with_target();
        let s = EpisodeSpec { target: 4, ..spec(1.0) };
        assert!(matches!(s.validate(&scene), Err(Error::TargetAbsent(4))));
        assert!(spec(1.0).validate(&scene).is_ok());
    }
}
