//! Episode generation, the oracle path length, and the episode loop.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mapping::SemanticMap;
use crate::planning::{Fmm, NavAgent};
use crate::predictor::data::random_spawn;
use crate::predictor::TargetPredictor;
use crate::world::{
    generate_scene, instance_visible, judge_with, sense, step, Action, AgentPose, EpisodeSpec, GroundTruthScene,
    NUM_TARGETS,
};

/// Seed streams kept apart from the training scenes' `derive_seed(seed, k)`.
const SCENE_STREAM: u64 = 1 << 40;
const EPISODE_STREAM: u64 = 2 << 40;
const SENSOR_STREAM: u64 = 3 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    Timeout,
    FalseStop,
    Stuck,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::Timeout => "timeout",
            FailureReason::FalseStop => "false_stop",
            FailureReason::Stuck => "stuck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::None, Self::Timeout, Self::FalseStop, Self::Stuck]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub spec: EpisodeSpec,
    pub success: bool,
    pub agent_path_length: f64,
    pub oracle_path_length: f64,
    pub steps: usize,
    pub failure_reason: FailureReason,
}

impl EpisodeResult {
    /// `S * l / max(p, l)`.
    pub fn spl(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let l = self.oracle_path_length;
        l / self.agent_path_length.max(l)
    }
}

/// Pose and goal at every step, for offline plotting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub poses: Vec<AgentPose>,
    /// Goal cell centre in scene coordinates, if any.
    pub goals: Vec<Option<(f64, f64)>>,
}

/// Seeds of the held-out evaluation scenes.
pub fn scene_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.scenes as u64).map(|i| derive_seed(cfg.seed, SCENE_STREAM + i)).collect()
}

/// Scenes and per-(scene, target) oracle fields shared by every row.
pub struct EvalWorld {
    pub scenes: BTreeMap<u64, Arc<GroundTruthScene>>,
    /// Meters to the nearest success position, per scene and target.
    oracle: BTreeMap<(u64, u8), Grid<f64>>,
}

impl EvalWorld {
    /// Generates the scenes named by `seeds` and solves an oracle field for
    /// every target category each contains.
    pub fn build(cfg: &RunConfig, seeds: &[u64]) -> Result<Self> {
        let mut unique = seeds.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let built = unique
            .par_iter()
            .map(|&seed| {
                let scene = generate_scene(seed, &cfg.scene)?;
                let fields: Vec<(u8, Grid<f64>)> = (1..=NUM_TARGETS as u8)
                    .filter(|&c| scene.has_category(c))
                    .map(|c| (c, oracle_field(&scene, c, cfg.success_radius, cfg.motion.body_radius_m)))
                    .collect();
                Ok((seed, scene, fields))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scenes = BTreeMap::new();
        let mut oracle = BTreeMap::new();
        for (seed, scene, fields) in built {
            scenes.insert(seed, Arc::new(scene));
            for (c, f) in fields {
                oracle.insert((seed, c), f);
            }
        }
        Ok(Self { scenes, oracle })
    }

    pub fn scene(&self, seed: u64) -> Result<&Arc<GroundTruthScene>> {
        self.scenes
            .get(&seed)
            .ok_or_else(|| Error::InvalidEpisode(format!("scene {seed} not loaded")))
    }

    /// Oracle path length for `spec`, infinite when no success position is
    /// reachable.
    pub fn oracle_length(&self, spec: &EpisodeSpec) -> Result<f64> {
        let scene = self.scene(spec.scene_seed)?;
        let field = self.oracle.get(&(spec.scene_seed, spec.target)).ok_or(Error::TargetAbsent(spec.target))?;
        let cell = scene
            .cell_of(spec.spawn.x, spec.spawn.y)
            .ok_or(Error::PoseOutOfBounds { x: spec.spawn.x, y: spec.spawn.y })?;
        Ok(field[cell])
    }
}

/// Cells where the body fits and from which `judge` succeeds for `category`.
pub fn success_cells(scene: &GroundTruthScene, category: u8, radius: f64, nav: &Grid<bool>) -> Vec<usize> {
    let res = scene.resolution;
    let k = (radius / res).ceil() as isize + 1;
    let mut hit = vec![false; nav.len()];
    for (i, obj) in scene.objects().iter().enumerate() {
        if obj.category != category {
            continue;
        }
        let mut near = vec![false; nav.len()];
        let mut cands = Vec::new();
        for &cell in &obj.cells {
            let (r, c) = nav.rc(cell as usize);
            let (ox, oy) = scene.cell_center(cell as usize);
            for dr in -k..=k {
                for dc in -k..=k {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if !nav.contains(nr, nc) {
                        continue;
                    }
                    let j = nav.idx(nr as usize, nc as usize);
                    if near[j] || hit[j] || !nav[j] {
                        continue;
                    }
                    let (x, y) = scene.cell_center(j);
                    if (x - ox).hypot(y - oy) <= radius {
                        near[j] = true;
                        cands.push(j);
                    }
                }
            }
        }
        for j in cands {
            let (x, y) = scene.cell_center(j);
            if instance_visible(scene, i, x, y) {
                hit[j] = true;
            }
        }
    }
    (0..hit.len()).filter(|&j| hit[j]).collect()
}

/// Geodesic meters from every cell to the nearest success cell over the
/// cells the body fits in.
pub fn oracle_field(scene: &GroundTruthScene, category: u8, radius: f64, body_radius: f64) -> Grid<f64> {
    let nav = scene.navigable(body_radius);
    let goals = success_cells(scene, category, radius, &nav);
    let mut fmm = Fmm::new();
    fmm.field(&nav, &goals, scene.resolution).d
}

/// Pre-generates `cfg.episodes` valid episodes round-robin over the
/// held-out scenes.
pub fn generate_episodes(cfg: &RunConfig, world: &EvalWorld) -> Result<Vec<EpisodeSpec>> {
    let seeds = scene_seeds(cfg);
    (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let scene_seed = seeds[i % seeds.len()];
            let scene = world.scene(scene_seed)?;
            let targets: Vec<u8> = (1..=NUM_TARGETS as u8).filter(|&c| scene.has_category(c)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EPISODE_STREAM + i as u64));
            for _ in 0..200 {
                let Some(&target) = targets.choose(&mut rng) else {
                    break;
                };
                let spec = EpisodeSpec {
                    episode_id: i as u64,
                    scene_seed,
                    spawn: random_spawn(scene, &cfg.motion, &mut rng)?,
                    target,
                    step_limit: cfg.step_limit,
                    success_radius: cfg.success_radius,
                };
                if spec.validate(scene).is_ok() && world.oracle_length(&spec)?.is_finite() {
                    return Ok(spec);
                }
            }
            Err(Error::GenerationFailed {
                attempts: 200,
                reason: format!("no valid episode in scene {scene_seed}"),
            })
        })
        .collect()
}

pub fn write_episodes(specs: &[EpisodeSpec], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in specs {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeSpec>> {
    let reader = BufReader::new(File::open(path)?);
    let mut specs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            specs.push(serde_json::from_str(&line)?);
        }
    }
    Ok(specs)
}

/// Runs one episode: sense, map, act, step until STOP or the step limit.
/// Agent-side errors end the episode as `stuck`.
pub fn run_episode(
    cfg: &RunConfig,
    scene: &GroundTruthScene,
    spec: &EpisodeSpec,
    oracle_m: f64,
    predictor: Option<&dyn TargetPredictor>,
    mut trace: Option<&mut EpisodeTrace>,
) -> EpisodeResult {
    let cfg = cfg.effective();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SENSOR_STREAM + spec.episode_id));
    let predictor = predictor.filter(|_| cfg.flags.use_prediction);
    let mut agent = NavAgent::new(cfg.agent_params(), spec.target, predictor);
    let mut map = SemanticMap::for_scene(scene);
    let mut pose = spec.spawn;
    let mut collided = false;
    let mut path = 0.0;
    let mut steps = 0;
    let mut recent: std::collections::VecDeque<AgentPose> = Default::default();
    let finish = |success: bool, path: f64, steps: usize, reason: FailureReason| EpisodeResult {
        spec: spec.clone(),
        success,
        agent_path_length: path,
        oracle_path_length: oracle_m,
        steps,
        failure_reason: reason,
    };
    while steps < spec.step_limit {
        let scan = sense(scene, &pose, &cfg.sensor, &mut rng);
        let Ok(stats) = map.update(&scan, &pose) else {
            return finish(false, path, steps, FailureReason::Stuck);
        };
        let action = agent.act(&mut map, &stats, &pose, collided);
        steps += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.poses.push(pose);
            t.goals.push(agent.goal_cell().map(|g| map.cell_center(g)));
        }
        if action == Action::Stop {
            let success = judge_with(scene, spec, &pose, true);
            let reason = if success { FailureReason::None } else { FailureReason::FalseStop };
            return finish(success, path, steps, reason);
        }
        let out = step(scene, &pose, action, &cfg.motion);
        path += out.pose.dist(&pose);
        pose = out.pose;
        collided = out.collided;
        recent.push_back(pose);
        if recent.len() > STUCK_WINDOW {
            recent.pop_front();
        }
    }
    // a timeout spent in a small pocket counts as stuck
    let pinned = recent.len() == STUCK_WINDOW && recent.iter().all(|p| p.dist(&pose) < STUCK_RADIUS_M);
    let reason = if pinned { FailureReason::Stuck } else { FailureReason::Timeout };
    finish(false, path, steps, reason)
}

const STUCK_WINDOW: usize = 100;
const STUCK_RADIUS_M: f64 = 0.5;
