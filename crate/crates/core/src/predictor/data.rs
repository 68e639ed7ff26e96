//! Snapshot collection and the training dataset.
//!
//! Maps are stored max-pooled by `POOL` and bit-packed: every channel of a
//! semantic map is binary, so a pooled small-scene map costs about 8 KB.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::explorer::{ExplorerPolicy, FrontierExplorer};
use super::model::{make_target, InputMode};
use super::train::ExampleSource;
use super::{TrainingTarget, CROP_M, POOL};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::mapping::io::{load_map, save_map, snapshot_name};
use crate::mapping::{crop_egocentric, Frustum, SemanticMap};
use crate::world::io::{pack_bits, unpack_bits};
use crate::world::{
    generate_scene, sense, step, AgentPose, GroundTruthScene, MotionParams, SceneParams, SensorParams, NUM_TARGETS,
};

/// A binary semantic map, bit-packed.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMap {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub resolution: f64,
    pub offset: (isize, isize),
    bits: Vec<u8>,
}

impl PackedMap {
    pub fn pack(map: &SemanticMap) -> Self {
        let bits: Vec<bool> = map.data().iter().map(|&v| v >= 0.5).collect();
        Self {
            channels: map.channels(),
            h: map.h(),
            w: map.w(),
            resolution: map.resolution,
            offset: map.offset,
            bits: pack_bits(&bits),
        }
    }

    pub fn unpack(&self) -> SemanticMap {
        let n = self.channels * self.h * self.w;
        let data = unpack_bits(&self.bits, n)
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        let mut map = SemanticMap::from_data(self.channels, self.h, self.w, self.resolution, data)
            .expect("packed length matches its shape");
        map.offset = self.offset;
        map
    }

    pub fn bytes(&self) -> usize {
        self.bits.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub pose: AgentPose,
    pub map: PackedMap,
}

/// One exploration run: input snapshots and the final map.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scene_index: usize,
    pub scene_seed: u64,
    pub spawn_index: usize,
    pub inputs: Vec<Snapshot>,
    pub final_map: Snapshot,
    /// Explored fraction of the scene's free cells at the end.
    pub coverage: f64,
    /// No 0.5 m of progress over the last 100 steps.
    pub stuck: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectParams {
    pub steps: usize,
    pub every: usize,
    pub last_input: usize,
    pub pool: usize,
    pub sensor: SensorParams,
    pub motion: MotionParams,
}

impl Default for CollectParams {
    fn default() -> Self {
        Self {
            steps: 500,
            every: 25,
            last_input: 250,
            pool: POOL,
            sensor: SensorParams {
                noise_eps: 0.0,
                ..SensorParams::default()
            },
            motion: MotionParams::default(),
        }
    }
}

/// Runs `explorer` from `spawn` and keeps pooled maps at every `every` steps
/// up to `last_input`, plus the map after `steps` steps.
pub fn generate_snapshots(
    scene: &GroundTruthScene,
    spawn: AgentPose,
    explorer: &mut dyn ExplorerPolicy,
    params: &CollectParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Snapshot>, Snapshot, f64, bool)> {
    let mut map = SemanticMap::for_scene(scene);
    let mut pose = spawn;
    map.update(&sense(scene, &pose, &params.sensor, rng), &pose)?;
    let mut inputs = Vec::new();
    let mut history = vec![pose];
    let mut collided = false;
    for t in 1..=params.steps {
        let action = explorer.act(&mut map, &pose, collided, rng);
        let out = step(scene, &pose, action, &params.motion);
        collided = out.collided;
        pose = out.pose;
        map.update(&sense(scene, &pose, &params.sensor, rng), &pose)?;
        history.push(pose);
        if t % params.every == 0 && t <= params.last_input {
            inputs.push(Snapshot {
                step: t,
                pose,
                map: PackedMap::pack(&map.pooled(params.pool)),
            });
        }
    }
    let (mut free, mut seen) = (0usize, 0usize);
    for (i, &b) in scene.blocked().data().iter().enumerate() {
        if !b {
            free += 1;
            let (x, y) = scene.cell_center(i);
            seen += map.cell_of(x, y).is_some_and(|j| map.is_explored(j)) as usize;
        }
    }
    let coverage = seen as f64 / free.max(1) as f64;
    let tail = &history[history.len().saturating_sub(101)..];
    let stuck = tail.len() > 100 && tail.iter().all(|p| p.dist(&tail[0]) < 0.5);
    let final_map = Snapshot {
        step: params.steps,
        pose,
        map: PackedMap::pack(&map.pooled(params.pool)),
    };
    Ok((inputs, final_map, coverage, stuck))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataParams {
    pub scenes: usize,
    pub spawns_per_scene: usize,
    pub seed: u64,
    /// The last `val_fraction` of scenes form the validation split.
    pub val_fraction: f64,
    pub scene: SceneParams,
    pub collect: CollectParams,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            scenes: 200,
            spawns_per_scene: 20,
            seed: 7,
            val_fraction: 0.2,
            scene: SceneParams::small(),
            collect: CollectParams::default(),
        }
    }
}

impl DataParams {
    pub fn val_scenes(&self) -> usize {
        ((self.scenes as f64 * self.val_fraction).round() as usize).min(self.scenes)
    }

    pub fn scene_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, k as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotDataset {
    pub trajectories: Vec<Trajectory>,
    /// Scenes with index at or above this are validation scenes.
    pub first_val_scene: usize,
}

/// A spawn cell from the scene's largest navigable region, with a random
/// heading in turn increments.
pub fn random_spawn(scene: &GroundTruthScene, motion: &MotionParams, rng: &mut impl Rng) -> Result<AgentPose> {
    spawn_from(scene, &scene.spawn_candidates(motion.body_radius_m), motion, rng)
}

fn spawn_from(scene: &GroundTruthScene, cands: &[usize], motion: &MotionParams, rng: &mut impl Rng) -> Result<AgentPose> {
    if cands.is_empty() {
        return Err(Error::GenerationFailed {
            attempts: 1,
            reason: "no spawnable cell".into(),
        });
    }
    let (x, y) = scene.cell_center(cands[rng.gen_range(0..cands.len())]);
    let turns = (360.0 / motion.turn_deg).round().max(1.0) as usize;
    Ok(AgentPose::new(x, y, rng.gen_range(0..turns) as f64 * motion.turn_deg))
}

impl SnapshotDataset {
    pub fn generate(params: &DataParams) -> Result<Self> {
        let first_val_scene = params.scenes - params.val_scenes();
        let per_scene = (0..params.scenes)
            .into_par_iter()
            .map(|k| {
                let seed = params.scene_seed(k);
                let scene = generate_scene(seed, &params.scene)?;
                let cands = scene.spawn_candidates(params.collect.motion.body_radius_m);
                (0..params.spawns_per_scene)
                    .map(|s| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64 + 1));
                        let spawn = spawn_from(&scene, &cands, &params.collect.motion, &mut rng)?;
                        let mut explorer = FrontierExplorer::default();
                        let (inputs, final_map, coverage, stuck) =
                            generate_snapshots(&scene, spawn, &mut explorer, &params.collect, &mut rng)?;
                        Ok(Trajectory {
                            scene_index: k,
                            scene_seed: seed,
                            spawn_index: s,
                            inputs,
                            final_map,
                            coverage,
                            stuck,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trajectories: per_scene.into_iter().flatten().collect(),
            first_val_scene,
        })
    }

    pub fn split_of(&self, t: &Trajectory) -> Split {
        if t.scene_index >= self.first_val_scene {
            Split::Val
        } else {
            Split::Train
        }
    }

    /// `(trajectory, input snapshot)` pairs of one split.
    pub fn items(&self, split: Split) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| self.split_of(t) == split)
            .flat_map(|(i, t)| (0..t.inputs.len()).map(move |j| (i, j)))
            .collect()
    }

    pub fn view(&self, split: Split, mode: InputMode) -> DatasetView<'_> {
        DatasetView {
            data: self,
            items: self.items(split),
            mode,
        }
    }

    /// Writes every map as a `PNMP` file plus an `index.jsonl` describing
    /// each trajectory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = BufWriter::new(File::create(dir.join("index.jsonl"))?);
        for t in &self.trajectories {
            let mut snaps = Vec::new();
            for s in t.inputs.iter().chain(std::iter::once(&t.final_map)) {
                let name = snapshot_name(t.scene_seed, t.spawn_index, s.step);
                save_map(&s.map.unpack(), &dir.join(&name))?;
                snaps.push(IndexSnapshot {
                    file: name,
                    step: s.step,
                    pose: s.pose,
                    offset: s.map.offset,
                });
            }
            let last = snaps.pop().expect("final map present");
            let entry = IndexEntry {
                scene_index: t.scene_index,
                scene_seed: t.scene_seed,
                spawn_index: t.spawn_index,
                split: self.split_of(t),
                coverage: t.coverage,
                stuck: t.stuck,
                inputs: snaps,
                final_map: last,
            };
            serde_json::to_writer(&mut index, &entry)?;
            index.write_all(b"\n")?;
        }
        index.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file = File::open(dir.join("index.jsonl"))?;
        let mut out = Self {
            trajectories: Vec::new(),
            first_val_scene: usize::MAX,
        };
        let read = |s: &IndexSnapshot| -> Result<Snapshot> {
            let mut map = load_map(&dir.join(&s.file))?;
            map.offset = s.offset;
            Ok(Snapshot {
                step: s.step,
                pose: s.pose,
                map: PackedMap::pack(&map),
            })
        };
        let mut last_train = None;
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: IndexEntry = serde_json::from_str(&line)?;
            match e.split {
                Split::Val => out.first_val_scene = out.first_val_scene.min(e.scene_index),
                Split::Train => last_train = Some(last_train.unwrap_or(0).max(e.scene_index)),
            }
            out.trajectories.push(Trajectory {
                scene_index: e.scene_index,
                scene_seed: e.scene_seed,
                spawn_index: e.spawn_index,
                inputs: e.inputs.iter().map(read).collect::<Result<_>>()?,
                final_map: read(&e.final_map)?,
                coverage: e.coverage,
                stuck: e.stuck,
            });
        }
        if out.trajectories.is_empty() {
            return Err(Error::EmptyDataset(dir.display().to_string()));
        }
        if out.first_val_scene == usize::MAX {
            out.first_val_scene = last_train.map_or(0, |k| k + 1);
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexSnapshot {
    file: String,
    step: usize,
    pose: AgentPose,
    offset: (isize, isize),
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    scene_index: usize,
    scene_seed: u64,
    spawn_index: usize,
    split: Split,
    coverage: f64,
    stuck: bool,
    inputs: Vec<IndexSnapshot>,
    final_map: IndexSnapshot,
}

/// Training examples of one split in one input mode.
pub struct DatasetView<'a> {
    pub data: &'a SnapshotDataset,
    pub items: Vec<(usize, usize)>,
    pub mode: InputMode,
}

/// Frustum of the default scanner, used for egocentric crops.
pub fn default_frustum() -> Frustum {
    let s = SensorParams::default();
    Frustum {
        fov_deg: s.fov_deg,
        max_range: s.max_range_m,
    }
}

/// Input and target for one snapshot. Global mode uses the whole pooled map
/// with `y = (1 - e) * M`; egocrop mode uses the agent's current view, with
/// the target cropped from the final map around the same pose.
pub fn example(input: &Snapshot, final_map: &Snapshot, mode: InputMode) -> Result<(SemanticMap, TrainingTarget)> {
    let m = input.map.unpack();
    let last = final_map.map.unpack();
    match mode {
        InputMode::Global => {
            let y = make_target(&last, &m.exploration_mask(), NUM_TARGETS)?;
            Ok((m, y))
        }
        InputMode::Egocrop => {
            let crop = crop_egocentric(&m, &input.pose, CROP_M, Some(default_frustum()));
            let truth = crop_egocentric(&last, &input.pose, CROP_M, None);
            let y = make_target(&truth, &crop.exploration_mask(), NUM_TARGETS)?;
            Ok((crop, y))
        }
    }
}

impl ExampleSource for DatasetView<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn example(&self, i: usize) -> Result<(SemanticMap, TrainingTarget)> {
        let (t, s) = self.items[i];
        let traj = &self.data.trajectories[t];
        example(&traj.inputs[s], &traj.final_map, self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::CH_EXPLORED;

    fn tiny() -> DataParams {
        DataParams {
            scenes: 2,
            spawns_per_scene: 1,
            val_fraction: 0.5,
            collect: CollectParams {
                steps: 120,
                last_input: 100,
                ..CollectParams::default()
            },
            ..DataParams::default()
        }
    }

    #[test]
    fn trajectories_have_the_expected_snapshots() {
        let data = SnapshotDataset::generate(&tiny()).unwrap();
        assert_eq!(data.trajectories.len(), 2);
        for t in &data.trajectories {
            let steps: Vec<usize> = t.inputs.iter().map(|s| s.step).collect();
            assert_eq!(steps, vec![25, 50, 75, 100]);
            assert_eq!(t.final_map.step, 120);
            let explored = |s: &Snapshot| s.map.unpack().channel(CH_EXPLORED).iter().sum::<f32>();
            for w in t.inputs.windows(2) {
                assert!(explored(&w[1]) >= explored(&w[0]));
            }
            assert!(explored(&t.final_map) >= explored(t.inputs.last().unwrap()));
            assert!(t.coverage > 0.0 && t.coverage <= 1.0);
        }
        assert_eq!(data.items(Split::Train).len(), 4);
        assert_eq!(data.items(Split::Val).len(), 4);
    }

    #[test]
    fn packing_round_trips() {
        let data = SnapshotDataset::generate(&tiny()).unwrap();
        let s = &data.trajectories[0].inputs[2];
        let m = s.map.unpack();
        assert_eq!(PackedMap::pack(&m), s.map);
        assert!(s.map.bytes() < 10_000);
    }

    #[test]
    fn dataset_directory_round_trips() {
        let data = SnapshotDataset::generate(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let back = SnapshotDataset::load(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn egocrop_examples_are_window_sized() {
        let data = SnapshotDataset::generate(&tiny()).unwrap();
        let view = data.view(Split::Train, InputMode::Egocrop);
        let (m, y) = view.example(0).unwrap();
        assert_eq!((m.h(), m.w()), (30, 30));
        assert_eq!((y.h, y.w), (30, 30));
    }
}
