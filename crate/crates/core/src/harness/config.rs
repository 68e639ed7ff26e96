//! Run configuration and its fingerprint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::planning::{AgentParams, PlannerParams};
use crate::world::{MotionParams, SceneParams, SensorParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_prediction: bool,
    pub use_distance_weighting: bool,
    /// Noise-free segmentation; overrides the sensor's `noise_eps`.
    pub gt_segmentation: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_prediction: true,
            use_distance_weighting: true,
            gt_segmentation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneParams,
    pub sensor: SensorParams,
    pub motion: MotionParams,
    pub planner: PlannerParams,
    /// Global-context predictor weights, required when predicting.
    pub checkpoint: Option<PathBuf>,
    pub lambda: f64,
    pub flags: AblationFlags,
    pub episodes: usize,
    /// Held-out scenes the episodes are spread over.
    pub scenes: usize,
    pub seed: u64,
    pub step_limit: usize,
    pub success_radius: f64,
    pub replan_every: usize,
    pub frontier_clip_m: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneParams::small(),
            sensor: SensorParams::default(),
            motion: MotionParams::default(),
            planner: PlannerParams::default(),
            checkpoint: None,
            lambda: 5.0,
            flags: AblationFlags::default(),
            episodes: 500,
            scenes: 20,
            seed: 2024,
            step_limit: 500,
            success_radius: 1.0,
            replan_every: 10,
            frontier_clip_m: 3.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.scenes == 0 {
            return bad("scenes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.sensor.noise_eps) {
            return bad("sensor.noise_eps must lie in [0, 1]");
        }
        if self.replan_every == 0 {
            return bad("replan_every must be at least 1");
        }
        if self.step_limit == 0 || !(self.success_radius > 0.0) {
            return bad("step_limit and success_radius must be positive");
        }
        if self.sensor.num_rays == 0 || !(self.sensor.max_range_m > 0.0) {
            return bad("sensor needs rays and a positive range");
        }
        Ok(())
    }

    /// The configuration actually run: ground-truth segmentation zeroes the
    /// noise rate.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.flags.gt_segmentation {
            cfg.sensor.noise_eps = 0.0;
        }
        cfg
    }

    pub fn agent_params(&self) -> AgentParams {
        AgentParams {
            lambda: self.lambda,
            use_distance_weighting: self.flags.use_distance_weighting,
            replan_every: self.replan_every,
            frontier_clip_m: self.frontier_clip_m,
            planner: PlannerParams {
                step_m: self.motion.step_m,
                stop_radius_m: self.success_radius,
                ..self.planner.clone()
            },
            ..AgentParams::default()
        }
    }

    /// Hex SHA-256 of the effective configuration's JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.effective()).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
