//! Ground-truth indoor worlds and the episode dynamics that run inside them.

pub mod dynamics;
pub mod io;
pub mod scene;
pub mod sensor;

pub use dynamics::{
    instance_visible, judge, judge_with, nearest_target_distance, step, Action, AgentPose, EpisodeSpec,
    MotionParams, StepOutcome,
};
pub use scene::{
    generate_scene, FurnitureRule, GroundTruthScene, ObjectInstance, Placement, RoomKind,
    RoomPrior, SceneParams,
};
pub use sensor::{sense, Ray, Scan, SensorParams};

/// Total number of semantic categories (targets first, then context classes).
pub const NUM_CATEGORIES: usize = 9;
/// Number of goal categories; ids `1..=NUM_TARGETS`.
pub const NUM_TARGETS: usize = 6;

pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "chair",
    "bed",
    "plant",
    "toilet",
    "tv_monitor",
    "sofa",
    "fireplace",
    "mirror",
    "bathtub",
];

pub mod category {
    pub const CHAIR: u8 = 1;
    pub const BED: u8 = 2;
    pub const PLANT: u8 = 3;
    pub const TOILET: u8 = 4;
    pub const TV: u8 = 5;
    pub const SOFA: u8 = 6;
    pub const FIREPLACE: u8 = 7;
    pub const MIRROR: u8 = 8;
    pub const BATHTUB: u8 = 9;
}

pub fn category_name(id: u8) -> &'static str {
    match id {
        1..=9 => CATEGORY_NAMES[id as usize - 1],
        _ => "none",
    }
}

pub fn category_by_name(name: &str) -> Option<u8> {
    CATEGORY_NAMES
        .iter()
        .position(|n| *n == name)
        .map(|i| i as u8 + 1)
}

pub fn is_target(id: u8) -> bool {
    (1..=NUM_TARGETS as u8).contains(&id)
}
