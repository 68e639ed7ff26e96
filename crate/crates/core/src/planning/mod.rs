//! Geodesic distance fields, long-term goal selection, and local control.

pub mod agent;
pub mod fmm;
pub mod goal;
pub mod local;

pub use agent::{AgentParams, GoalSource, NavAgent, PlannerState};
pub use fmm::{fmm_distance, DistanceField, Fmm};
pub use goal::{frontier_goal, select_goal, GoalSelection, LAMBDA_UNWEIGHTED};
pub use local::{plan_step, LocalPlanner, Plan, PlannerParams, StuckDetector, Traversability};
