//! Lifelong multimodal object-goal navigation on a deterministic gridworld.
//!
//! The agent keeps a semantic map and an instance memory across a sequence
//! of goals given as a category, an image or a language description, and
//! reaches them with frontier exploration and Fast Marching planning.

pub mod agent;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod global_policy;
pub mod goal_matching;
pub mod instance_memory;
pub mod perception;
pub mod planner;
pub mod semantic_map;
pub mod sim;

pub use agent::{Agent, AgentConfig, Variant};
pub use error::{Error, Result};
pub use geometry::{Cell, Point, Pose};
pub use goal_matching::{GoalSpec, MatchConfig, Modality};
pub use instance_memory::InstanceMemory;
pub use semantic_map::SemanticMap;
pub use sim::{Action, SimConfig, WorldSpec};
