//! Simulation-based testing of autonomous-driving decision stacks.
//!
//! A rendering-free kinematic traffic simulator drives scripted NPC vehicles
//! around an ego vehicle whose commands come from a system under test over a
//! lockstep message bridge. A scenario runner applies violation oracles and
//! records traces; the testing engine searches the scenario space with five
//! generation strategies.

pub mod bridge;
pub mod canonical;
pub mod config;
pub mod control;
pub mod engine;
pub mod geometry;
pub mod map;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod svg;
pub mod templates;
