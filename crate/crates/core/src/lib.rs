//! Deterministic teleoperation-safety simulator.

pub mod geometry;
pub mod link;
pub mod mode;
pub mod mrm;
pub mod odd;
pub mod protocol;
pub mod reachability;
pub mod runlog;
pub mod scenario;
pub mod sim;
pub mod world;
