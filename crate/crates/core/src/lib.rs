//! Transient heat conduction in a solid block with embedded single-phase
//! coolant channels.

pub mod assembly;
pub mod cli;
pub mod geometry;
pub mod mesh;
pub mod model;
pub mod output;
pub mod postprocess;
pub mod scenario;
pub mod solver;
pub mod sparse;
pub mod sweep;
pub mod verify;
