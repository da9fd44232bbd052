//! Structure, asymptotics and Monte Carlo simulation for homogeneous open
//! quantum random walks.

pub mod asymptotics;
pub mod cli;
pub mod empirics;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod state;
pub mod structure;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, Subspace};
pub use model::{ChannelView, PerronData, WalkModel};
