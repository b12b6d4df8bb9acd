//! Leader-follower (Stackelberg) control of degenerate Kolmogorov-type
//! parabolic equations, solved through Fenchel duality.

pub mod duality;
pub mod error;
pub mod follower;
pub mod leader;
pub mod mesh;
pub mod operator;
pub mod pde_solvers;
pub mod scenario;
pub mod sde;

pub use error::{Error, Result};
