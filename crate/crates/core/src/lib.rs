//! Control Lyapunov-value functions on grids.
//!
//! The crate computes CLVFs for control-affine systems by backward
//! time-marching of their variational inequality ([`hjsolver`]), splits
//! coupled systems into self-contained subsystems ([`dynamics`]), recombines
//! subsystem values ([`reconstruct`]), certifies where the recombination is
//! exact by intersecting admissible control sets ([`acs`]) and stabilises
//! trajectories with a QP controller ([`control`]).

pub mod acs;
pub mod contour;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hjsolver;
pub mod par;
pub mod reconstruct;

pub use error::{ClvfError, Result};
pub use grid::{Grid, ValueArray};
pub use par::Execution;
