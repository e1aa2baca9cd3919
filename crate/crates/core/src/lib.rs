//! Simulation toolkit for classical and quantum field dynamics on small registers.
//!
//! * [`state`] statevectors, density matrices, gates and circuits
//! * [`primitives`] QFT, phase estimation, Grover walks and amplitude estimation
//! * [`open`] GKLS master equation, Kraus channels and gate-level noise
//! * [`sawtooth`] classical and quantum sawtooth maps with chaos diagnostics
//! * [`threewave`] quantized three-wave interaction in conserved subspaces
//! * [`koopman`] Liouville, Koopman-von Neumann and Carleman embeddings
//! * [`rkhs`] holomorphic reproducing-kernel spaces and ladder operators

pub mod error;
pub mod fit;
pub mod koopman;
pub mod linalg;
pub mod ode;
pub mod open;
pub mod parallel;
pub mod primitives;
pub mod quadrature;
pub mod rkhs;
pub mod sawtooth;
pub mod sparse;
pub mod state;
pub mod threewave;

pub use error::{Error, Result};
pub use linalg::{OperatorMatrix, C64};
