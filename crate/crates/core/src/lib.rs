//! Open-loop stabilization of cavity Fock states by an engineered reservoir
//! of three-level atoms.

pub mod dynamics;
pub mod error;
pub mod fock;
pub mod harness;
pub mod kraus;
pub mod lyapunov;
pub mod thermal;

pub use error::{Error, Result};
