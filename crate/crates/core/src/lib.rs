//! Bi-level distributed ALADIN for partially separable non-convex NLPs.
//!
//! The crate is `no_std` (with `alloc`) and contains the whole numerical
//! pipeline:
//!
//! * [`model`]: the partitioned problem, its coupling structure and the
//!   assignment sets used to reason about sparsity.
//! * [`local_solver`]: per-agent augmented-Lagrangian NLP solves, active-set
//!   detection, sensitivities, and the Schur-complement condensing.
//! * [`coordination`]: exact reference solvers for the coordination system and
//!   the inexactness test for iterative ones.
//! * [`dcg`] / [`dadmm`]: decentralized conjugate gradient and consensus ADMM
//!   running over the [`netsim`] message simulator.
//! * [`problems`]: builtin benchmark constructors.
//! * [`outer`]: the ALADIN outer loop tying everything together.
//!
//! File formats, the scenario runner and the command-line interface live in the
//! `aladin` companion crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod coordination;
pub mod dadmm;
pub mod dcg;
mod error;
pub mod linalg;
pub mod local_solver;
pub mod model;
pub mod netsim;
pub mod outer;
pub mod problems;

pub use error::{Error, LocalFailure, Result};

pub use nalgebra::{DMatrix, DVector};
