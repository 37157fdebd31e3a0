//! Scenario files, run artifacts and the command-line runner for
//! [`aladin_core`].

pub mod output;
pub mod runner;
pub mod scenario;

pub use aladin_core as core;
