//! Numerical laboratory for Lagrangian mean curvature flow in flat C^n.
//!
//! The crate is organised bottom-up: [`mesh`] holds discrete immersions and
//! their geometry, [`flow`] evolves them, [`monitors`] evaluates integral
//! functionals along a flow, [`blowup`] rescales near a singularity and
//! studies the limit, and [`verify`] bundles the checks into suites.

pub mod blowup;
pub mod error;
pub mod flow;
pub mod mesh;
pub mod monitors;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
