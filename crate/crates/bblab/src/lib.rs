//! A numerical laboratory for bilinear ("bang-bang") optimal control on the
//! torus and the unstable free boundary problems carried by the switching
//! function of such controls.
//!
//! The pipeline runs: state solves for the controlled reaction–diffusion
//! equation (`state`), switching-function/adjoint machinery and objective
//! derivatives (`adjoint`), bang-bang optimization schemes and second-order
//! certificates (`optimize`), monotonicity-formula diagnostics at free
//! boundary points (`weiss`), the planar classification of blow-up profiles
//! (`blowup`), and measure/curve geometry of the optimal sets (`geometry`).
//! `run` wires everything into reproducible experiment drivers behind the
//! `bblab` binary.

pub mod adjoint;
pub mod blowup;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod optimize;
pub mod solver;
pub mod state;
pub mod suite;
pub mod weiss;

pub use error::{Error, Result};
