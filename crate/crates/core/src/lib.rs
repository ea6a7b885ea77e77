//! Day-ahead volt/VAR optimization for radial distribution feeders.
//!
//! The crate covers the whole pipeline: grid description and radiality
//! checks ([`grid`]), LinDistFlow and Newton power flow ([`powerflow`]),
//! Markov wind forecasting ([`wind`]), typical load profiles ([`loads`]),
//! the mixed-integer QP ([`formulation`]), its branch-and-bound solver
//! ([`solver`]) and a posteriori AC evaluation ([`eval`]).

pub mod cases;
pub mod error;
pub mod eval;
pub mod formulation;
pub mod grid;
pub mod loads;
pub mod network;
pub mod powerflow;
pub mod solver;
pub mod synthetic;
pub mod wind;

pub use error::{Result, VvoError};
