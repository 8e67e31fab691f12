//! Complementary distributed emergency frequency control (EFC) for
//! multi-infeed AC-DC grids.
//!
//! The crate models a DC-power-flow network with generator, LCC-HVDC and
//! passive buses, integrates its differential-algebraic dynamics, and closes
//! the loop with two primal-dual control laws: a fully-distributed one that
//! only talks to neighbouring buses, and a semi-distributed one that solves
//! part of the dual problem at a control center. An independent oracle solves
//! the underlying optimization problem so closed-loop steady states can be
//! certified.
//!
//! All numerical types are generic over [`Float`] (`f32` or `f64`); the
//! `*F64` aliases at the crate root cover the common case.

pub mod checks;
pub mod control;
pub mod coordination;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod plant;
pub mod runner;
pub mod scenario;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use error::{EfcError, Result};

/// Scalar type accepted by every numerical routine in the crate.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, panicking only for values unrepresentable in `Self`.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl<T> Float for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + num_traits::NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

pub type GridF64 = grid::Grid<f64>;
pub type PlantF64 = plant::Plant<f64>;
pub type PlantStateF64 = plant::PlantState<f64>;
pub type ControllerStateF64 = control::ControllerState<f64>;
pub type ControlGainsF64 = control::ControlGains<f64>;
pub type TsoefcProblemF64 = oracle::TsoefcProblem<f64>;
pub type TsoefcSolutionF64 = oracle::TsoefcSolution<f64>;
pub type ScenarioF64 = scenario::Scenario<f64>;
pub type RunResultF64 = runner::RunResult<f64>;

pub type GridF32 = grid::Grid<f32>;
pub type PlantStateF32 = plant::PlantState<f32>;
pub type ScenarioF32 = scenario::Scenario<f32>;
