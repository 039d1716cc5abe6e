//! Simulation and analysis of SDEs perturbed by their running maximum and
//! minimum:
//!
//! `X_t = x + ∫σ(X)dW + ∫b(X)ds + α·max_{s≤t} X_s + β·min_{s≤t} X_s`.
//!
//! [`skorokhod`] solves the pathwise max/min fixed point, [`simulate`]
//! discretizes the equation, [`malliavin`] computes the derivative field of a
//! discrete path, [`lamperti`] reduces to unit diffusion, and [`density`]
//! runs statistics on ensembles of terminal values.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod density;
pub mod export;
pub mod lamperti;
pub mod malliavin;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod skorokhod;

pub use coefficients::{Coefficient, CoefficientBounds, CoefficientError, CoefficientModel, MonotoneTable, ScalarFn};
pub use density::{DensityError, Ensemble, ReferenceLaw};
pub use lamperti::{LampertiError, Transform};
pub use malliavin::{DerivativeField, MalliavinError};
pub use params::{ParamError, PerturbationParams};
pub use quadrature::QuadratureFail;
pub use simulate::{ExtremumMonitoring, Path, Scheme, SimConfig, SimError};
pub use skorokhod::{DrivingPath, MaxMinSolution, SkorokhodError, SolverOptions};

use thiserror::Error;

/// Any failure raised by this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Skorokhod(#[from] SkorokhodError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Malliavin(#[from] MalliavinError),
    #[error(transparent)]
    Lamperti(#[from] LampertiError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureFail),
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Param(e) => e.code(),
            Error::Coefficient(_) => "INVALID_COEFFICIENT",
            Error::Skorokhod(e) => e.code(),
            Error::Simulation(e) => e.code(),
            Error::Malliavin(e) => e.code(),
            Error::Lamperti(e) => e.code(),
            Error::Density(e) => e.code(),
            Error::Quadrature(_) => "QUADRATURE_FAIL",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.code() {
            "NO_CONVERGENCE" | "NUMERICAL_FAULT" | "CASE_INCONSISTENT" | "QUADRATURE_FAIL" => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }
}
