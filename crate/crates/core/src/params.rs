//! Shape parameters `(alpha, beta)` and the closed-form smoothness constants.
//!
//! The admissible region is `alpha < 1`, `beta < 1`, `|rho| < 1` with
//! `rho = alpha * beta / ((1 - alpha) * (1 - beta))`. Boundary points are
//! rejected. The `|rho| < 1` test is evaluated through the equivalent
//! polynomial conditions
//!
//! ```text
//! rho < 1   <=>  alpha + beta < 1
//! rho > -1  <=>  1 - alpha - beta + 2 * alpha * beta > 0
//! ```
//!
//! which hold whenever `(1 - alpha)(1 - beta) > 0`. Dividing first and then
//! comparing with one loses the boundary: `(-2, 0.6)` has `rho = -1` exactly
//! but the floating-point quotient is `-0.9999999999999998`.

use serde::Serialize;
use thiserror::Error;

/// `3 - 2 * sqrt(2)`, which equals `(sqrt(2) - 1)^2`.
pub const THREE_MINUS_TWO_SQRT2: f64 = 3.0 - 2.0 * std::f64::consts::SQRT_2;

/// Upper bound on `alpha^2 + beta^2` below which the smooth-density horizon is
/// positive.
pub const SMOOTHNESS_THRESHOLD: f64 = THREE_MINUS_TWO_SQRT2 / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ParamError {
    #[error("alpha = {0} is not finite")]
    NonFiniteAlpha(f64),
    #[error("beta = {0} is not finite")]
    NonFiniteBeta(f64),
    #[error("alpha = {0} must be < 1")]
    RejectAlpha(f64),
    #[error("beta = {0} must be < 1")]
    RejectBeta(f64),
    #[error("|rho| = |{rho}| must be < 1 (alpha = {alpha}, beta = {beta})")]
    RejectRho { alpha: f64, beta: f64, rho: f64 },
}

impl ParamError {
    /// Stable machine-readable code for reports.
    pub fn code(&self) -> &'static str {
        match self {
            ParamError::NonFiniteAlpha(_) | ParamError::RejectAlpha(_) => "REJECT_ALPHA",
            ParamError::NonFiniteBeta(_) | ParamError::RejectBeta(_) => "REJECT_BETA",
            ParamError::RejectRho { .. } => "REJECT_RHO",
        }
    }
}

/// A validated `(alpha, beta)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationParams {
    alpha: f64,
    beta: f64,
    rho: f64,
}

/// `alpha * beta / ((1 - alpha) * (1 - beta))`, without any domain check.
pub fn rho(alpha: f64, beta: f64) -> f64 {
    alpha * beta / ((1.0 - alpha) * (1.0 - beta))
}

/// Checks `(alpha, beta)` against the admissible region.
pub fn validate_params(alpha: f64, beta: f64) -> Result<PerturbationParams, ParamError> {
    if !alpha.is_finite() {
        return Err(ParamError::NonFiniteAlpha(alpha));
    }
    if !beta.is_finite() {
        return Err(ParamError::NonFiniteBeta(beta));
    }
    if alpha >= 1.0 {
        return Err(ParamError::RejectAlpha(alpha));
    }
    if beta >= 1.0 {
        return Err(ParamError::RejectBeta(beta));
    }
    let upper_ok = alpha + beta < 1.0;
    let lower_ok = 1.0 - alpha - beta + 2.0 * alpha * beta > 0.0;
    if !(upper_ok && lower_ok) {
        return Err(ParamError::RejectRho {
            alpha,
            beta,
            rho: rho(alpha, beta),
        });
    }
    Ok(PerturbationParams {
        alpha,
        beta,
        rho: rho(alpha, beta),
    })
}

impl PerturbationParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ParamError> {
        validate_params(alpha, beta)
    }

    /// The unperturbed case `alpha = beta = 0`.
    pub fn unperturbed() -> Self {
        PerturbationParams {
            alpha: 0.0,
            beta: 0.0,
            rho: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `1 - alpha - beta`, strictly positive on the admissible region.
    pub fn gap(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    /// `alpha^2 + beta^2`.
    pub fn sum_squares(&self) -> f64 {
        self.alpha * self.alpha + self.beta * self.beta
    }

    /// True when only one of the running extremes feeds back into the dynamics.
    pub fn is_singly_perturbed(&self) -> bool {
        self.alpha == 0.0 || self.beta == 0.0
    }
}

/// Oscillation constant
/// `C(t) = 3 (|b'|^2 t + 4 (alpha^2 + beta^2)) + 2 sqrt(3 (|b'|^2 t + 4 (alpha^2 + beta^2)))`.
pub fn smoothness_constant(t: f64, alpha: f64, beta: f64, b_prime_sup: f64) -> f64 {
    let q = 3.0 * (b_prime_sup * b_prime_sup * t + 4.0 * (alpha * alpha + beta * beta));
    q + 2.0 * q.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothnessConstants {
    /// Horizon below which the additive model is known to have a smooth
    /// density. `+inf` when `|b'| = 0` and the threshold holds, and possibly
    /// negative when it does not.
    pub t0: f64,
    /// `alpha^2 + beta^2 < (3 - 2 sqrt 2) / 12`.
    pub threshold_ok: bool,
    /// `C(t0)`; for a finite `t0` this is one up to rounding.
    pub c_of_t0: f64,
    /// Set when `|b'| = 0`, in which case `t0` is not a quotient.
    pub division_by_zero: bool,
}

/// `t0 = ((sqrt 2 - 1)^2 / 3 - 4 (alpha^2 + beta^2)) / |b'|^2`.
///
/// The numerator is evaluated as `4 * (threshold - (alpha^2 + beta^2))` so
/// that `t0 > 0` coincides bit-for-bit with `threshold_ok`.
pub fn smooth_density_horizon(alpha: f64, beta: f64, b_prime_sup: f64) -> SmoothnessConstants {
    let s = alpha * alpha + beta * beta;
    let threshold_ok = s < SMOOTHNESS_THRESHOLD;
    let numerator = 4.0 * (SMOOTHNESS_THRESHOLD - s);
    let b2 = b_prime_sup * b_prime_sup;
    if b2 == 0.0 {
        let t0 = if numerator > 0.0 {
            f64::INFINITY
        } else if numerator == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        return SmoothnessConstants {
            t0,
            threshold_ok,
            c_of_t0: smoothness_constant(0.0, alpha, beta, 0.0),
            division_by_zero: true,
        };
    }
    let t0 = numerator / b2;
    SmoothnessConstants {
        t0,
        threshold_ok,
        c_of_t0: smoothness_constant(t0, alpha, beta, b_prime_sup),
        division_by_zero: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HNormLowerBound {
    pub value: f64,
    /// `C(t) >= 1`: the bound degenerates and `value` is reported as zero.
    pub vacuous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("lower bound needs 0 < s <= t, got s = {s}, t = {t}")]
pub struct BoundDomainError {
    pub s: f64,
    pub t: f64,
}

/// Lower bound on `||D X_s||_H^2` for constant `sigma`:
/// `(1 - C(t)) sigma^2 s^2 / (2 (1 + 3 |b'|^2 s^2 + 3 (alpha^2 + beta^2)))`.
pub fn hnorm_lower_bound(
    s: f64,
    t: f64,
    sigma_const: f64,
    alpha: f64,
    beta: f64,
    b_prime_sup: f64,
) -> Result<HNormLowerBound, BoundDomainError> {
    if !(s > 0.0 && s <= t) {
        return Err(BoundDomainError { s, t });
    }
    let c = smoothness_constant(t, alpha, beta, b_prime_sup);
    if c >= 1.0 {
        return Ok(HNormLowerBound {
            value: 0.0,
            vacuous: true,
        });
    }
    let denom = 2.0
        * (1.0
            + 3.0 * b_prime_sup * b_prime_sup * s * s
            + 3.0 * (alpha * alpha + beta * beta));
    Ok(HNormLowerBound {
        value: (1.0 - c) * sigma_const * sigma_const * s * s / denom,
        vacuous: false,
    })
}

/// Lower bound on `sup_{s <= t} ||D X_s||_H^2` for constant `sigma`:
/// `sigma^2 t / (2 (1 + 3 (t^2 |b'|^2 + alpha^2 + beta^2)))`.
pub fn sup_hnorm_lower_bound(t: f64, sigma_const: f64, alpha: f64, beta: f64, b_prime_sup: f64) -> f64 {
    sigma_const * sigma_const * t
        / (2.0 * (1.0 + 3.0 * (t * t * b_prime_sup * b_prime_sup + alpha * alpha + beta * beta)))
}
