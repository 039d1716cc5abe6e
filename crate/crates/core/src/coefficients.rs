//! Drift and diffusion coefficients.
//!
//! Coefficients are real functions with a known derivative. The built-in
//! [`Coefficient`] registry also knows its own bound constants, so a
//! [`CoefficientModel`] assembled from built-ins never relies on
//! user-declared bounds.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

/// A real function together with its derivative.
pub trait ScalarFn: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;

    fn derivative(&self, x: f64) -> f64;

    /// Defaults to a central difference of [`ScalarFn::derivative`].
    fn second_derivative(&self, x: f64) -> f64 {
        let h = 1e-5 * (1.0 + x.abs());
        (self.derivative(x + h) - self.derivative(x - h)) / (2.0 * h)
    }

    /// Canonical text used in configuration fingerprints.
    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("tabulated coefficient needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("tabulated abscissae must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("coefficient parameter `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("declared bound violated: {what} at x = {x} (observed {observed}, declared {declared})")]
    BoundViolation {
        what: &'static str,
        x: f64,
        observed: f64,
        declared: f64,
    },
}

/// Piecewise cubic Hermite table with Fritsch-Carlson slopes.
///
/// The interpolant never overshoots the data on a segment; outside the
/// table it is extended by the end values.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneTable {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, CoefficientError> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(CoefficientError::TooFewPoints(n.min(ys.len())));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(CoefficientError::NonFinite("table"));
        }
        for k in 1..n {
            if xs[k] <= xs[k - 1] {
                return Err(CoefficientError::NotIncreasing(k));
            }
        }
        let secants: Vec<f64> = (0..n - 1)
            .map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            let (a, b) = (secants[k - 1], secants[k]);
            slopes[k] = if a * b <= 0.0 {
                0.0
            } else {
                // weighted harmonic mean (Fritsch-Butland)
                let h0 = xs[k] - xs[k - 1];
                let h1 = xs[k + 1] - xs[k];
                let w0 = 2.0 * h1 + h0;
                let w1 = h1 + 2.0 * h0;
                (w0 + w1) / (w0 / a + w1 / b)
            };
        }
        // Fritsch-Carlson limiter on every segment
        for k in 0..n - 1 {
            let d = secants[k];
            if d == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / d;
            let b = slopes[k + 1] / d;
            if a < 0.0 {
                slopes[k] = 0.0;
            }
            if b < 0.0 {
                slopes[k + 1] = 0.0;
            }
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[k] = tau * a * d;
                slopes[k + 1] = tau * b * d;
            }
        }
        Ok(MonotoneTable { xs, ys, slopes })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    fn segment(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return None;
        }
        let k = self.xs.partition_point(|&v| v <= x);
        Some(k.saturating_sub(1).min(n - 2))
    }

    /// Hermite basis evaluation on segment `k` at local coordinate `u`.
    fn hermite(&self, k: usize, x: f64) -> (f64, f64, f64) {
        let h = self.xs[k + 1] - self.xs[k];
        let u = (x - self.xs[k]) / h;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        let value = (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * m1;
        let d1 = ((6.0 * u2 - 6.0 * u) * y0
            + (3.0 * u2 - 4.0 * u + 1.0) * m0
            + (-6.0 * u2 + 6.0 * u) * y1
            + (3.0 * u2 - 2.0 * u) * m1)
            / h;
        let d2 = ((12.0 * u - 6.0) * y0
            + (6.0 * u - 4.0) * m0
            + (-12.0 * u + 6.0) * y1
            + (6.0 * u - 2.0) * m1)
            / (h * h);
        (value, d1, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.segment(x) {
            Some(k) => self.hermite(k, x).0,
            None if x < self.xs[0] => self.ys[0],
            None => self.ys[self.ys.len() - 1],
        }
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.segment(x).map_or(0.0, |k| self.hermite(k, x).1)
    }

    fn eval_second(&self, x: f64) -> f64 {
        self.segment(x).map_or(0.0, |k| self.hermite(k, x).2)
    }

    /// Exact sup of `|f'|`: on each segment `f'` is a quadratic.
    pub fn derivative_sup(&self) -> f64 {
        let mut sup = 0.0f64;
        for k in 0..self.xs.len() - 1 {
            let (x0, x1) = (self.xs[k], self.xs[k + 1]);
            let mut candidates = vec![x0, x1];
            // vertex of the quadratic derivative
            let (_, _, d2a) = self.hermite(k, x0);
            let (_, _, d2b) = self.hermite(k, x1);
            if d2a != d2b {
                let u = d2a / (d2a - d2b);
                if (0.0..=1.0).contains(&u) {
                    candidates.push(x0 + u * (x1 - x0));
                }
            }
            for x in candidates {
                sup = sup.max(self.hermite(k, x).1.abs());
            }
        }
        sup
    }

    /// `inf |f|`; each segment stays between its end values.
    pub fn abs_inf(&self) -> f64 {
        let mut inf = f64::INFINITY;
        for k in 0..self.xs.len() - 1 {
            let (a, b) = (self.ys[k], self.ys[k + 1]);
            let v = if a * b <= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
            inf = inf.min(v);
        }
        inf
    }
}

/// Named built-in coefficient families.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    /// `value`
    Constant { value: f64 },
    /// `clamp(intercept + slope * x, lower, upper)`
    AffineClipped {
        intercept: f64,
        slope: f64,
        lower: f64,
        upper: f64,
    },
    /// `offset + amplitude * sin(frequency * x + phase)`
    Sinusoidal {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `lower + (upper - lower) / (1 + exp(-rate * (x - center)))`
    Logistic {
        lower: f64,
        upper: f64,
        rate: f64,
        center: f64,
    },
    Tabulated(MonotoneTable),
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn sinusoidal(offset: f64, amplitude: f64, frequency: f64, phase: f64) -> Self {
        Coefficient::Sinusoidal {
            offset,
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, CoefficientError> {
        MonotoneTable::new(xs, ys).map(Coefficient::Tabulated)
    }

    fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Coefficient::Constant { value } => vec![("value", value)],
            Coefficient::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            } => vec![
                ("intercept", intercept),
                ("slope", slope),
                ("lower", lower),
                ("upper", upper),
            ],
            Coefficient::Sinusoidal {
                offset,
                amplitude,
                frequency,
                phase,
            } => vec![
                ("offset", offset),
                ("amplitude", amplitude),
                ("frequency", frequency),
                ("phase", phase),
            ],
            Coefficient::Logistic {
                lower,
                upper,
                rate,
                center,
            } => vec![("lower", lower), ("upper", upper), ("rate", rate), ("center", center)],
            Coefficient::Tabulated(_) => vec![],
        }
    }

    /// Rejects non-finite parameters and inverted clip ranges.
    pub fn validate(&self) -> Result<(), CoefficientError> {
        for (name, v) in self.params() {
            if !v.is_finite() {
                return Err(CoefficientError::NonFinite(name));
            }
        }
        if let Coefficient::AffineClipped { lower, upper, .. } = *self {
            if lower > upper {
                return Err(CoefficientError::NotIncreasing(0));
            }
        }
        Ok(())
    }

    /// `sup |f'|` over the real line.
    pub fn derivative_sup(&self) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::AffineClipped { slope, lower, upper, .. } => {
                if lower < upper {
                    slope.abs()
                } else {
                    0.0
                }
            }
            Coefficient::Sinusoidal {
                amplitude, frequency, ..
            } => (amplitude * frequency).abs(),
            Coefficient::Logistic {
                lower, upper, rate, ..
            } => ((upper - lower) * rate).abs() / 4.0,
            Coefficient::Tabulated(t) => t.derivative_sup(),
        }
    }

    /// `inf |f|` over the real line.
    pub fn abs_inf(&self) -> f64 {
        let straddle = |a: f64, b: f64| {
            if a.min(b) <= 0.0 && a.max(b) >= 0.0 {
                0.0
            } else {
                a.abs().min(b.abs())
            }
        };
        match self {
            Coefficient::Constant { value } => value.abs(),
            Coefficient::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            } => {
                if *slope == 0.0 {
                    intercept.clamp(*lower, *upper).abs()
                } else {
                    straddle(*lower, *upper)
                }
            }
            Coefficient::Sinusoidal {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                if *frequency == 0.0 {
                    (offset + amplitude * phase.sin()).abs()
                } else {
                    (offset.abs() - amplitude.abs()).max(0.0)
                }
            }
            Coefficient::Logistic {
                lower, upper, rate, ..
            } => {
                if *rate == 0.0 {
                    (0.5 * (lower + upper)).abs()
                } else {
                    straddle(*lower, *upper)
                }
            }
            Coefficient::Tabulated(t) => t.abs_inf(),
        }
    }
}

impl ScalarFn for Coefficient {
    fn value(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            } => (intercept + slope * x).clamp(*lower, *upper),
            Coefficient::Sinusoidal {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (frequency * x + phase).sin(),
            Coefficient::Logistic {
                lower,
                upper,
                rate,
                center,
            } => lower + (upper - lower) / (1.0 + (-rate * (x - center)).exp()),
            Coefficient::Tabulated(t) => t.eval(x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } => 0.0,
            Coefficient::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            } => {
                let y = intercept + slope * x;
                if y > *lower && y < *upper {
                    *slope
                } else {
                    0.0
                }
            }
            Coefficient::Sinusoidal {
                amplitude,
                frequency,
                phase,
                ..
            } => amplitude * frequency * (frequency * x + phase).cos(),
            Coefficient::Logistic {
                lower,
                upper,
                rate,
                center,
            } => {
                let s = 1.0 / (1.0 + (-rate * (x - center)).exp());
                (upper - lower) * rate * s * (1.0 - s)
            }
            Coefficient::Tabulated(t) => t.eval_derivative(x),
        }
    }

    fn second_derivative(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant { .. } | Coefficient::AffineClipped { .. } => 0.0,
            Coefficient::Sinusoidal {
                amplitude,
                frequency,
                phase,
                ..
            } => -amplitude * frequency * frequency * (frequency * x + phase).sin(),
            Coefficient::Logistic {
                lower,
                upper,
                rate,
                center,
            } => {
                let s = 1.0 / (1.0 + (-rate * (x - center)).exp());
                (upper - lower) * rate * rate * s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Coefficient::Tabulated(t) => t.eval_second(x),
        }
    }
}

/// Bound constants of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientBounds {
    pub lipschitz_k: f64,
    pub b_prime_sup: f64,
    pub sigma_prime_sup: f64,
    /// `inf |sigma|`; zero is allowed.
    pub sigma_inf: f64,
}

/// The pair `(b, sigma)` with derivative information and bound constants.
#[derive(Debug, Clone)]
pub struct CoefficientModel {
    b: Arc<dyn ScalarFn>,
    sigma: Arc<dyn ScalarFn>,
    bounds: CoefficientBounds,
}

impl CoefficientModel {
    /// Builds a model from built-ins; bounds are derived, not declared.
    pub fn from_builtins(b: Coefficient, sigma: Coefficient) -> Result<Self, CoefficientError> {
        b.validate()?;
        sigma.validate()?;
        let b_prime_sup = b.derivative_sup();
        let sigma_prime_sup = sigma.derivative_sup();
        let bounds = CoefficientBounds {
            lipschitz_k: b_prime_sup.max(sigma_prime_sup),
            b_prime_sup,
            sigma_prime_sup,
            sigma_inf: sigma.abs_inf(),
        };
        Ok(CoefficientModel {
            b: Arc::new(b),
            sigma: Arc::new(sigma),
            bounds,
        })
    }

    /// Builds a model from arbitrary functions with user-declared bounds.
    /// Use [`CoefficientModel::check_bounds`] to spot-check them.
    pub fn with_bounds(
        b: Arc<dyn ScalarFn>,
        sigma: Arc<dyn ScalarFn>,
        bounds: CoefficientBounds,
    ) -> Self {
        CoefficientModel { b, sigma, bounds }
    }

    /// `b = 0`, `sigma = 1`: plain Brownian driver.
    pub fn brownian() -> Self {
        Self::from_builtins(Coefficient::constant(0.0), Coefficient::constant(1.0))
            .expect("constants are valid")
    }

    /// Constant `sigma` with drift `b`.
    pub fn additive(b: Coefficient, sigma: f64) -> Result<Self, CoefficientError> {
        Self::from_builtins(b, Coefficient::constant(sigma))
    }

    /// `b(x) = 0.5 cos x`, `sigma(x) = 1 + 0.5 sin x`; smooth, bounded,
    /// `inf sigma = 0.5`.
    pub fn generic_smooth() -> Self {
        Self::from_builtins(
            Coefficient::sinusoidal(0.0, 0.5, 1.0, std::f64::consts::FRAC_PI_2),
            Coefficient::sinusoidal(1.0, 0.5, 1.0, 0.0),
        )
        .expect("built-in parameters are finite")
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.b.value(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.sigma.value(x)
    }

    #[inline]
    pub fn b_prime(&self, x: f64) -> f64 {
        self.b.derivative(x)
    }

    #[inline]
    pub fn sigma_prime(&self, x: f64) -> f64 {
        self.sigma.derivative(x)
    }

    pub fn sigma_second(&self, x: f64) -> f64 {
        self.sigma.second_derivative(x)
    }

    pub fn drift_fn(&self) -> &Arc<dyn ScalarFn> {
        &self.b
    }

    pub fn diffusion_fn(&self) -> &Arc<dyn ScalarFn> {
        &self.sigma
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    pub fn describe(&self) -> String {
        format!("b={};sigma={}", self.b.describe(), self.sigma.describe())
    }

    /// Spot-checks the declared bounds on `n` equispaced points of `[lo, hi]`.
    pub fn check_bounds(&self, lo: f64, hi: f64, n: usize) -> Result<(), CoefficientError> {
        let slack = |d: f64| d * (1.0 + 1e-9) + 1e-12;
        let n = n.max(2);
        for k in 0..n {
            let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let bp = self.b_prime(x).abs();
            if bp > slack(self.bounds.b_prime_sup) {
                return Err(CoefficientError::BoundViolation {
                    what: "|b'|",
                    x,
                    observed: bp,
                    declared: self.bounds.b_prime_sup,
                });
            }
            let sp = self.sigma_prime(x).abs();
            if sp > slack(self.bounds.sigma_prime_sup) {
                return Err(CoefficientError::BoundViolation {
                    what: "|sigma'|",
                    x,
                    observed: sp,
                    declared: self.bounds.sigma_prime_sup,
                });
            }
            let s = self.sigma(x).abs();
            if s < self.bounds.sigma_inf * (1.0 - 1e-9) - 1e-12 {
                return Err(CoefficientError::BoundViolation {
                    what: "|sigma|",
                    x,
                    observed: s,
                    declared: self.bounds.sigma_inf,
                });
            }
        }
        Ok(())
    }
}
