//! Reduction of multiplicative noise to additive noise.
//!
//! With `G(y) = ∫_x^y du/σ(u)` and `Y = G(X)`, Itô's formula turns the
//! perturbed equation for `X` into one for `Y` with unit diffusion and
//! drift `b̃(z) = b(y)/σ(y) − σ′(y)/2` at `y = G⁻¹(z)`. Because `G` is
//! increasing, `max G(X) = G(max X)` and likewise for the minimum, so the
//! perturbation terms carry over unchanged.
//!
//! `G` is tabulated on a uniform grid by adaptive Simpson quadrature and
//! interpolated by cubic Hermite splines whose node slopes are the exact
//! derivative `1/σ`. Queries outside the table fall back to quadrature
//! from the nearest end. A negative `σ` is handled by the symmetry
//! `(σ, W) → (−σ, −W)`.

use crate::coefficients::{Coefficient, CoefficientBounds, CoefficientModel, ScalarFn};
use crate::params::PerturbationParams;
use crate::quadrature::{adaptive_simpson, QuadratureFail};
use crate::rng;
use crate::simulate::{self, SimConfig, SimError};
use serde::Serialize;
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

pub const TABLE_NODES: usize = 4096;
const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LampertiError {
    #[error("sigma({y}) = {value} is not bounded away from zero with a fixed sign")]
    SigmaNotPositive { y: f64, value: f64 },
    #[error("tabulation range [{lo}, {hi}] is empty or not finite")]
    InvalidRange { lo: f64, hi: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureFail),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl LampertiError {
    pub fn code(&self) -> &'static str {
        match self {
            LampertiError::SigmaNotPositive { .. } => "SIGMA_NOT_POSITIVE",
            LampertiError::InvalidRange { .. } => "INVALID_INPUT",
            LampertiError::Quadrature(_) => "QUADRATURE_FAIL",
            LampertiError::Simulation(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transform {
    model: CoefficientModel,
    anchor: f64,
    /// `+1` when `σ > 0`, `−1` when `σ < 0`.
    orientation: f64,
    ys: Vec<f64>,
    /// `∫_{ys[0]}^{ys[k]} du/σ̂`.
    cs: Vec<f64>,
    slopes: Vec<f64>,
    offset: f64,
}

/// Tabulates `G` for `model` anchored at `x`; the range is widened to
/// contain `x`.
pub fn build_transform(model: &CoefficientModel, x: f64, range: (f64, f64)) -> Result<Transform, LampertiError> {
    let lo = range.0.min(x);
    let hi = range.1.max(x);
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(LampertiError::InvalidRange { lo, hi });
    }
    let n = TABLE_NODES;
    let h = (hi - lo) / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|k| if k == n - 1 { hi } else { lo + k as f64 * h }).collect();
    let probe = |y: f64| {
        let v = model.sigma(y);
        (v.is_finite() && v != 0.0).then_some(v.signum()).ok_or(LampertiError::SigmaNotPositive { y, value: v })
    };
    let orientation = probe(ys[0])?;
    for k in 0..n {
        let mid = if k + 1 < n { 0.5 * (ys[k] + ys[k + 1]) } else { ys[k] };
        for y in [ys[k], mid] {
            if probe(y)? != orientation {
                return Err(LampertiError::SigmaNotPositive {
                    y,
                    value: model.sigma(y),
                });
            }
        }
    }
    let inv = |u: f64| orientation / model.sigma(u);
    let slopes: Vec<f64> = ys.iter().map(|&y| inv(y)).collect();
    let mut cs = Vec::with_capacity(n);
    cs.push(0.0);
    let cell_tol = QUAD_TOL / n as f64;
    for k in 0..n - 1 {
        let piece = adaptive_simpson(inv, ys[k], ys[k + 1], cell_tol)?;
        cs.push(cs[k] + piece);
    }
    let mut t = Transform {
        model: model.clone(),
        anchor: x,
        orientation,
        ys,
        cs,
        slopes,
        offset: 0.0,
    };
    t.offset = t.cumulative(x).0;
    Ok(t)
}

fn hermite(c0: f64, c1: f64, s0: f64, s1: f64, h: f64, u: f64) -> (f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let value = (2.0 * u3 - 3.0 * u2 + 1.0) * c0
        + (u3 - 2.0 * u2 + u) * h * s0
        + (-2.0 * u3 + 3.0 * u2) * c1
        + (u3 - u2) * h * s1;
    let slope = ((6.0 * u2 - 6.0 * u) * c0
        + (3.0 * u2 - 4.0 * u + 1.0) * h * s0
        + (-6.0 * u2 + 6.0 * u) * c1
        + (3.0 * u2 - 2.0 * u) * h * s1)
        / h;
    (value, slope)
}

impl Transform {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn range(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }

    fn sigma_hat(&self, y: f64) -> f64 {
        self.orientation * self.model.sigma(y)
    }

    fn inv_sigma(&self, u: f64) -> f64 {
        let s = self.sigma_hat(u);
        if s > 0.0 {
            1.0 / s
        } else {
            f64::NAN
        }
    }

    // ∫_{ys[0]}^y du/σ̂ and its derivative in y.
    fn cumulative(&self, y: f64) -> (f64, f64) {
        let n = self.ys.len();
        let (lo, hi) = self.range();
        if y < lo {
            let tail = adaptive_simpson(|u| self.inv_sigma(u), y, lo, QUAD_TOL).unwrap_or(f64::NAN);
            return (-tail, self.inv_sigma(y));
        }
        if y > hi {
            let tail = adaptive_simpson(|u| self.inv_sigma(u), hi, y, QUAD_TOL).unwrap_or(f64::NAN);
            return (self.cs[n - 1] + tail, self.inv_sigma(y));
        }
        let k = match self.ys.partition_point(|&v| v <= y) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.ys[k + 1] - self.ys[k];
        let u = (y - self.ys[k]) / h;
        hermite(self.cs[k], self.cs[k + 1], self.slopes[k], self.slopes[k + 1], h, u)
    }

    /// `G(y) = ∫_x^y du/σ̂(u)`.
    pub fn g(&self, y: f64) -> f64 {
        self.cumulative(y).0 - self.offset
    }

    /// `G⁻¹(z)` by bracketing and safeguarded Newton.
    pub fn g_inv(&self, z: f64) -> f64 {
        if !z.is_finite() {
            return f64::NAN;
        }
        let target = z + self.offset;
        let n = self.ys.len();
        let (lo, hi) = self.range();
        let (mut a, mut b) = if target < self.cs[0] {
            let mut step = hi - lo;
            let mut a = lo - step;
            while self.cumulative(a).0 > target {
                step *= 2.0;
                a -= step;
                if !a.is_finite() || step > 1e12 {
                    return f64::NAN;
                }
            }
            (a, lo)
        } else if target > self.cs[n - 1] {
            let mut step = hi - lo;
            let mut b = hi + step;
            while self.cumulative(b).0 < target {
                step *= 2.0;
                b += step;
                if !b.is_finite() || step > 1e12 {
                    return f64::NAN;
                }
            }
            (hi, b)
        } else {
            let k = self.cs.partition_point(|&c| c <= target).clamp(1, n - 1);
            (self.ys[k - 1], self.ys[k])
        };
        let mut y = 0.5 * (a + b);
        for _ in 0..200 {
            let (c, dc) = self.cumulative(y);
            let f = c - target;
            if f == 0.0 {
                return y;
            }
            if f < 0.0 {
                a = y;
            } else {
                b = y;
            }
            let newton = y - f / dc;
            let next = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1e-300) || b - a <= f64::EPSILON * y.abs() {
                return next;
            }
            y = next;
        }
        y
    }

    /// `b̃(z) = b(y)/σ̂(y) − σ̂′(y)/2` at `y = G⁻¹(z)`.
    pub fn b_tilde(&self, z: f64) -> f64 {
        self.b_tilde_at(self.g_inv(z))
    }

    fn b_tilde_at(&self, y: f64) -> f64 {
        let s = self.sigma_hat(y);
        let ds = self.orientation * self.model.sigma_prime(y);
        self.model.b(y) / s - 0.5 * ds
    }

    /// `b̃′(z) = σ̂(y)·[(b′σ̂ − bσ̂′)/σ̂² − σ̂″/2]` at `y = G⁻¹(z)`.
    pub fn b_tilde_prime(&self, z: f64) -> f64 {
        self.b_tilde_prime_at(self.g_inv(z))
    }

    fn b_tilde_prime_at(&self, y: f64) -> f64 {
        let s = self.sigma_hat(y);
        let ds = self.orientation * self.model.sigma_prime(y);
        let dds = self.orientation * self.model.sigma_second(y);
        let (b, db) = (self.model.b(y), self.model.b_prime(y));
        s * ((db * s - b * ds) / (s * s) - 0.5 * dds)
    }

    /// The additive model `(b̃, 1)`; `sup|b̃′|` is sampled on the table nodes.
    pub fn reduced_model(&self) -> CoefficientModel {
        let b_prime_sup = self.ys.iter().map(|&y| self.b_tilde_prime_at(y).abs()).fold(0.0, f64::max);
        let bounds = CoefficientBounds {
            lipschitz_k: b_prime_sup,
            b_prime_sup,
            sigma_prime_sup: 0.0,
            sigma_inf: 1.0,
        };
        CoefficientModel::with_bounds(
            Arc::new(ReducedDrift(self.clone())),
            Arc::new(Coefficient::constant(1.0)),
            bounds,
        )
    }

    /// CSV rows `(y, G(y))` at the table nodes.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let rows = self.ys.iter().zip(&self.cs).map(|(&y, &c)| [y, c - self.offset]);
        crate::export::write_real_table(out, &["y", "g"], rows)
    }
}

/// `b̃` as a coefficient function.
#[derive(Clone)]
pub struct ReducedDrift(Transform);

impl std::fmt::Debug for ReducedDrift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ReducedDrift(anchor={}, model={})", self.0.anchor, self.0.model.describe())
    }
}

impl ScalarFn for ReducedDrift {
    fn value(&self, z: f64) -> f64 {
        self.0.b_tilde(z)
    }

    fn derivative(&self, z: f64) -> f64 {
        self.0.b_tilde_prime(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub n_steps: usize,
    pub dt: f64,
    /// `sup_k |G(x_k) − y_k|`.
    pub sup_discrepancy: f64,
    /// `sup_k` gap between running extremes of `G(x)` and `G` of running extremes.
    pub commutation_error: f64,
    /// Start parameter of the reduced equation, `(1−α−β)·G(X_0)`.
    pub reduced_x0: f64,
    pub orientation: f64,
    pub range: (f64, f64),
}

/// Simulates `X` and the reduced `Y` on the configured driver and compares
/// `G(X)` with `Y` on the grid.
pub fn pathwise_reduction_check(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
) -> Result<ReductionReport, LampertiError> {
    cfg.validate()?;
    reduction_with_driver(model, params, cfg, &cfg.driver())
}

pub fn reduction_with_driver(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    dw: &[f64],
) -> Result<ReductionReport, LampertiError> {
    let xpath = simulate::simulate_with_driver(model, params, cfg, dw)?;
    let (xmin, xmax) = xpath.x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let sigma_max = xpath.x.iter().map(|&v| model.sigma(v).abs()).fold(0.0, f64::max);
    let margin = 5.0 * sigma_max * cfg.horizon.sqrt();
    let transform = build_transform(model, cfg.x0, (xmin - margin, xmax + margin))?;
    let gx: Vec<f64> = xpath.x.iter().map(|&v| transform.g(v)).collect();
    let reduced_x0 = params.gap() * gx[0];
    let ydw: Vec<f64> = dw.iter().map(|d| transform.orientation * d).collect();
    let ycfg = SimConfig {
        x0: reduced_x0,
        ..cfg.clone()
    };
    let ypath = simulate::simulate_with_driver(&transform.reduced_model(), params, &ycfg, &ydw)?;
    let sup_discrepancy = gx.iter().zip(&ypath.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (gmax, _) = crate::skorokhod::running_max(&gx);
    let (gmin, _) = crate::skorokhod::running_min(&gx);
    let commutation_error = (0..gx.len())
        .map(|k| {
            (gmax[k] - transform.g(xpath.m[k]))
                .abs()
                .max((gmin[k] - transform.g(xpath.i[k])).abs())
        })
        .fold(0.0, f64::max);
    Ok(ReductionReport {
        n_steps: cfg.n_steps,
        dt: cfg.dt(),
        sup_discrepancy,
        commutation_error,
        reduced_x0,
        orientation: transform.orientation,
        range: transform.range(),
    })
}

/// Reduction check on grids with `n, 2n, ..., 2^{levels−1}n` steps, all
/// observing one Brownian path drawn on the finest grid.
pub fn reduction_refinement(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    levels: usize,
) -> Result<Vec<ReductionReport>, LampertiError> {
    cfg.validate()?;
    let finest = cfg.n_steps << (levels.max(1) - 1);
    let fine = rng::brownian_increments(finest, cfg.horizon, cfg.seed, cfg.path_index);
    (0..levels)
        .map(|l| {
            let factor = finest / (cfg.n_steps << l);
            let level_cfg = SimConfig {
                n_steps: cfg.n_steps << l,
                ..cfg.clone()
            };
            reduction_with_driver(model, params, &level_cfg, &rng::aggregate_increments(&fine, factor))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct InverseSine;

    // σ(u) = 1/(1 + 0.5 sin u), so 1/σ has antiderivative u − 0.5 cos u.
    impl ScalarFn for InverseSine {
        fn value(&self, u: f64) -> f64 {
            1.0 / (1.0 + 0.5 * u.sin())
        }
        fn derivative(&self, u: f64) -> f64 {
            let d = 1.0 + 0.5 * u.sin();
            -0.5 * u.cos() / (d * d)
        }
    }

    fn model_with_sigma(sigma: Arc<dyn ScalarFn>, b: Coefficient) -> CoefficientModel {
        CoefficientModel::with_bounds(
            Arc::new(b),
            sigma,
            CoefficientBounds {
                lipschitz_k: 1.0,
                b_prime_sup: 1.0,
                sigma_prime_sup: 1.0,
                sigma_inf: 0.5,
            },
        )
    }

    #[test]
    fn unit_sigma_is_a_shift() {
        let b = Coefficient::sinusoidal(0.0, 0.5, 1.0, 0.3);
        let model = CoefficientModel::additive(b.clone(), 1.0).unwrap();
        let t = build_transform(&model, 0.7, (-3.0, 3.0)).unwrap();
        for y in [-2.9, -0.5, 0.7, 1.3, 2.999, 5.0, -6.0] {
            assert!((t.g(y) - (y - 0.7)).abs() < 1e-12, "{y}");
            assert!((t.g_inv(y - 0.7) - y).abs() < 1e-12);
            assert!((t.b_tilde(y) - b.value(y + 0.7)).abs() < 1e-12);
        }
        assert_eq!(t.g(0.7), 0.0);
    }

    #[test]
    fn constant_sigma_two() {
        let b = Coefficient::sinusoidal(0.1, 0.5, 1.0, 0.0);
        let model = CoefficientModel::additive(b.clone(), 2.0).unwrap();
        let t = build_transform(&model, -0.4, (-2.0, 2.0)).unwrap();
        for z in [-0.8, 0.0, 0.3, 0.9] {
            let y = 2.0 * z - 0.4;
            assert!((t.g(y) - z).abs() < 1e-12);
            assert!((t.b_tilde(z) - b.value(y) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form_antiderivative() {
        let model = model_with_sigma(Arc::new(InverseSine), Coefficient::constant(0.0));
        let x = 0.3;
        let t = build_transform(&model, x, (-4.0, 4.0)).unwrap();
        let exact = |y: f64| (y - x) - 0.5 * (y.cos() - x.cos());
        for k in 0..=400 {
            let y = -5.0 + k as f64 * 0.025;
            assert!((t.g(y) - exact(y)).abs() < 1e-8, "{y}: {} vs {}", t.g(y), exact(y));
        }
    }

    #[test]
    fn round_trip_monotone_and_lipschitz() {
        let model = CoefficientModel::generic_smooth();
        let t = build_transform(&model, 0.2, (-6.0, 6.0)).unwrap();
        let inf = model.bounds().sigma_inf;
        let mut prev = f64::NEG_INFINITY;
        let mut prev_y = f64::NAN;
        for k in 0..=2000 {
            let y = -6.0 + k as f64 * 0.006;
            let g = t.g(y);
            assert!(g > prev);
            if prev.is_finite() {
                assert!(g - prev <= (y - prev_y) / inf + 1e-12);
            }
            assert!((t.g_inv(g) - y).abs() <= 1e-10);
            prev = g;
            prev_y = y;
        }
        for y in [-9.0, 8.5] {
            assert!((t.g_inv(t.g(y)) - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn reduced_drift_derivative_matches_differences() {
        let model = CoefficientModel::generic_smooth();
        let t = build_transform(&model, 0.0, (-5.0, 5.0)).unwrap();
        for z in [-2.0, -0.3, 0.0, 1.1, 2.5] {
            let h = 1e-5;
            let fd = (t.b_tilde(z + h) - t.b_tilde(z - h)) / (2.0 * h);
            assert!((fd - t.b_tilde_prime(z)).abs() < 1e-6, "{z}: {fd} vs {}", t.b_tilde_prime(z));
        }
    }

    #[test]
    fn sigma_sign_handling() {
        let zero_crossing = CoefficientModel::from_builtins(
            Coefficient::constant(0.0),
            Coefficient::sinusoidal(0.0, 1.0, 1.0, 0.0),
        )
        .unwrap();
        let err = build_transform(&zero_crossing, 0.5, (0.5, 4.0)).unwrap_err();
        assert_eq!(err.code(), "SIGMA_NOT_POSITIVE");
        let negative = CoefficientModel::additive(Coefficient::constant(0.0), -2.0).unwrap();
        let t = build_transform(&negative, 0.0, (-1.0, 1.0)).unwrap();
        assert_eq!(t.orientation(), -1.0);
        assert!((t.g(1.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unit_sigma_reduction_is_exact() {
        let b = Coefficient::sinusoidal(0.0, 0.5, 1.0, 0.3);
        let model = CoefficientModel::additive(b, 1.0).unwrap();
        let params = PerturbationParams::new(0.3, 0.2).unwrap();
        let cfg = SimConfig {
            x0: 0.4,
            n_steps: 500,
            seed: 12,
            ..Default::default()
        };
        let r = pathwise_reduction_check(&model, &params, &cfg).unwrap();
        assert!(r.sup_discrepancy <= cfg.fixed_point_tol, "{}", r.sup_discrepancy);
        assert_eq!(r.commutation_error, 0.0);
    }

    #[test]
    fn negative_sigma_reduction() {
        let model = CoefficientModel::from_builtins(
            Coefficient::constant(0.2),
            Coefficient::sinusoidal(-2.0, 0.5, 1.0, 0.0),
        )
        .unwrap();
        let params = PerturbationParams::new(0.2, -0.3).unwrap();
        let cfg = SimConfig {
            x0: 0.1,
            n_steps: 400,
            seed: 3,
            ..Default::default()
        };
        let coarse = pathwise_reduction_check(&model, &params, &cfg).unwrap();
        assert_eq!(coarse.orientation, -1.0);
        assert_eq!(coarse.commutation_error, 0.0);
        assert!(coarse.sup_discrepancy < 0.5);
    }

    #[test]
    fn refinement_uses_one_brownian_path() {
        let model = CoefficientModel::from_builtins(
            Coefficient::constant(0.0),
            Coefficient::sinusoidal(2.0, 1.0, 1.0, 0.0),
        )
        .unwrap();
        let params = PerturbationParams::new(0.3, 0.2).unwrap();
        let cfg = SimConfig {
            x0: 0.5,
            n_steps: 250,
            seed: 1,
            ..Default::default()
        };
        let levels = reduction_refinement(&model, &params, &cfg, 3).unwrap();
        assert_eq!(levels.iter().map(|r| r.n_steps).collect::<Vec<_>>(), vec![250, 500, 1000]);
        for r in &levels {
            assert_eq!(r.commutation_error, 0.0);
            assert!(r.sup_discrepancy.is_finite());
        }
    }
}
