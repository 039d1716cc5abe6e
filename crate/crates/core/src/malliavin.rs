//! Discrete Malliavin derivative of a simulated path.
//!
//! Row `j` of the field (`1 ≤ j ≤ n`) is the derivative of the path with
//! respect to the Brownian increment `ΔW_{j−1}`, which lives on
//! `(t_{j−1}, t_j]`; it plays the role of `D_r X` for `r` in that cell.
//! Differentiating the per-step scheme gives, for `k ≥ j`,
//!
//! ```text
//! (1 − α[A_k = k] − β[B_k = k]) d[j][k]
//!     = σ(x_{j−1}) + Σ_{i=j}^{k−1} (σ′(x_i)ΔW_i + b′(x_i)Δt) d[j][i]
//!       + α d[j][A_k][j ≤ A_k < k] + β d[j][B_k][j ≤ B_k < k]
//! ```
//!
//! where `A_k`, `B_k` are the earliest grid indices attaining the running
//! max and min at `k`. The derivative of the running max is the derivative
//! at its argmax, which is zero when the argmax precedes the perturbation.
//! A running sum over `i` keeps each row `O(n)`.

use crate::coefficients::CoefficientModel;
use crate::params::{self, PerturbationParams};
use crate::simulate::{self, ExtremumMonitoring, Path, SimConfig, SimError};
use rayon::prelude::*;
use serde::Serialize;
use std::io::{self, Write};
use std::ops::RangeInclusive;
use thiserror::Error;

/// Default cap on the number of steps for a full field (memory is `n²/2`).
pub const DEFAULT_MAX_STEPS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MalliavinError {
    #[error("path has {n} steps, above the field limit of {limit}")]
    TooManySteps { n: usize, limit: usize },
    #[error("the derivative field needs grid-monitored extremes")]
    BridgeMonitored,
    #[error("non-finite derivative at row {j}, column {k}")]
    NonFinite { j: usize, k: usize },
    #[error("time index {k} outside 0..={n}")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("invalid perturbation window: need 0 ≤ r_lo < r_hi ≤ T and eps > 0")]
    BadWindow,
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl MalliavinError {
    pub fn code(&self) -> &'static str {
        match self {
            MalliavinError::NonFinite { .. } => "NUMERICAL_FAULT",
            MalliavinError::Simulation(e) => e.code(),
            _ => "INVALID_INPUT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeField {
    dt: f64,
    n: usize,
    /// Rows `j = 1..=n`, row `j` holding columns `k = j..=n`.
    data: Vec<f64>,
    argmax: Vec<usize>,
    argmin: Vec<usize>,
}

fn row_offset(n: usize, j: usize) -> usize {
    // rows 1..j hold n, n−1, ..., n−j+2 entries
    let r = j - 1;
    r * n - r * r.saturating_sub(1) / 2
}

impl DerivativeField {
    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `d[j][k]` for `1 ≤ j ≤ k ≤ n`, else `None`.
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        (j >= 1 && j <= k && k <= self.n).then(|| self.data[row_offset(self.n, j) + (k - j)])
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let start = row_offset(self.n, j);
        &self.data[start..start + self.n - j + 1]
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn argmin(&self) -> &[usize] {
        &self.argmin
    }

    /// Grid indices where the running argmax moves.
    pub fn max_jumps(&self) -> Vec<usize> {
        jumps(&self.argmax)
    }

    /// Grid indices where the running argmin moves.
    pub fn min_jumps(&self) -> Vec<usize> {
        jumps(&self.argmin)
    }

    /// `Σ_{j≤k} d[j][k]²Δt` for every `k = 0..=n`.
    pub fn h_norm_profile(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        for j in 1..=self.n {
            for (off, d) in self.row(j).iter().enumerate() {
                out[j + off] += d * d;
            }
        }
        out.iter_mut().for_each(|v| *v *= self.dt);
        out
    }

    /// `Σ d[j][n]Δt` over rows whose cell ends in `(r_lo, r_hi]`.
    pub fn directional(&self, r_lo: f64, r_hi: f64) -> f64 {
        window(self.n, self.dt, r_lo, r_hi)
            .map(|j| self.get(j, self.n).expect("row in range"))
            .sum::<f64>()
            * self.dt
    }

    /// CSV triples `(j, k, d)`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        out.write_all(b"j,k,d\r\n")?;
        for j in 1..=self.n {
            for (off, d) in self.row(j).iter().enumerate() {
                write!(out, "{},{},{}\r\n", j, j + off, crate::export::real(*d))?;
            }
        }
        out.flush()
    }
}

fn jumps(arg: &[usize]) -> Vec<usize> {
    (1..arg.len()).filter(|&k| arg[k] != arg[k - 1]).collect()
}

// Rows j with r_lo < t_j ≤ r_hi, tolerant to rounding in k·Δt.
fn window(n: usize, dt: f64, r_lo: f64, r_hi: f64) -> RangeInclusive<usize> {
    let slack = 1e-9;
    let lo = ((r_lo / dt + slack).floor() as usize + 1).max(1);
    let hi = ((r_hi / dt + slack).floor() as usize).min(n);
    lo..=hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HNorm {
    pub t_index: usize,
    pub value: f64,
}

/// The derivative field of `path`, refusing paths above [`DEFAULT_MAX_STEPS`].
pub fn derivative_field(
    path: &Path,
    model: &CoefficientModel,
    params: &PerturbationParams,
) -> Result<DerivativeField, MalliavinError> {
    derivative_field_with_limit(path, model, params, DEFAULT_MAX_STEPS)
}

pub fn derivative_field_with_limit(
    path: &Path,
    model: &CoefficientModel,
    params: &PerturbationParams,
    max_steps: usize,
) -> Result<DerivativeField, MalliavinError> {
    let n = path.n_steps();
    if n > max_steps {
        return Err(MalliavinError::TooManySteps { n, limit: max_steps });
    }
    if path.monitoring != ExtremumMonitoring::Grid {
        return Err(MalliavinError::BridgeMonitored);
    }
    let (alpha, beta) = (params.alpha(), params.beta());
    let dt = path.dt;
    let dw = path.increments();
    let coef: Vec<f64> = (0..n)
        .map(|i| model.sigma_prime(path.x[i]) * dw[i] + model.b_prime(path.x[i]) * dt)
        .collect();
    let (am, an) = (&path.argmax, &path.argmin);
    let mut data = vec![0.0; n * (n + 1) / 2];
    for j in 1..=n {
        let start = row_offset(n, j);
        let row = &mut data[start..start + n - j + 1];
        let base = model.sigma(path.x[j - 1]);
        let mut acc = 0.0;
        for k in j..=n {
            if k > j {
                acc += coef[k - 1] * row[k - 1 - j];
            }
            let mut raw = base + acc;
            let mut divisor = 1.0;
            if am[k] == k {
                divisor -= alpha;
            } else if am[k] >= j {
                raw += alpha * row[am[k] - j];
            }
            if an[k] == k {
                divisor -= beta;
            } else if an[k] >= j {
                raw += beta * row[an[k] - j];
            }
            let d = raw / divisor;
            if !d.is_finite() {
                return Err(MalliavinError::NonFinite { j, k });
            }
            row[k - j] = d;
        }
    }
    Ok(DerivativeField {
        dt,
        n,
        data,
        argmax: am.clone(),
        argmin: an.clone(),
    })
}

/// `Σ_{j≤k} d[j][k]²Δt`.
pub fn h_norm(field: &DerivativeField, k: usize) -> Result<HNorm, MalliavinError> {
    if k > field.n {
        return Err(MalliavinError::IndexOutOfRange { k, n: field.n });
    }
    let value = (1..=k).map(|j| field.get(j, k).expect("j ≤ k").powi(2)).sum::<f64>() * field.dt;
    Ok(HNorm { t_index: k, value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalDerivative {
    /// `(X^ε_T − X_T)/ε`.
    pub value: f64,
    pub eps: f64,
    /// The difference was within 10 ulps of `X_T`.
    pub eps_too_small: bool,
}

/// Finite-difference derivative of `X_T` along the Cameron–Martin shift
/// `ε·∫₀^s 1_{(r_lo, r_hi]}(u)du` of the configured driver.
pub fn cameron_martin_directional(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    r_lo: f64,
    r_hi: f64,
    eps: f64,
) -> Result<DirectionalDerivative, MalliavinError> {
    cfg.validate()?;
    cameron_martin_with_driver(model, params, cfg, &cfg.driver(), r_lo, r_hi, eps)
}

pub fn cameron_martin_with_driver(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    dw: &[f64],
    r_lo: f64,
    r_hi: f64,
    eps: f64,
) -> Result<DirectionalDerivative, MalliavinError> {
    if !(0.0 <= r_lo && r_lo < r_hi && r_hi <= cfg.horizon * (1.0 + 1e-12) && eps > 0.0) {
        return Err(MalliavinError::BadWindow);
    }
    let dt = cfg.dt();
    let base = simulate::simulate_with_driver(model, params, cfg, dw)?.terminal();
    let mut shifted = dw.to_vec();
    for j in window(cfg.n_steps, dt, r_lo, r_hi) {
        shifted[j - 1] += eps * dt;
    }
    let bumped = simulate::simulate_with_driver(model, params, cfg, &shifted)?.terminal();
    let diff = bumped - base;
    let ulp = f64::EPSILON * base.abs().max(f64::MIN_POSITIVE);
    Ok(DirectionalDerivative {
        value: diff / eps,
        eps,
        eps_too_small: diff.abs() < 10.0 * ulp,
    })
}

/// H-norm profiles `k ↦ ‖DX_{t_k}‖²` of `n_paths` independent paths.
pub fn h_norm_profiles(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<Vec<Vec<f64>>, MalliavinError> {
    cfg.validate()?;
    if cfg.n_steps > DEFAULT_MAX_STEPS {
        return Err(MalliavinError::TooManySteps {
            n: cfg.n_steps,
            limit: DEFAULT_MAX_STEPS,
        });
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = simulate::simulate(model, params, &cfg.for_path(p))?;
            Ok(derivative_field(&path, model, params)?.h_norm_profile())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub n_paths: usize,
    pub t_index: usize,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
    pub threshold: f64,
    pub fraction_at_or_below_threshold: f64,
    pub fraction_zero: f64,
    /// `inf |σ| = 0`, outside the positivity hypothesis.
    pub hypothesis_violated: bool,
}

impl PositivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain record")
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of H-norms at one time index across an ensemble.
pub fn positivity_report(h_norms: &[f64], t_index: usize, threshold: f64, sigma_inf: f64) -> PositivityReport {
    assert!(!h_norms.is_empty(), "empty ensemble");
    let mut sorted = h_norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    PositivityReport {
        n_paths: sorted.len(),
        t_index,
        min: sorted[0],
        q05: quantile_sorted(&sorted, 0.05),
        median: quantile_sorted(&sorted, 0.5),
        q95: quantile_sorted(&sorted, 0.95),
        max: *sorted.last().unwrap(),
        threshold,
        fraction_at_or_below_threshold: sorted.iter().filter(|&&v| v <= threshold).count() as f64 / n,
        fraction_zero: sorted.iter().filter(|&&v| v == 0.0).count() as f64 / n,
        hypothesis_violated: !(sigma_inf > 0.0),
    }
}

/// Summary of H-norms at `t` from an ensemble of fields.
pub fn positivity_report_fields(
    fields: &[DerivativeField],
    t: f64,
    threshold: f64,
    sigma_inf: f64,
) -> Result<PositivityReport, MalliavinError> {
    let first = fields.first().ok_or(MalliavinError::BadWindow)?;
    let k = (t / first.dt).round() as usize;
    let values = fields
        .iter()
        .map(|f| h_norm(f, k).map(|h| h.value))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(positivity_report(&values, k, threshold, sigma_inf))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|h(t₂) − h(t₁)| / (C(t₂ − t₁)·max_{s≤t} h(s))`.
    pub worst_ratio: f64,
    pub worst_pair: (usize, usize),
}

/// Checks `|h(t₂) − h(t₁)| ≤ C(t₂ − t₁, α, β, b)·max_{s≤t} h(s)` for all
/// grid pairs `0 < t₁ < t₂ ≤ t_k`.
pub fn oscillation_check(profile: &[f64], dt: f64, k: usize, alpha: f64, beta: f64, b_prime_sup: f64) -> OscillationCheck {
    let sup = profile[..=k].iter().cloned().fold(0.0, f64::max);
    let mut out = OscillationCheck {
        pairs: 0,
        violations: 0,
        worst_ratio: 0.0,
        worst_pair: (0, 0),
    };
    for k1 in 1..k {
        for k2 in k1 + 1..=k {
            let c = params::smoothness_constant((k2 - k1) as f64 * dt, alpha, beta, b_prime_sup);
            let lhs = (profile[k2] - profile[k1]).abs();
            let rhs = c * sup;
            out.pairs += 1;
            if lhs > rhs {
                out.violations += 1;
            }
            let ratio = lhs / rhs;
            if ratio > out.worst_ratio {
                out.worst_ratio = ratio;
                out.worst_pair = (k1, k2);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;

    fn p(alpha: f64, beta: f64) -> PerturbationParams {
        PerturbationParams::new(alpha, beta).unwrap()
    }

    fn cfg(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_steps: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn packed_layout_round_trips() {
        for n in [1usize, 2, 5, 17] {
            let mut seen = vec![false; n * (n + 1) / 2];
            for j in 1..=n {
                for k in j..=n {
                    let idx = row_offset(n, j) + k - j;
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn unperturbed_field_is_one_and_hnorm_is_time() {
        let model = CoefficientModel::brownian();
        let params = p(0.0, 0.0);
        let path = simulate(&model, &params, &cfg(1000, 1)).unwrap();
        let field = derivative_field(&path, &model, &params).unwrap();
        for j in 1..=1000 {
            assert!(field.row(j).iter().all(|&d| d == 1.0));
        }
        assert_eq!(field.get(0, 3), None);
        assert_eq!(field.get(4, 3), None);
        let h = h_norm(&field, 1000).unwrap();
        assert!((h.value - 1.0).abs() < 1e-12);
        let profile = field.h_norm_profile();
        for k in [0, 1, 250, 999] {
            assert!((profile[k] - k as f64 * 1e-3).abs() < 1e-12);
        }
        assert!(h_norm(&field, 1001).is_err());
    }

    #[test]
    fn beta_zero_matches_closed_form() {
        let alpha = 0.45;
        let c = alpha / (1.0 - alpha);
        let model = CoefficientModel::brownian();
        let params = p(alpha, 0.0);
        for seed in 0..10 {
            let path = simulate(&model, &params, &cfg(300, seed)).unwrap();
            let field = derivative_field(&path, &model, &params).unwrap();
            let profile = field.h_norm_profile();
            for k in 1..=300 {
                let mut h = 0.0;
                for j in 1..=k {
                    let expected = 1.0 + if path.argmax[k] >= j { c } else { 0.0 };
                    assert!((field.get(j, k).unwrap() - expected).abs() < 1e-12);
                    h += expected * expected * path.dt;
                }
                // closed-form sum: argmax rows get (1 + c)², the rest 1
                let a = path.argmax[k];
                let closed = path.dt * (a as f64 * (1.0 + c).powi(2) + (k - a) as f64);
                assert!((h - closed).abs() < 1e-12);
                assert!((profile[k] - closed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let model = CoefficientModel::generic_smooth();
        for (alpha, beta) in [(0.3, 0.2), (-0.5, 0.4), (0.0, 0.0)] {
            let params = p(alpha, beta);
            let c = SimConfig { x0: 0.2, ..cfg(1000, 21) };
            let path = simulate(&model, &params, &c).unwrap();
            let field = derivative_field(&path, &model, &params).unwrap();
            for (lo, hi) in [(0.0, 1.0), (0.1, 0.4), (0.5, 0.9)] {
                let fd = cameron_martin_directional(&model, &params, &c, lo, hi, 1e-6).unwrap();
                let exact = field.directional(lo, hi);
                assert!(
                    (fd.value - exact).abs() <= 1e-3 * exact.abs().max(1e-3),
                    "({alpha},{beta}) ({lo},{hi}): {} vs {}",
                    fd.value,
                    exact
                );
            }
        }
    }

    #[test]
    fn tiny_eps_is_flagged() {
        let model = CoefficientModel::brownian();
        let c = SimConfig { x0: 1e6, ..cfg(10, 2) };
        let d = cameron_martin_directional(&model, &p(0.0, 0.0), &c, 0.0, 1.0, 1e-14).unwrap();
        assert!(d.eps_too_small);
        assert!(cameron_martin_directional(&model, &p(0.0, 0.0), &c, 0.5, 0.2, 1e-3).is_err());
    }

    #[test]
    fn degenerate_sigma_gives_zero_norms() {
        let model = CoefficientModel::additive(crate::coefficients::Coefficient::constant(0.3), 0.0).unwrap();
        let profiles = h_norm_profiles(&model, &p(0.2, 0.1), &cfg(100, 3), 20).unwrap();
        let at_end: Vec<f64> = profiles.iter().map(|p| p[100]).collect();
        let report = positivity_report(&at_end, 100, 0.0, model.bounds().sigma_inf);
        assert!(report.hypothesis_violated);
        assert_eq!(report.fraction_zero, 1.0);
        assert_eq!(report.max, 0.0);
    }

    #[test]
    fn refuses_large_and_bridge_paths() {
        let model = CoefficientModel::brownian();
        let params = p(0.3, 0.0);
        let path = simulate(&model, &params, &cfg(50, 1)).unwrap();
        assert!(matches!(
            derivative_field_with_limit(&path, &model, &params, 49),
            Err(MalliavinError::TooManySteps { n: 50, limit: 49 })
        ));
        let bridged = simulate(
            &model,
            &params,
            &SimConfig {
                monitoring: ExtremumMonitoring::BrownianBridge,
                ..cfg(50, 1)
            },
        )
        .unwrap();
        assert_eq!(
            derivative_field(&bridged, &model, &params).unwrap_err(),
            MalliavinError::BridgeMonitored
        );
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn field_csv_lists_lower_triangle() {
        let model = CoefficientModel::brownian();
        let path = simulate(&model, &p(0.0, 0.0), &cfg(3, 1)).unwrap();
        let field = derivative_field(&path, &model, &p(0.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("j,k,d\r\n1,1,"));
    }
}
