//! Running maximum and minimum of a doubly perturbed path.
//!
//! Given a driving path `a` on a grid, find `(M, I)` such that
//! `X = a + αM + βI` has running maximum `M` and running minimum `I`.
//! Equivalently
//!
//! ```text
//! (1 − α) M_k = max_{j≤k} (a_j + β I_j)
//! (β − 1) I_k = max_{j≤k} (−a_j − α M_j)
//! ```
//!
//! The solver runs Gauss–Seidel sweeps from `M ≡ a_0`: each sweep maps
//! `I` to a new `M` through the first line, then the new `M` to `I` through
//! the second. The composed map contracts in the sup norm with factor `|ρ|`.

use crate::params::PerturbationParams;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkorokhodError {
    #[error("driving path has {times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("driving path is empty")]
    Empty,
    #[error("grid times must be strictly increasing (index {index})")]
    TimesNotIncreasing { index: usize },
    #[error("driving path value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("tolerance must be positive and max_iter at least 1")]
    BadOptions,
    #[error("warm start has length {got}, expected {expected}")]
    WarmStartLength { got: usize, expected: usize },
    #[error("no convergence after {} sweeps (last residual {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { history: Vec<f64> },
}

impl SkorokhodError {
    pub fn code(&self) -> &'static str {
        match self {
            SkorokhodError::NoConvergence { .. } => "NO_CONVERGENCE",
            _ => "INVALID_INPUT",
        }
    }
}

/// A driving path sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, SkorokhodError> {
        if times.len() != values.len() {
            return Err(SkorokhodError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        if values.is_empty() {
            return Err(SkorokhodError::Empty);
        }
        if let Some(index) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SkorokhodError::TimesNotIncreasing { index: index + 1 });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SkorokhodError::NonFinite { index });
        }
        Ok(Self { times, values })
    }

    /// Values on the grid `0, dt, 2dt, ...`.
    pub fn uniform(dt: f64, values: Vec<f64>) -> Result<Self, SkorokhodError> {
        let times = (0..values.len()).map(|k| k as f64 * dt).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Sweep budget. The mode at index 0 contracts at exactly `|ρ|` per
    /// sweep, so about `ln(tol) / ln|ρ|` sweeps are needed.
    pub max_iter: usize,
    /// Initial `M`; `None` starts from `M ≡ a_0`.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 4000,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxMinSolution {
    pub m_path: Vec<f64>,
    pub i_path: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl MaxMinSolution {
    /// `a + αM + βI`.
    pub fn reconstruct(&self, a: &[f64], params: &PerturbationParams) -> Vec<f64> {
        reconstruct(a, &self.m_path, &self.i_path, params)
    }
}

pub(crate) fn reconstruct(a: &[f64], m: &[f64], i: &[f64], params: &PerturbationParams) -> Vec<f64> {
    let (alpha, beta) = (params.alpha(), params.beta());
    a.iter()
        .zip(m.iter().zip(i))
        .map(|(a, (m, i))| a + alpha * m + beta * i)
        .collect()
}

/// Running maximum with the earliest index attaining it.
pub fn running_max(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(x.len());
    let mut arg = Vec::with_capacity(x.len());
    let (mut best, mut at) = (f64::NEG_INFINITY, 0);
    for (k, &v) in x.iter().enumerate() {
        if v > best {
            best = v;
            at = k;
        }
        out.push(best);
        arg.push(at);
    }
    (out, arg)
}

/// Running minimum with the earliest index attaining it.
pub fn running_min(x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(x.len());
    let mut arg = Vec::with_capacity(x.len());
    let (mut best, mut at) = (f64::INFINITY, 0);
    for (k, &v) in x.iter().enumerate() {
        if v < best {
            best = v;
            at = k;
        }
        out.push(best);
        arg.push(at);
    }
    (out, arg)
}

// I from M: (β − 1) I_k = max_{j≤k}(−a_j − α M_j).
fn min_from_max(a: &[f64], m: &[f64], alpha: f64, beta: f64, out: &mut [f64]) {
    let mut run = f64::NEG_INFINITY;
    for k in 0..a.len() {
        run = run.max(-a[k] - alpha * m[k]);
        out[k] = run / (beta - 1.0);
    }
}

// M from I: (1 − α) M_k = max_{j≤k}(a_j + β I_j).
fn max_from_min(a: &[f64], i: &[f64], alpha: f64, beta: f64, out: &mut [f64]) {
    let mut run = f64::NEG_INFINITY;
    for k in 0..a.len() {
        run = run.max(a[k] + beta * i[k]);
        out[k] = run / (1.0 - alpha);
    }
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Residuals below this multiple of `ε·sup|M, I|` count as converged.
const ROUNDING_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Solves the coupled running max/min system for the driving path `a`.
///
/// Stops when the sup-norm change of `(M, I)` over one sweep is at most
/// `opts.tol`, or at rounding level for large-magnitude solutions.
pub fn solve_max_min(
    a: &DrivingPath,
    params: &PerturbationParams,
    opts: &SolverOptions,
) -> Result<MaxMinSolution, SkorokhodError> {
    solve_values(a.values(), params, opts)
}

pub(crate) fn solve_values(
    a: &[f64],
    params: &PerturbationParams,
    opts: &SolverOptions,
) -> Result<MaxMinSolution, SkorokhodError> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(SkorokhodError::BadOptions);
    }
    if a.is_empty() {
        return Err(SkorokhodError::Empty);
    }
    let n = a.len();
    let (alpha, beta) = (params.alpha(), params.beta());
    let mut m = match &opts.warm_start {
        Some(w) if w.len() != n => {
            return Err(SkorokhodError::WarmStartLength {
                got: w.len(),
                expected: n,
            })
        }
        Some(w) => w.clone(),
        None => vec![a[0]; n],
    };
    let mut i = vec![0.0; n];
    min_from_max(a, &m, alpha, beta, &mut i);
    let mut m_next = vec![0.0; n];
    let mut i_next = vec![0.0; n];
    let mut history = Vec::new();
    for sweep in 1..=opts.max_iter {
        max_from_min(a, &i, alpha, beta, &mut m_next);
        min_from_max(a, &m_next, alpha, beta, &mut i_next);
        let residual = sup_diff(&m_next, &m).max(sup_diff(&i_next, &i));
        std::mem::swap(&mut m, &mut m_next);
        std::mem::swap(&mut i, &mut i_next);
        if !residual.is_finite() {
            history.push(residual);
            break;
        }
        let scale = m.iter().chain(i.iter()).fold(0.0f64, |s, v| s.max(v.abs()));
        if residual <= opts.tol.max(ROUNDING_FLOOR * scale) {
            return Ok(MaxMinSolution {
                m_path: m,
                i_path: i,
                iterations: sweep,
                residual,
            });
        }
        history.push(residual);
    }
    Err(SkorokhodError::NoConvergence { history })
}

/// Ratios of successive sup-norm updates of `M` under the sweep map.
///
/// Empty when `αβ = 0`, where one sweep is already exact. Ratios stop once
/// the previous update falls to rounding level.
pub fn contraction_rate(a: &DrivingPath, params: &PerturbationParams, n_sweeps: usize) -> Vec<f64> {
    let (alpha, beta) = (params.alpha(), params.beta());
    if alpha * beta == 0.0 {
        return Vec::new();
    }
    let a = a.values();
    let n = a.len();
    let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let noise = 1e3 * f64::EPSILON * scale / (1.0 - alpha - beta);
    let mut m = vec![a[0]; n];
    let mut i = vec![0.0; n];
    let mut m_next = vec![0.0; n];
    let mut prev: Option<f64> = None;
    let mut ratios = Vec::new();
    for _ in 0..n_sweeps {
        min_from_max(a, &m, alpha, beta, &mut i);
        max_from_min(a, &i, alpha, beta, &mut m_next);
        let d = sup_diff(&m_next, &m);
        std::mem::swap(&mut m, &mut m_next);
        if let Some(p) = prev {
            if p <= noise {
                break;
            }
            ratios.push(d / p);
        }
        prev = Some(d);
    }
    ratios
}
