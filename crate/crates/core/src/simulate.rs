//! Path simulation for `X = x + ∫σ(X)dW + ∫b(X)ds + α max X + β min X`.
//!
//! Two schemes share the same Brownian driver:
//!
//! * [`Scheme::PerStep`] advances one grid step at a time. The Euler
//!   candidate `u = x_k + σ(x_k)ΔW + b(x_k)Δt` either stays within the
//!   current extremes, or sets a new maximum (solve `x = u + α(x − m_k)`)
//!   or a new minimum (solve `x = u + β(x − i_k)`).
//! * [`Scheme::Picard`] iterates over whole paths: from `X⁰ ≡ x/(1−α)` it
//!   forms the driving path `aⁿ` by left-point sums along `Xⁿ`, solves for
//!   its running extremes with [`crate::skorokhod`] and sets
//!   `Xⁿ⁺¹ = aⁿ + αM + βI`.
//!
//! Both start from `X_0 = x/(1−α−β)`, the only value consistent with the
//! equation at `t = 0`.
//!
//! Extremes are monitored on the grid by default. For singly perturbed
//! models ([`ExtremumMonitoring::BrownianBridge`]) the per-step scheme can
//! instead sample the within-step extreme of the frozen-coefficient
//! Brownian bridge, which removes the `O(√Δt)` bias of grid monitoring.

use crate::coefficients::CoefficientModel;
use crate::params::PerturbationParams;
use crate::rng;
use crate::skorokhod::{self, SkorokhodError, SolverOptions};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("driver has {got} increments, expected {expected}")]
    DriverLength { expected: usize, got: usize },
    #[error("non-finite value {value} at step {step}")]
    NonFinite { step: usize, value: f64 },
    #[error("step {step}: solved value contradicts its extremum case")]
    CaseInconsistent { step: usize },
    #[error("outer iteration did not converge after {} iterations (last change {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { history: Vec<f64> },
    #[error("inner max/min solve failed at outer iteration {iteration}: {source}")]
    Inner {
        iteration: usize,
        #[source]
        source: SkorokhodError,
    },
    #[error("Brownian-bridge monitoring needs α = 0 or β = 0")]
    BridgeNeedsSinglePerturbation,
    #[error("Brownian-bridge monitoring is only available for the per-step scheme")]
    BridgeNeedsPerStep,
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::InvalidConfig(_)
            | SimError::DriverLength { .. }
            | SimError::BridgeNeedsSinglePerturbation
            | SimError::BridgeNeedsPerStep => "INVALID_CONFIG",
            SimError::NonFinite { .. } => "NUMERICAL_FAULT",
            SimError::CaseInconsistent { .. } => "CASE_INCONSISTENT",
            SimError::NoConvergence { .. } => "NO_CONVERGENCE",
            SimError::Inner { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    PerStep,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumMonitoring {
    #[default]
    Grid,
    BrownianBridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// The constant `x` in the equation; the path starts at `x/(1−α−β)`.
    pub x0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Stream of the master seed used for the driver.
    pub path_index: u64,
    pub scheme: Scheme,
    pub picard_outer_iters: usize,
    pub fixed_point_tol: f64,
    /// Start each inner solve from the previous outer iterate's maximum.
    pub picard_warm_start: bool,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub monitoring: ExtremumMonitoring,
}

impl Default for SimConfig {
    fn default() -> Self {
        let inner = SolverOptions::default();
        Self {
            x0: 0.0,
            horizon: 1.0,
            n_steps: 1000,
            seed: 0,
            path_index: 0,
            scheme: Scheme::PerStep,
            picard_outer_iters: 50,
            fixed_point_tol: 1e-10,
            picard_warm_start: false,
            inner_tol: inner.tol,
            inner_max_iter: inner.max_iter,
            monitoring: ExtremumMonitoring::Grid,
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !self.x0.is_finite() {
            return bad("x0 must be finite");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive and finite");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if self.picard_outer_iters == 0 {
            return bad("picard_outer_iters must be at least 1");
        }
        if !(self.fixed_point_tol > 0.0) {
            return bad("fixed_point_tol must be positive");
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("inner solver tolerance and budget must be positive");
        }
        if self.scheme == Scheme::Picard && self.monitoring != ExtremumMonitoring::Grid {
            return Err(SimError::BridgeNeedsPerStep);
        }
        Ok(())
    }

    /// This configuration with the driver drawn from another stream.
    pub fn for_path(&self, path_index: u64) -> Self {
        Self {
            path_index,
            ..self.clone()
        }
    }

    /// Brownian increments of this configuration's stream.
    pub fn driver(&self) -> Vec<f64> {
        rng::brownian_increments(self.n_steps, self.horizon, self.seed, self.path_index)
    }

    fn solver_options(&self, warm: Option<Vec<f64>>) -> SolverOptions {
        SolverOptions {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
            warm_start: warm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    /// Index `n` of the first iterate with `‖Xⁿ⁺¹ − Xⁿ‖ ≤ tol`.
    pub iterations: usize,
    /// Sup-norm change after each outer map.
    pub change_history: Vec<f64>,
    pub inner_sweeps: Vec<usize>,
}

/// A simulated path on the uniform grid `t_k = k·Δt`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Running maximum.
    pub m: Vec<f64>,
    /// Running minimum.
    pub i: Vec<f64>,
    /// Brownian values, `w[0] = 0`.
    pub w: Vec<f64>,
    /// Earliest grid index attaining `m[k]`.
    pub argmax: Vec<usize>,
    /// Earliest grid index attaining `i[k]`.
    pub argmin: Vec<usize>,
    pub scheme: Scheme,
    pub monitoring: ExtremumMonitoring,
    pub picard: Option<PicardReport>,
}

impl Path {
    pub fn n_steps(&self) -> usize {
        self.x.len() - 1
    }

    pub fn terminal(&self) -> f64 {
        *self.x.last().expect("paths are non-empty")
    }

    pub fn increments(&self) -> Vec<f64> {
        self.w.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Largest `|x_{k+1} − x_k − σΔW − bΔt − αΔm − βΔi|` over the grid.
    pub fn dynamics_residual(&self, model: &CoefficientModel, params: &PerturbationParams) -> f64 {
        let (alpha, beta) = (params.alpha(), params.beta());
        (0..self.n_steps())
            .map(|k| {
                let dw = self.w[k + 1] - self.w[k];
                let xk = self.x[k];
                (self.x[k + 1]
                    - xk
                    - model.sigma(xk) * dw
                    - model.b(xk) * self.dt
                    - alpha * (self.m[k + 1] - self.m[k])
                    - beta * (self.i[k + 1] - self.i[k]))
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest gap between `(m, i)` and the running extremes of `x`.
    pub fn extremes_mismatch(&self) -> f64 {
        let (rm, _) = skorokhod::running_max(&self.x);
        let (ri, _) = skorokhod::running_min(&self.x);
        rm.iter()
            .zip(&self.m)
            .chain(ri.iter().zip(&self.i))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,x,m,i,w`, 17 significant digits, CRLF rows.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let rows = (0..self.x.len()).map(|k| [self.times[k], self.x[k], self.m[k], self.i[k], self.w[k]]);
        crate::export::write_real_table(out, &["t", "x", "m", "i", "w"], rows)
    }
}

/// Simulates with the configured scheme on the configured driver stream.
pub fn simulate(model: &CoefficientModel, params: &PerturbationParams, cfg: &SimConfig) -> Result<Path, SimError> {
    cfg.validate()?;
    simulate_with_driver(model, params, cfg, &cfg.driver())
}

/// Simulates on caller-supplied Brownian increments.
pub fn simulate_with_driver(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    increments: &[f64],
) -> Result<Path, SimError> {
    cfg.validate()?;
    if increments.len() != cfg.n_steps {
        return Err(SimError::DriverLength {
            expected: cfg.n_steps,
            got: increments.len(),
        });
    }
    match cfg.scheme {
        Scheme::PerStep => per_step(model, params, cfg, increments),
        Scheme::Picard => picard(model, params, cfg, increments),
    }
}

/// The per-step scheme on the configured driver, whatever `cfg.scheme` says.
pub fn simulate_per_step(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
) -> Result<Path, SimError> {
    let cfg = SimConfig {
        scheme: Scheme::PerStep,
        ..cfg.clone()
    };
    simulate(model, params, &cfg)
}

/// The outer Picard scheme on the configured driver, whatever `cfg.scheme` says.
pub fn simulate_picard(model: &CoefficientModel, params: &PerturbationParams, cfg: &SimConfig) -> Result<Path, SimError> {
    let cfg = SimConfig {
        scheme: Scheme::Picard,
        ..cfg.clone()
    };
    simulate(model, params, &cfg)
}

fn grid(n: usize, dt: f64) -> Vec<f64> {
    (0..=n).map(|k| k as f64 * dt).collect()
}

fn per_step(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    dw: &[f64],
) -> Result<Path, SimError> {
    let bridge = cfg.monitoring == ExtremumMonitoring::BrownianBridge;
    if bridge && !params.is_singly_perturbed() {
        return Err(SimError::BridgeNeedsSinglePerturbation);
    }
    let (alpha, beta) = (params.alpha(), params.beta());
    let n = cfg.n_steps;
    let dt = cfg.dt();
    let x0 = cfg.x0 / params.gap();
    let mut x = Vec::with_capacity(n + 1);
    let mut m = Vec::with_capacity(n + 1);
    let mut i = Vec::with_capacity(n + 1);
    let mut argmax = Vec::with_capacity(n + 1);
    let mut argmin = Vec::with_capacity(n + 1);
    x.push(x0);
    m.push(x0);
    i.push(x0);
    argmax.push(0);
    argmin.push(0);
    let mut aux = bridge.then(|| rng::aux_rng(cfg.seed, cfg.path_index));
    let (mut cur_m, mut cur_i, mut am, mut an) = (x0, x0, 0usize, 0usize);
    for k in 0..n {
        let xk = x[k];
        let sig = model.sigma(xk);
        let drift = sig * dw[k] + model.b(xk) * dt;
        let u = xk + drift;
        if !u.is_finite() {
            return Err(SimError::NonFinite { step: k, value: u });
        }
        let next = if let Some(aux) = aux.as_mut() {
            let spread = -2.0 * sig * sig * dt * rng::open_unit(aux).ln();
            let root = (drift * drift + spread).sqrt();
            if beta == 0.0 {
                // within-step peak of the unperturbed bridge
                let peak = xk + 0.5 * (drift + root);
                if peak > cur_m {
                    let new_m = (peak - alpha * cur_m) / (1.0 - alpha);
                    let v = u + alpha * (new_m - cur_m);
                    cur_m = new_m;
                    am = k + 1;
                    v
                } else {
                    u
                }
            } else {
                let trough = xk + 0.5 * (drift - root);
                if trough < cur_i {
                    let new_i = (trough - beta * cur_i) / (1.0 - beta);
                    let v = u + beta * (new_i - cur_i);
                    cur_i = new_i;
                    an = k + 1;
                    v
                } else {
                    u
                }
            }
        } else if u > cur_m {
            let v = (u - alpha * cur_m) / (1.0 - alpha);
            if !(v > cur_m) {
                return Err(SimError::CaseInconsistent { step: k });
            }
            v
        } else if u < cur_i {
            let v = (u - beta * cur_i) / (1.0 - beta);
            if !(v < cur_i) {
                return Err(SimError::CaseInconsistent { step: k });
            }
            v
        } else {
            u
        };
        if !next.is_finite() {
            return Err(SimError::NonFinite { step: k, value: next });
        }
        if next > cur_m {
            cur_m = next;
            am = k + 1;
        }
        if next < cur_i {
            cur_i = next;
            an = k + 1;
        }
        x.push(next);
        m.push(cur_m);
        i.push(cur_i);
        argmax.push(am);
        argmin.push(an);
    }
    Ok(Path {
        dt,
        times: grid(n, dt),
        x,
        m,
        i,
        w: rng::cumulative(dw),
        argmax,
        argmin,
        scheme: Scheme::PerStep,
        monitoring: cfg.monitoring,
        picard: None,
    })
}

fn picard(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    dw: &[f64],
) -> Result<Path, SimError> {
    let n = cfg.n_steps;
    let dt = cfg.dt();
    let mut x = vec![cfg.x0 / (1.0 - params.alpha()); n + 1];
    let mut a = vec![0.0; n + 1];
    let mut history = Vec::new();
    let mut sweeps = Vec::new();
    let mut prev_m: Option<Vec<f64>> = None;
    for it in 1..=cfg.picard_outer_iters {
        a[0] = cfg.x0;
        for k in 0..n {
            a[k + 1] = a[k] + model.sigma(x[k]) * dw[k] + model.b(x[k]) * dt;
            if !a[k + 1].is_finite() {
                return Err(SimError::NonFinite {
                    step: k,
                    value: a[k + 1],
                });
            }
        }
        let warm = if cfg.picard_warm_start { prev_m.take() } else { None };
        let sol = skorokhod::solve_values(&a, params, &cfg.solver_options(warm))
            .map_err(|source| SimError::Inner { iteration: it, source })?;
        let next = skorokhod::reconstruct(&a, &sol.m_path, &sol.i_path, params);
        let change = next
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        history.push(change);
        sweeps.push(sol.iterations);
        x = next;
        if change <= cfg.fixed_point_tol {
            let (_, argmax) = skorokhod::running_max(&x);
            let (_, argmin) = skorokhod::running_min(&x);
            return Ok(Path {
                dt,
                times: grid(n, dt),
                x,
                m: sol.m_path,
                i: sol.i_path,
                w: rng::cumulative(dw),
                argmax,
                argmin,
                scheme: Scheme::Picard,
                monitoring: ExtremumMonitoring::Grid,
                picard: Some(PicardReport {
                    iterations: it - 1,
                    change_history: history,
                    inner_sweeps: sweeps,
                }),
            });
        }
        prev_m = Some(sol.m_path);
    }
    Err(SimError::NoConvergence { history })
}

/// Euler–Maruyama path of `dX = b(X)dt + σ(X)dW` on the given increments.
pub fn euler_maruyama(model: &CoefficientModel, x0: f64, dt: f64, dw: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(dw.len() + 1);
    x.push(x0);
    for (k, d) in dw.iter().enumerate() {
        let xk = x[k];
        x.push(xk + model.sigma(xk) * d + model.b(xk) * dt);
    }
    x
}
