//! Ensembles of terminal values and the statistics run on them.

use crate::coefficients::CoefficientModel;
use crate::params::PerturbationParams;
use crate::quadrature::{gauss_kronrod, QuadratureFail};
use crate::simulate::{self, SimConfig, SimError};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::collections::HashMap;
use std::io::{self, Write};
use thiserror::Error;

/// Asymptotic two-sided Kolmogorov–Smirnov coefficients.
pub const KS_COEFF_1PCT: f64 = 1.63;
pub const KS_COEFF_5PCT: f64 = 1.36;
/// Below this sample size the asymptotic critical values are unreliable.
pub const KS_MIN_SAMPLES: usize = 35;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("path {path} failed: {source}")]
    Simulation {
        path: u64,
        #[source]
        source: SimError,
    },
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadratureFail),
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl DensityError {
    pub fn code(&self) -> &'static str {
        match self {
            DensityError::Simulation { source, .. } => source.code(),
            DensityError::Quadrature(_) => "QUADRATURE_FAIL",
            _ => "INVALID_INPUT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub terminal_values: Vec<f64>,
    pub n_paths: usize,
    pub t: f64,
    pub config_fingerprint: String,
}

impl Ensemble {
    pub fn from_values(terminal_values: Vec<f64>, t: f64, config_fingerprint: String) -> Self {
        Self {
            n_paths: terminal_values.len(),
            terminal_values,
            t,
            config_fingerprint,
        }
    }

    pub fn mean(&self) -> f64 {
        self.terminal_values.iter().sum::<f64>() / self.n_paths as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.terminal_values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.n_paths as f64 - 1.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n_paths as f64).sqrt()
    }

    /// CSV with columns `path,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        out.write_all(b"path,value\r\n")?;
        for (p, v) in self.terminal_values.iter().enumerate() {
            write!(out, "{},{}\r\n", p, crate::export::real(*v))?;
        }
        out.flush()
    }
}

/// SHA-256 over the model description, parameters and configuration.
pub fn fingerprint(model: &CoefficientModel, params: &PerturbationParams, cfg: &SimConfig) -> String {
    let canonical = serde_json::json!({
        "model": model.describe(),
        "bounds": model.bounds(),
        "alpha": params.alpha(),
        "beta": params.beta(),
        "sim": cfg,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Terminal values of `n_paths` paths; path `p` uses driver stream `p`.
pub fn generate_ensemble(
    model: &CoefficientModel,
    params: &PerturbationParams,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<Ensemble, DensityError> {
    cfg.validate().map_err(|source| DensityError::Simulation { path: 0, source })?;
    let values = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            simulate::simulate(model, params, &cfg.for_path(p))
                .map(|path| path.terminal())
                .map_err(|source| DensityError::Simulation { path: p, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble::from_values(values, cfg.horizon, fingerprint(model, params, cfg)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LawKind {
    Gaussian,
    SinglyPerturbedBm,
}

#[derive(Debug, Clone)]
enum LawRepr {
    Gaussian(Normal),
    Singly(SinglyPerturbed),
}

/// A reference law with density and distribution function.
#[derive(Debug, Clone)]
pub struct ReferenceLaw {
    kind: LawKind,
    repr: LawRepr,
}

impl ReferenceLaw {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self, DensityError> {
        let normal = Normal::new(mean, sd).map_err(|e| DensityError::InvalidArgument(e.to_string()))?;
        Ok(Self {
            kind: LawKind::Gaussian,
            repr: LawRepr::Gaussian(normal),
        })
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn density(&self, v: f64) -> f64 {
        match &self.repr {
            LawRepr::Gaussian(n) => n.pdf(v),
            LawRepr::Singly(s) => s.density(v).unwrap_or(f64::NAN),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match &self.repr {
            LawRepr::Gaussian(n) => n.cdf(v),
            LawRepr::Singly(s) => s.cdf(v),
        }
    }

    /// Total mass of the tabulated distribution (1 for closed forms).
    pub fn total_mass(&self) -> f64 {
        match &self.repr {
            LawRepr::Gaussian(_) => 1.0,
            LawRepr::Singly(s) => *s.cdf.last().unwrap(),
        }
    }
}

/// Law of `W_t + c·max_{s≤t} W_s`, `c = α/(1−α)`, by quadrature of the
/// joint density of `(W_t, max W)` along `w + c·m = v`.
#[derive(Debug, Clone)]
struct SinglyPerturbed {
    c: f64,
    t: f64,
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

const TAIL_SDS: f64 = 10.0;
const CDF_CELLS_PER_SIDE: usize = 1000;

impl SinglyPerturbed {
    fn joint(&self, w: f64, m: f64) -> f64 {
        let u = 2.0 * m - w;
        2.0 * u / ((2.0 * std::f64::consts::PI).sqrt() * self.t.powf(1.5)) * (-u * u / (2.0 * self.t)).exp()
    }

    fn density(&self, v: f64) -> Result<f64, QuadratureFail> {
        let c = self.c;
        let m0 = (v / (1.0 + c)).max(0.0);
        let m1 = m0 + 40.0 * self.t.sqrt() / (2.0 + c);
        let f = |m: f64| self.joint(v - c * m, m);
        gauss_kronrod(f, m0, m1, 1e-12).or_else(|_| gauss_kronrod(f, m0, m1, 1e-8))
    }

    fn cdf(&self, v: f64) -> f64 {
        let n = self.nodes.len();
        if v <= self.nodes[0] {
            return 0.0;
        }
        if v >= self.nodes[n - 1] {
            return self.cdf[n - 1].min(1.0);
        }
        let k = self.nodes.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
        let h = self.nodes[k + 1] - self.nodes[k];
        let u = (v - self.nodes[k]) / h;
        let (u2, u3) = (u * u, u * u * u);
        let value = (2.0 * u3 - 3.0 * u2 + 1.0) * self.cdf[k]
            + (u3 - 2.0 * u2 + u) * h * self.pdf[k]
            + (-2.0 * u3 + 3.0 * u2) * self.cdf[k + 1]
            + (u3 - u2) * h * self.pdf[k + 1];
        value.clamp(self.cdf[k], self.cdf[k + 1]).clamp(0.0, 1.0)
    }
}

/// Reference law of the singly perturbed Brownian motion at time `t`.
pub fn reference_singly_perturbed(alpha: f64, t: f64) -> Result<ReferenceLaw, DensityError> {
    if !(alpha < 1.0 && alpha.is_finite() && t > 0.0 && t.is_finite()) {
        return Err(DensityError::InvalidArgument(format!("need alpha < 1 and t > 0, got alpha={alpha}, t={t}")));
    }
    if alpha == 0.0 {
        return ReferenceLaw::gaussian(0.0, t.sqrt());
    }
    let c = alpha / (1.0 - alpha);
    let sd = t.sqrt();
    let lo = -TAIL_SDS * sd;
    let hi = TAIL_SDS * (1.0 + c).max(1.0) * sd;
    // the density has a kink at 0, which is kept on a node
    let mut nodes = Vec::with_capacity(2 * CDF_CELLS_PER_SIDE + 1);
    for k in 0..CDF_CELLS_PER_SIDE {
        nodes.push(lo + (0.0 - lo) * k as f64 / CDF_CELLS_PER_SIDE as f64);
    }
    for k in 0..=CDF_CELLS_PER_SIDE {
        nodes.push(hi * k as f64 / CDF_CELLS_PER_SIDE as f64);
    }
    let mut law = SinglyPerturbed {
        c,
        t,
        nodes,
        cdf: Vec::new(),
        pdf: Vec::new(),
    };
    law.pdf = law.nodes.iter().map(|&v| law.density(v)).collect::<Result<_, _>>()?;
    let mut cdf = Vec::with_capacity(law.nodes.len());
    cdf.push(0.0);
    for k in 0..law.nodes.len() - 1 {
        let f = |v: f64| law.density(v).unwrap_or(f64::NAN);
        let piece = gauss_kronrod(f, law.nodes[k], law.nodes[k + 1], 1e-12)
            .or_else(|_| gauss_kronrod(f, law.nodes[k], law.nodes[k + 1], 1e-8))?;
        cdf.push(cdf[k] + piece);
    }
    law.cdf = cdf;
    Ok(ReferenceLaw {
        kind: LawKind::SinglyPerturbedBm,
        repr: LawRepr::Singly(law),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomScan {
    pub bin_width: f64,
    /// Largest fraction of the ensemble in one bin `[kw, (k+1)w)`.
    pub max_mass: f64,
    /// Center of that bin (lowest such bin on ties).
    pub location: f64,
    pub occupied_bins: usize,
}

pub fn atom_scan(values: &[f64], bin_width: f64) -> AtomScan {
    assert!(bin_width > 0.0, "bin width must be positive");
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for v in values {
        *counts.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    let best = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&k, &c)| (k, c));
    let (bin, count) = best.unwrap_or((0, 0));
    AtomScan {
        bin_width,
        max_mass: if values.is_empty() { 0.0 } else { count as f64 / values.len() as f64 },
        location: (bin as f64 + 0.5) * bin_width,
        occupied_bins: counts.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomScaling {
    pub scans: Vec<AtomScan>,
    /// Slope of `ln(max mass)` against `ln(bin width)`; 1 without atoms.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln(max mass)` on `ln(bin width)`.
pub fn atom_scaling(values: &[f64], widths: &[f64]) -> AtomScaling {
    let scans: Vec<AtomScan> = widths.iter().map(|&w| atom_scan(values, w)).collect();
    let xs: Vec<f64> = scans.iter().map(|s| s.bin_width.ln()).collect();
    let ys: Vec<f64> = scans.iter().map(|s| s.max_mass.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    AtomScaling {
        scans,
        slope,
        intercept,
        r_squared,
    }
}

/// Ordinary least squares `y ≈ a + b·x`; returns `(b, a, R²)`, with
/// `R² = 0` when `y` has no spread.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bandwidth {
    /// `1.06·sd·n^{−1/5}`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn sup_distance<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.grid
            .iter()
            .zip(&self.density)
            .map(|(&g, &d)| (d - f(g)).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `x,density`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let rows = self.grid.iter().zip(&self.density).map(|(&g, &d)| [g, d]);
        crate::export::write_real_table(out, &["x", "density"], rows)
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn resolve_bandwidth(values: &[f64], bandwidth: Bandwidth) -> Result<f64, DensityError> {
    if values.len() < 2 {
        return Err(DensityError::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let h = match bandwidth {
        Bandwidth::Auto => 1.06 * sample_sd(values) * (values.len() as f64).powf(-0.2),
        Bandwidth::Fixed(h) => h,
    };
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(DensityError::InvalidArgument(format!("bandwidth {h} is not positive")))
    }
}

/// `n_points` equispaced points covering the sample plus four bandwidths.
pub fn default_grid(values: &[f64], h: f64, n_points: usize) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    if n_points < 2 {
        return vec![0.5 * (lo + hi); n_points];
    }
    (0..n_points).map(|k| lo + (hi - lo) * k as f64 / (n_points - 1) as f64).collect()
}

/// Gaussian-kernel density estimate on `grid`; kernels are cut at 8 bandwidths.
pub fn kde(values: &[f64], bandwidth: Bandwidth, grid: &[f64]) -> Result<Kde, DensityError> {
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    let h = resolve_bandwidth(values, bandwidth)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            let lo = sorted.partition_point(|&v| v < g - 8.0 * h);
            let hi = sorted.partition_point(|&v| v <= g + 8.0 * h);
            sorted[lo..hi]
                .iter()
                .map(|&v| {
                    let z = (g - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(Kde {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub critical_1pct: f64,
    pub critical_5pct: f64,
    pub passes_1pct: bool,
    pub passes_5pct: bool,
    pub low_power: bool,
}

/// Two-sided one-sample Kolmogorov–Smirnov test against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> KsResult {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let f = cdf(v);
            (((k + 1) as f64 / nf) - f).max(f - k as f64 / nf)
        })
        .fold(0.0, f64::max);
    let critical_1pct = KS_COEFF_1PCT / nf.sqrt();
    let critical_5pct = KS_COEFF_5PCT / nf.sqrt();
    KsResult {
        statistic,
        n,
        critical_1pct,
        critical_5pct,
        passes_1pct: statistic <= critical_1pct,
        passes_5pct: statistic <= critical_5pct,
        low_power: n < KS_MIN_SAMPLES,
    }
}

pub fn ks_test(ensemble: &Ensemble, law: &ReferenceLaw) -> KsResult {
    ks_statistic(&ensemble.terminal_values, |v| law.cdf(v))
}
