//! Experiment configuration files.

use crate::error::CliError;
use psde_core::coefficients::{Coefficient, CoefficientModel};
use psde_core::params::{validate_params, PerturbationParams};
use psde_core::simulate::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSpec,
    pub params: ParamSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset { preset: Preset },
    Custom { drift: CoefficientSpec, diffusion: CoefficientSpec },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Preset { preset: Preset::Brownian }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `b = 0`, `σ = 1`.
    Brownian,
    /// `b = 0.5 cos x`, `σ = 1 + 0.5 sin x`.
    GenericSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    AffineClipped {
        intercept: f64,
        slope: f64,
        lower: f64,
        upper: f64,
    },
    Sinusoidal {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Logistic {
        lower: f64,
        upper: f64,
        rate: f64,
        center: f64,
    },
    Table {
        x: Vec<f64>,
        y: Vec<f64>,
    },
    /// CSV with header `x,y`; relative paths resolve against the config file.
    TableFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSpec {
    None,
    /// Law of the singly perturbed Brownian motion; needs the Brownian
    /// preset, `β = 0` and `x = 0`.
    SinglyPerturbedBm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_paths: usize,
    pub atom_bin_widths: Vec<f64>,
    /// KDE bandwidth; `null` selects `1.06·sd·n^{−1/5}`.
    pub bandwidth: Option<f64>,
    pub kde_points: usize,
    pub reference: ReferenceSpec,
    pub fd_eps: f64,
    pub fd_windows: usize,
    /// Time of the H-norm report; `null` selects the horizon.
    pub h_norm_time: Option<f64>,
    pub write_field: bool,
    pub picard_steps: Vec<usize>,
    pub picard_seeds: u64,
    pub lamperti_levels: usize,
    pub constants_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            atom_bin_widths: vec![1e-1, 1e-2, 1e-3],
            bandwidth: None,
            kde_points: 400,
            reference: ReferenceSpec::None,
            fd_eps: 1e-4,
            fd_windows: 20,
            h_norm_time: None,
            write_field: false,
            picard_steps: vec![100, 200, 400],
            picard_seeds: 20,
            lamperti_levels: 4,
            constants_points: 50,
        }
    }
}

/// Command-line values that replace configuration fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A configuration with its model built and its parameters validated.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub model: CoefficientModel,
    pub params: PerturbationParams,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses JSON and inlines table files relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let ModelSpec::Custom { drift, diffusion } = &mut cfg.model {
            inline_table(drift, base)?;
            inline_table(diffusion, base)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.sim.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.analysis.n_paths = paths;
        }
        if let Some(steps) = o.steps {
            self.sim.n_steps = steps;
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
    }

    pub fn resolve(self) -> Result<Resolved, CliError> {
        let params = validate_params(self.params.alpha, self.params.beta).map_err(psde_core::Error::from)?;
        self.sim.validate().map_err(psde_core::Error::from)?;
        self.analysis.validate()?;
        let model = match &self.model {
            ModelSpec::Preset { preset: Preset::Brownian } => CoefficientModel::brownian(),
            ModelSpec::Preset { preset: Preset::GenericSmooth } => CoefficientModel::generic_smooth(),
            ModelSpec::Custom { drift, diffusion } => {
                CoefficientModel::from_builtins(drift.build()?, diffusion.build()?).map_err(psde_core::Error::from)?
            }
        };
        Ok(Resolved {
            config: self,
            model,
            params,
        })
    }
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("analysis.{name} must be positive and finite, got {v}")))
            }
        };
        for &w in &self.atom_bin_widths {
            positive("atom_bin_widths", w)?;
        }
        if let Some(h) = self.bandwidth {
            positive("bandwidth", h)?;
        }
        if let Some(t) = self.h_norm_time {
            positive("h_norm_time", t)?;
        }
        positive("fd_eps", self.fd_eps)?;
        let counts = [
            ("n_paths", self.n_paths),
            ("kde_points", self.kde_points),
            ("fd_windows", self.fd_windows),
            ("lamperti_levels", self.lamperti_levels),
            ("constants_points", self.constants_points),
            ("picard_seeds", self.picard_seeds as usize),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(CliError::Config(format!("analysis.{name} must be at least 1")));
            }
        }
        if self.picard_steps.contains(&0) {
            return Err(CliError::Config("analysis.picard_steps entries must be at least 1".into()));
        }
        Ok(())
    }
}

impl CoefficientSpec {
    fn build(&self) -> Result<Coefficient, CliError> {
        let c = match self.clone() {
            CoefficientSpec::Constant { value } => Coefficient::Constant { value },
            CoefficientSpec::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            } => Coefficient::AffineClipped {
                intercept,
                slope,
                lower,
                upper,
            },
            CoefficientSpec::Sinusoidal {
                offset,
                amplitude,
                frequency,
                phase,
            } => Coefficient::sinusoidal(offset, amplitude, frequency, phase),
            CoefficientSpec::Logistic {
                lower,
                upper,
                rate,
                center,
            } => Coefficient::Logistic {
                lower,
                upper,
                rate,
                center,
            },
            CoefficientSpec::Table { x, y } => Coefficient::tabulated(x, y).map_err(psde_core::Error::from)?,
            CoefficientSpec::TableFile { path } => {
                return Err(CliError::Config(format!("table file {} was not loaded", path.display())))
            }
        };
        Ok(c)
    }
}

fn inline_table(spec: &mut CoefficientSpec, base: &Path) -> Result<(), CliError> {
    if let CoefficientSpec::TableFile { path } = spec {
        let full = base.join(&*path);
        let (x, y) = read_table(&full)?;
        *spec = CoefficientSpec::Table { x, y };
    }
    Ok(())
}

#[derive(Deserialize)]
struct TableRow {
    x: f64,
    y: f64,
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    })?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in reader.deserialize::<TableRow>() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        xs.push(row.x);
        ys.push(row.y);
    }
    Ok((xs, ys))
}
