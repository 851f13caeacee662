use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::trace::{Tier, FORMAT_VERSION};
use crate::circuit::{solve_circuit_params, CircuitBounds, CircuitParams, NodeOptions};
use crate::ct_core::SolverOptions;
use crate::data::{gen_univariate_with, load_boston, BostonOptions, Dataset, UnivariateOptions};
use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::ideal::Hyperparams;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SGDRCT_CONFIG";

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// One synthetic single-feature set per seed.
    Univariate {
        seeds: Vec<u64>,
        samples: usize,
        #[serde(default)]
        options: UnivariateOptions,
    },
    Boston {
        path: PathBuf,
        #[serde(default)]
        options: BostonOptions,
    },
    /// A dataset previously exported with `gen-data`.
    Json { path: PathBuf },
}

impl DatasetSpec {
    /// Relative paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Vec<Dataset>> {
        match self {
            DatasetSpec::Univariate {
                seeds,
                samples,
                options,
            } => seeds
                .iter()
                .map(|s| gen_univariate_with(*s, *samples, options))
                .collect(),
            DatasetSpec::Boston { path, options } => Ok(vec![load_boston(base.join(path), options)?]),
            DatasetSpec::Json { path } => {
                let text = std::fs::read_to_string(base.join(path))?;
                Ok(vec![Dataset::from_json(&text)?])
            }
        }
    }
}

/// How the circuit tiers get their physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CircuitSpec {
    /// Use these parameters with the configured hold time.
    Explicit { params: CircuitParams },
    /// Solve for parameters and hold time realising the configured alpha and lambda.
    Solve {
        #[serde(default)]
        bounds: CircuitBounds,
    },
}

impl Default for CircuitSpec {
    fn default() -> Self {
        CircuitSpec::Explicit {
            params: CircuitParams::nominal(),
        }
    }
}

impl CircuitSpec {
    /// Parameters and hold time for the given targets.
    pub fn resolve(&self, hp: &Hyperparams) -> Result<(CircuitParams, f64)> {
        match self {
            CircuitSpec::Explicit { params } => {
                params.validate()?;
                Ok((params.clone(), hp.delta_s))
            }
            CircuitSpec::Solve { bounds } => match solve_circuit_params(hp.alpha, hp.lambda, bounds) {
                Ok(s) => Ok((s.params, s.delta_s)),
                Err(Error::Infeasible(msg)) => Err(Error::Config(format!("solve_circuit_params: {msg}"))),
                Err(e) => Err(e),
            },
        }
    }
}

/// Grid of operating points for `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alphas: vec![1e-2, 1e-3, 1e-4],
            lambdas: vec![0.2, 0.1, 0.05],
        }
    }
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

fn default_tiers() -> Vec<Tier> {
    vec![Tier::Ideal, Tier::Ct, Tier::Circuit]
}

fn default_reference() -> Tier {
    Tier::Ideal
}

/// One experiment: data, algorithm, hardware, and which tiers to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub name: String,
    pub dataset: DatasetSpec,
    pub hyperparams: Hyperparams,
    /// Train a bias term alongside the weights.
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub circuit: CircuitSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub node: NodeOptions,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default = "default_tiers")]
    pub tiers: Vec<Tier>,
    #[serde(default = "default_reference")]
    pub reference_tier: Tier,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Concurrent runs; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory relative dataset paths are resolved against. Set by
    /// [`ExperimentConfig::load`] to the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// The single-neuron experiment: five seeded univariate sets of 50
    /// samples at the nominal operating point.
    pub fn single_neuron() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: "single-neuron".into(),
            dataset: DatasetSpec::Univariate {
                seeds: (1..=5).collect(),
                samples: 50,
                options: UnivariateOptions::default(),
            },
            hyperparams: Hyperparams::nominal(),
            bias: false,
            circuit: CircuitSpec::default(),
            solver: SolverOptions::default(),
            node: NodeOptions::default(),
            device: DeviceParams::default(),
            tiers: default_tiers(),
            reference_tier: Tier::Ideal,
            output_dir: None,
            workers: None,
            sweep: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.hyperparams.validate().map_err(wrap)?;
        self.solver.validate().map_err(wrap)?;
        self.node.validate().map_err(wrap)?;
        self.device.validate().map_err(wrap)?;
        if self.tiers.is_empty() {
            return Err(Error::Config("no tiers requested".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.alphas.is_empty() || s.lambdas.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
        }
        if let DatasetSpec::Univariate { seeds, samples, .. } = &self.dataset {
            if seeds.is_empty() || *samples == 0 {
                return Err(Error::Config("univariate dataset needs seeds and samples".into()));
            }
        }
        Ok(())
    }

    pub fn datasets(&self) -> Result<Vec<Dataset>> {
        self.dataset.load(&self.base_dir)
    }
}
