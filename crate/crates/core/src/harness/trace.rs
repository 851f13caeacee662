use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitParams, MonitorSummary};
use crate::ct_core::SolverOptions;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::ideal::{mse, Hyperparams, LinearModel};

/// Version of the trace CSV and report JSON layouts.
pub const FORMAT_VERSION: u32 = 1;

/// Fidelity level of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Ideal,
    Ct,
    Circuit,
    Device,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Ideal, Tier::Ct, Tier::Circuit, Tier::Device];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Ideal => "ideal",
            Tier::Ct => "ct",
            Tier::Circuit => "circuit",
            Tier::Device => "device",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tier {s:?}")))
    }
}

/// Physical operating point realised by the circuit-level tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSnapshot {
    pub params: CircuitParams,
    pub delta_s: f64,
    /// Learning rate and regularisation actually realised by `params`.
    pub alpha: f64,
    pub lambda: f64,
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub format_version: u32,
    pub tier: Tier,
    pub dataset: String,
    pub epochs: usize,
    pub weights_per_epoch: Vec<Vec<f64>>,
    pub bias_per_epoch: Option<Vec<f64>>,
    pub mse_train: Vec<f64>,
    pub mse_test: Option<Vec<f64>>,
    pub hyperparams: Hyperparams,
    pub circuit: Option<CircuitSnapshot>,
    pub solver: Option<SolverOptions>,
    pub monitor: Option<MonitorSummary>,
    /// Excluded from equality-sensitive outputs such as the CSV.
    pub wall_time: f64,
}

impl TrainTrace {
    pub fn new(tier: Tier, dataset: &Dataset, hyperparams: Hyperparams) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tier,
            dataset: dataset.name.clone(),
            epochs: 0,
            weights_per_epoch: Vec::with_capacity(hyperparams.epochs),
            bias_per_epoch: None,
            mse_train: Vec::with_capacity(hyperparams.epochs),
            mse_test: (!dataset.test_indices().is_empty()).then(Vec::new),
            hyperparams,
            circuit: None,
            solver: None,
            monitor: None,
            wall_time: 0.0,
        }
    }

    /// Append the state at an epoch boundary.
    pub fn record_epoch(&mut self, model: &LinearModel, dataset: &Dataset) -> Result<()> {
        self.weights_per_epoch.push(model.weights.clone());
        if let Some(b) = model.bias {
            self.bias_per_epoch.get_or_insert_with(Vec::new).push(b);
        }
        self.mse_train.push(mse(model, dataset, Split::Train)?);
        if let Some(test) = self.mse_test.as_mut() {
            test.push(mse(model, dataset, Split::Test)?);
        }
        self.epochs += 1;
        Ok(())
    }

    pub fn final_weights(&self) -> &[f64] {
        self.weights_per_epoch.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_bias(&self) -> Option<f64> {
        self.bias_per_epoch.as_ref().and_then(|b| b.last().copied())
    }

    pub fn final_mse_train(&self) -> Option<f64> {
        self.mse_train.last().copied()
    }

    pub fn final_mse_test(&self) -> Option<f64> {
        self.mse_test.as_ref().and_then(|t| t.last().copied())
    }

    pub fn features(&self) -> usize {
        self.weights_per_epoch.first().map_or(0, Vec::len)
    }

    /// One header row plus one row per epoch:
    /// `epoch,w_1..w_d[,bias],mse_train,mse_test,format_version`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["epoch".into()];
        header.extend((1..=self.features()).map(|i| format!("w_{i}")));
        if self.bias_per_epoch.is_some() {
            header.push("bias".into());
        }
        header.extend(["mse_train", "mse_test", "format_version"].map(String::from));
        w.write_record(&header)?;
        for e in 0..self.epochs {
            let mut row = vec![(e + 1).to_string()];
            row.extend(self.weights_per_epoch[e].iter().map(|v| format!("{v:e}")));
            if let Some(b) = &self.bias_per_epoch {
                row.push(format!("{:e}", b[e]));
            }
            row.push(format!("{:e}", self.mse_train[e]));
            row.push(
                self.mse_test
                    .as_ref()
                    .map(|t| format!("{:e}", t[e]))
                    .unwrap_or_default(),
            );
            row.push(FORMAT_VERSION.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        write_atomic(path, &buf)
    }
}

/// Write via a temporary sibling file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Re-emit a trace CSV as whitespace-separated columns with a `#` header
/// line, the layout gnuplot reads directly.
pub fn csv_to_gnuplot<R: std::io::Read, W: Write>(input: R, mut out: W) -> Result<()> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    writeln!(out, "# {}", header.iter().collect::<Vec<_>>().join(" "))?;
    for rec in r.records() {
        let rec = rec?;
        let cols: Vec<&str> = rec.iter().map(|f| if f.is_empty() { "NaN" } else { f }).collect();
        writeln!(out, "{}", cols.join(" "))?;
    }
    Ok(())
}
