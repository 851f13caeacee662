use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CircuitSpec, ExperimentConfig};
use super::report::{compare, precision, ComparisonReport, Precision, FULL_SCALE};
use super::trace::{write_atomic, Tier, TrainTrace, FORMAT_VERSION};
use crate::circuit::train_circuit;
use crate::ct_core::train_ct;
use crate::data::Dataset;
use crate::device::train_device;
use crate::error::{Error, Result};
use crate::ideal::{train_with_guard, Hyperparams, LinearModel};

/// A tier that did not finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierFailure {
    pub tier: Tier,
    pub error: String,
    /// Divergence or infeasibility, as opposed to a bad input.
    pub fatal: bool,
}

/// All tiers on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub dataset: String,
    pub traces: BTreeMap<Tier, TrainTrace>,
    pub failures: Vec<TierFailure>,
    pub reports: Vec<ComparisonReport>,
}

impl RunOutcome {
    pub fn trace(&self, tier: Tier) -> Option<&TrainTrace> {
        self.traces.get(&tier)
    }

    pub fn report(&self, candidate: Tier) -> Option<&ComparisonReport> {
        self.reports.iter().find(|r| r.candidate == candidate)
    }
}

/// Worst-case agreement of one candidate tier over all datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub candidate: Tier,
    pub max_abs_error: f64,
    pub max_rel_weight_percent: Option<f64>,
    pub max_rel_mse_train_percent: Option<f64>,
    pub max_rel_mse_test_percent: Option<f64>,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub format_version: u32,
    pub name: String,
    pub reference: Tier,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<TierSummary>,
    /// The configuration that produced this result.
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.failures.iter().any(|f| f.fatal))
    }

    pub fn monitor_silent(&self) -> bool {
        self.runs
            .iter()
            .flat_map(|r| r.traces.values())
            .filter_map(|t| t.monitor.as_ref())
            .all(|m| m.silent())
    }
}

fn is_fatal(e: &Error) -> bool {
    matches!(
        e,
        Error::Divergence { .. }
            | Error::NonFinite(_)
            | Error::NumericalOverflow(_)
            | Error::Infeasible(_)
            | Error::Config(_)
            | Error::SubthresholdViolation { .. }
    )
}

/// Run one tier on one dataset.
pub fn run_tier(
    tier: Tier,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    hp: &Hyperparams,
    circuit: &CircuitSpec,
) -> Result<TrainTrace> {
    let model0 = LinearModel::zeros(dataset.features(), cfg.bias);
    match tier {
        Tier::Ideal => train_with_guard(dataset, hp, &model0, cfg.solver.divergence_guard),
        Tier::Ct => {
            // The CT tier shares the circuit's hold time so their clocks agree.
            let (_, delta_s) = circuit.resolve(hp)?;
            Ok(train_ct(dataset, &Hyperparams { delta_s, ..*hp }, &model0, &cfg.solver)?.0)
        }
        Tier::Circuit => {
            let (cp, delta_s) = circuit.resolve(hp)?;
            train_circuit(
                dataset,
                &Hyperparams { delta_s, ..*hp },
                &cp,
                &model0,
                &cfg.solver,
                &cfg.node,
            )
        }
        Tier::Device => {
            let (cp, delta_s) = circuit.resolve(hp)?;
            train_device(
                dataset,
                &Hyperparams { delta_s, ..*hp },
                &cp,
                &cfg.device,
                &model0,
                &cfg.solver,
                &cfg.node,
            )
        }
    }
}

/// Every requested tier on one dataset, with comparisons against the
/// reference tier. Failures are recorded and do not stop the other tiers.
pub fn run_dataset(dataset: &Dataset, cfg: &ExperimentConfig, hp: &Hyperparams, circuit: &CircuitSpec) -> RunOutcome {
    let mut tiers = cfg.tiers.clone();
    if !tiers.contains(&cfg.reference_tier) {
        tiers.push(cfg.reference_tier);
    }
    tiers.sort();
    tiers.dedup();
    let mut traces = BTreeMap::new();
    let mut failures = Vec::new();
    for tier in tiers {
        match run_tier(tier, dataset, cfg, hp, circuit) {
            Ok(t) => {
                traces.insert(tier, t);
            }
            Err(e) => {
                log::error!("{tier} tier failed on {}: {e}", dataset.name);
                failures.push(TierFailure {
                    tier,
                    fatal: is_fatal(&e),
                    error: e.to_string(),
                });
            }
        }
    }
    let mut reports = Vec::new();
    if let Some(reference) = traces.get(&cfg.reference_tier) {
        for (tier, trace) in &traces {
            if *tier == cfg.reference_tier {
                continue;
            }
            match compare(reference, trace) {
                Ok(r) => reports.push(r),
                Err(e) => failures.push(TierFailure {
                    tier: *tier,
                    fatal: false,
                    error: format!("comparison failed: {e}"),
                }),
            }
        }
    }
    RunOutcome {
        dataset: dataset.name.clone(),
        traces,
        failures,
        reports,
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn summarise(runs: &[RunOutcome]) -> Result<Vec<TierSummary>> {
    let mut by_tier: BTreeMap<Tier, Vec<&ComparisonReport>> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.reports) {
        by_tier.entry(r.candidate).or_default().push(r);
    }
    let max_opt = |v: Vec<Option<f64>>| v.into_iter().try_fold(0.0f64, |a, x| x.map(|x| a.max(x)));
    by_tier
        .into_iter()
        .map(|(candidate, reps)| {
            let max_abs_error = reps.iter().fold(0.0f64, |a, r| a.max(r.max_abs_error));
            Ok(TierSummary {
                candidate,
                max_abs_error,
                max_rel_weight_percent: max_opt(reps.iter().map(|r| r.max_rel_percent).collect()),
                max_rel_mse_train_percent: max_opt(reps.iter().map(|r| r.mse_train.rel_percent).collect()),
                max_rel_mse_test_percent: if reps.iter().all(|r| r.mse_test.is_some()) {
                    max_opt(reps.iter().map(|r| r.mse_test.and_then(|t| t.rel_percent)).collect())
                } else {
                    None
                },
                precision: precision(max_abs_error, FULL_SCALE)?,
            })
        })
        .collect()
}

/// Run the configured tiers on every dataset, in parallel across datasets.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let datasets = cfg.datasets()?;
    // Surface infeasible mappings before spending time on any tier.
    if cfg
        .tiers
        .iter()
        .any(|t| matches!(t, Tier::Circuit | Tier::Device | Tier::Ct))
    {
        cfg.circuit.resolve(&cfg.hyperparams)?;
    }
    let runs: Vec<RunOutcome> = pool(cfg.workers)?.install(|| {
        datasets
            .par_iter()
            .map(|ds| run_dataset(ds, cfg, &cfg.hyperparams, &cfg.circuit))
            .collect()
    });
    Ok(ExperimentResult {
        format_version: FORMAT_VERSION,
        name: cfg.name.clone(),
        reference: cfg.reference_tier,
        summary: summarise(&runs)?,
        runs,
        config: cfg.clone(),
    })
}

/// One `(alpha, lambda)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub lambda: f64,
    /// Hold time chosen by the solver.
    pub delta_s: Option<f64>,
    pub error: Option<String>,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<TierSummary>,
}

impl SweepCell {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.runs.iter().any(|r| r.failures.iter().any(|f| f.fatal))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub format_version: u32,
    pub name: String,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Row-major: one row per alpha.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, alpha: f64, lambda: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.lambda == lambda)
    }

    pub fn failed(&self) -> bool {
        self.cells.iter().any(SweepCell::failed)
    }
}

/// Run every grid cell. Alpha is realised by the hold time, so the circuit is
/// always solved per cell. A failing cell is recorded and the grid completes.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg.sweep.clone().unwrap_or_default();
    let datasets = cfg.datasets()?;
    let bounds = match &cfg.circuit {
        CircuitSpec::Solve { bounds } => bounds.clone(),
        CircuitSpec::Explicit { params } => crate::circuit::CircuitBounds {
            base: params.clone(),
            c_min: params.c,
            c_max: params.c,
            ..Default::default()
        },
    };
    let spec = CircuitSpec::Solve { bounds };
    let points: Vec<(f64, f64)> = grid
        .alphas
        .iter()
        .flat_map(|a| grid.lambdas.iter().map(move |l| (*a, *l)))
        .collect();
    let cells = pool(cfg.workers)?.install(|| {
        points
            .par_iter()
            .map(|&(alpha, lambda)| {
                let hp = Hyperparams {
                    alpha,
                    lambda,
                    ..cfg.hyperparams
                };
                match spec.resolve(&hp) {
                    Err(e) => SweepCell {
                        alpha,
                        lambda,
                        delta_s: None,
                        error: Some(e.to_string()),
                        runs: Vec::new(),
                        summary: Vec::new(),
                    },
                    Ok((_, delta_s)) => {
                        let runs: Vec<RunOutcome> =
                            datasets.par_iter().map(|ds| run_dataset(ds, cfg, &hp, &spec)).collect();
                        let (summary, error) = match summarise(&runs) {
                            Ok(s) => (s, None),
                            Err(e) => (Vec::new(), Some(e.to_string())),
                        };
                        SweepCell {
                            alpha,
                            lambda,
                            delta_s: Some(delta_s),
                            error,
                            runs,
                            summary,
                        }
                    }
                }
            })
            .collect()
    });
    Ok(SweepResult {
        format_version: FORMAT_VERSION,
        name: cfg.name.clone(),
        alphas: grid.alphas,
        lambdas: grid.lambdas,
        cells,
    })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One CSV per tier per dataset, `<dataset>_<tier>.csv`.
pub fn write_runs(runs: &[RunOutcome], dir: &Path) -> Result<()> {
    for run in runs {
        for (tier, trace) in &run.traces {
            trace.write_csv_file(&dir.join(format!("{}_{tier}.csv", sanitize(&run.dataset))))?;
        }
    }
    Ok(())
}

/// Traces plus `report.json`.
pub fn write_experiment(result: &ExperimentResult, dir: &Path) -> Result<()> {
    write_runs(&result.runs, dir)?;
    write_atomic(
        &dir.join("report.json"),
        serde_json::to_string_pretty(result)?.as_bytes(),
    )
}

/// Per-cell curve files under `alpha<a>_lambda<l>/`, laid out as the grid,
/// plus `sweep.json`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    for cell in &result.cells {
        let sub = dir.join(format!("alpha{:e}_lambda{:e}", cell.alpha, cell.lambda));
        write_runs(&cell.runs, &sub)?;
    }
    write_atomic(
        &dir.join("sweep.json"),
        serde_json::to_string_pretty(result)?.as_bytes(),
    )
}
