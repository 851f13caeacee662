use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgdrct::circuit::{map_hyperparams, solve_circuit_params, CircuitBounds};
use sgdrct::data::{gen_univariate_with, load_boston, BostonOptions, UnivariateOptions};
use sgdrct::harness::{
    csv_to_gnuplot, run_experiment, sweep, write_atomic, write_experiment, write_sweep, CircuitSpec, ExperimentConfig,
    Tier, CONFIG_ENV,
};
use sgdrct::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sgdrct",
    version,
    about = "Simulate continuous-time SGDr on an analog learning accelerator"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Hold time per sample in seconds.
    #[arg(long)]
    delta_s: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Tiers to run; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    tier: Vec<Tier>,
    /// Solve circuit parameters for alpha and lambda instead of using explicit ones.
    #[arg(long)]
    solve: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::single_neuron(),
        };
        let hp = &mut cfg.hyperparams;
        if let Some(a) = self.alpha {
            hp.alpha = a;
        }
        if let Some(l) = self.lambda {
            hp.lambda = l;
        }
        if let Some(d) = self.delta_s {
            hp.delta_s = d;
        }
        if let Some(e) = self.epochs {
            hp.epochs = e;
        }
        if !self.tier.is_empty() {
            cfg.tiers = self.tier.clone();
        }
        if self.solve {
            cfg.circuit = CircuitSpec::Solve {
                bounds: CircuitBounds::default(),
            };
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a univariate dataset or normalise the Boston CSV, as JSON.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_scale: f64,
        /// Normalise this Boston Housing CSV instead of generating data.
        #[arg(long)]
        boston: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured tiers and write one trace CSV per tier and dataset.
    Train(ConfigArgs),
    /// Run the tiers, print comparison tables and write report.json.
    Compare(ConfigArgs),
    /// Run an (alpha, lambda) grid, solving circuit parameters per cell.
    Sweep(ConfigArgs),
    /// Print the alpha and lambda realised by the configured circuit.
    MapParams(ConfigArgs),
    /// Solve circuit parameters for target alpha and lambda.
    SolveParams {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        lambda: f64,
        /// JSON file with solver bounds.
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Convert a trace CSV into whitespace-separated columns for gnuplot.
    Gnuplot {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// `Ok(true)` when the run had no divergence or infeasibility.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::GenData {
            seed,
            samples,
            noise_scale,
            boston,
            split_seed,
            out,
        } => {
            let ds = match boston {
                Some(p) => load_boston(
                    &p,
                    &BostonOptions {
                        split_seed,
                        ..Default::default()
                    },
                )?,
                None => gen_univariate_with(
                    seed,
                    samples,
                    &UnivariateOptions {
                        true_weight: None,
                        noise_scale,
                    },
                )?,
            };
            write_atomic(&out, ds.to_json()?.as_bytes())?;
            log::info!("wrote {} ({} rows) to {}", ds.name, ds.len(), out.display());
            Ok(true)
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let result = run_experiment(&cfg)?;
            let dir = output_dir(&cfg);
            sgdrct::harness::write_runs(&result.runs, &dir)?;
            for run in &result.runs {
                for (tier, t) in &run.traces {
                    println!(
                        "{} {tier}: final weights {:?}, train mse {:.6}",
                        run.dataset,
                        t.final_weights(),
                        t.final_mse_train().unwrap_or(f64::NAN)
                    );
                }
                for f in &run.failures {
                    eprintln!("{} {}: {}", run.dataset, f.tier, f.error);
                }
            }
            log::info!("traces in {}", dir.display());
            Ok(!result.failed())
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let result = run_experiment(&cfg)?;
            for run in &result.runs {
                for r in &run.reports {
                    println!("{}", r.render());
                }
                for f in &run.failures {
                    eprintln!("{} {}: {}", run.dataset, f.tier, f.error);
                }
            }
            for s in &result.summary {
                println!(
                    "{} vs {}: max abs error {:.3e}, max rel weight {}%, resolution {}",
                    s.candidate,
                    result.reference,
                    s.max_abs_error,
                    s.max_rel_weight_percent.map_or("n/a".into(), |v| format!("{v:.4}")),
                    s.precision
                );
            }
            if !result.monitor_silent() {
                eprintln!("warning: a node current left the subthreshold window; see report.json");
            }
            let dir = output_dir(&cfg);
            write_experiment(&result, &dir)?;
            log::info!("report in {}", dir.display());
            Ok(!result.failed())
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let result = sweep(&cfg)?;
            for cell in &result.cells {
                let status = if cell.failed() { "FAILED" } else { "ok" };
                let gap = cell
                    .summary
                    .iter()
                    .map(|s| {
                        format!(
                            "{} {}%",
                            s.candidate,
                            s.max_rel_weight_percent.map_or("n/a".into(), |v| format!("{v:.4}"))
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(", ");
                println!(
                    "alpha={:e} lambda={} ds={} {status} {gap}",
                    cell.alpha,
                    cell.lambda,
                    cell.delta_s.map_or("n/a".into(), |d| format!("{d:e}"))
                );
                if let Some(e) = &cell.error {
                    eprintln!("  {e}");
                }
            }
            write_sweep(&result, &output_dir(&cfg))?;
            Ok(!result.failed())
        }
        Command::MapParams(args) => {
            let cfg = args.load()?;
            let (cp, delta_s) = cfg.circuit.resolve(&cfg.hyperparams)?;
            let (alpha, lambda) = map_hyperparams(delta_s, &cp)?;
            print_json(&serde_json::json!({
                "params": cp,
                "delta_s": delta_s,
                "alpha": alpha,
                "lambda": lambda,
                "tau": cp.tau(),
            }))?;
            Ok(true)
        }
        Command::SolveParams { alpha, lambda, bounds } => {
            let bounds = match bounds {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => CircuitBounds::default(),
            };
            match solve_circuit_params(alpha, lambda, &bounds) {
                Ok(s) => {
                    print_json(&s)?;
                    Ok(true)
                }
                Err(Error::Infeasible(msg)) => {
                    eprintln!("infeasible: {msg}");
                    Ok(false)
                }
                Err(e) => Err(e),
            }
        }
        Command::Gnuplot { input, out } => {
            let reader = std::fs::File::open(&input)?;
            match out {
                Some(p) => {
                    let mut buf = Vec::new();
                    csv_to_gnuplot(reader, &mut buf)?;
                    write_atomic(&p, &buf)?;
                }
                None => csv_to_gnuplot(reader, std::io::stdout().lock())?,
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
