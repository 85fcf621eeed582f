use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scenario_bands::data::{make_windows, synth_prices, write_csv};
use scenario_bands::gan::{load_checkpoint, save_checkpoint, train};
use scenario_bands::harness::{
    derive_seed, load_series, prepare_data, run_experiment_with, threads_from_env, ExperimentConfig, Label,
};
use scenario_bands::intervals::{predict_day, IntervalMethod};
use scenario_bands::metrics::{FallacyReport, MetricsReport};
use scenario_bands::{Checkpoint64, Error, Result};

#[derive(Parser)]
#[command(
    name = "scenario-bands",
    version,
    about = "Scenario-based interval prediction and coverage metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic price series as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train a model on the configured data and save the checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Predict one test day's interval from a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noise scale; must be > 0 and inside the checkpoint's training range.
        #[arg(long, value_parser = parse_sigma)]
        sigma: f64,
        /// Test day, 0-based.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        scenarios: Option<usize>,
        /// "envelope" or "quantile:<alpha>".
        #[arg(long)]
        method: Option<IntervalMethod>,
        /// Report values in price units instead of normalized units.
        #[arg(long)]
        price_units: bool,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full σ × repeat sweep and write figure data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        method: Option<IntervalMethod>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Worker threads; defaults to $SCENARIO_BANDS_THREADS or all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the per-sample versus all-sample report for metrics files.
    Report {
        /// metrics_sigma<k>.json files written by `evaluate`.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// ECP threshold below which a point is listed.
        #[arg(long, default_value_t = 0.5)]
        low_ecp: f64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Price CSV (`t,price`) instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(data) = &self.data {
            config.data_csv = Some(data.clone());
        }
        if let Some(seed) = self.seed {
            config.master_seed = seed;
            config.synth.seed = seed;
        }
        Ok(config)
    }
}

fn parse_sigma(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("sigma must be > 0 (σ>0), got {v}")),
        Err(e) => Err(format!("{e}")),
    }
}

#[derive(Serialize)]
struct PredictOutput {
    sigma: f64,
    day: usize,
    method: IntervalMethod,
    scenarios: usize,
    seed: u64,
    units: &'static str,
    lower: Vec<f64>,
    upper: Vec<f64>,
    truth: Vec<f64>,
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, out, days } => {
            let mut config = common.load()?;
            if let Some(days) = days {
                config.synth.days = days;
            }
            let series = synth_prices(&config.synth)?;
            write_csv(&series, &out)?;
            eprintln!("wrote {} days to {}", series.days(), out.display());
        }
        Command::Train {
            common,
            out,
            iterations,
        } => {
            let mut config = common.load()?;
            if let Some(n) = iterations {
                config.gan.iterations = n;
            }
            config.validate()?;
            let series = load_series(&config)?;
            let (train_set, _, scaler) = prepare_data::<f64>(&series, config.test_days)?;
            let seed = derive_seed(config.master_seed, &[Label::Str("train")]);
            let (ck, trace) = train(&train_set, scaler, &config.gan, seed)?;
            save_checkpoint(&ck, &out)?;
            if let Some(last) = trace.records.last() {
                eprintln!(
                    "trained {} iterations: critic loss {:.4}, generator loss {:.4}",
                    trace.len(),
                    last.critic_loss,
                    last.generator_loss
                );
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Predict {
            common,
            checkpoint,
            sigma,
            index,
            scenarios,
            method,
            price_units,
            out,
        } => {
            let config = common.load()?;
            let ck: Checkpoint64 = load_checkpoint(&checkpoint)?;
            if !ck.sigma_in_range(sigma) {
                let (lo, hi) = ck.train_sigma_range;
                return Err(Error::InvalidArgument(format!(
                    "sigma {sigma} lies outside the checkpoint's training range [{lo}, {hi}]"
                )));
            }
            let series = load_series(&config)?;
            let (_, test) = make_windows(&ck.scaler.apply(&series), config.test_days)?;
            let sample = test
                .samples
                .get(index)
                .ok_or_else(|| Error::InvalidArgument(format!("day index {index} out of range (0..{})", test.len())))?;
            let method = method.unwrap_or(config.interval_method);
            let count = scenarios.unwrap_or(config.scenarios_per_interval);
            let seed = derive_seed(config.master_seed, &[Label::Str("predict"), index.into()]);
            let band = predict_day(&ck, &sample.condition, sigma, count, method, seed)?;
            let unit = |v: &f64| if price_units { ck.scaler.denormalize(*v) } else { *v };
            let output = PredictOutput {
                sigma,
                day: index,
                method,
                scenarios: count,
                seed,
                units: if price_units { "price" } else { "normalized" },
                lower: band.lower.iter().map(unit).collect(),
                upper: band.upper.iter().map(unit).collect(),
                truth: sample.target.iter().map(unit).collect(),
            };
            let text = serde_json::to_string_pretty(&output).map_err(|e| Error::Inconsistent(e.to_string()))?;
            write_text(out.as_deref(), &(text + "\n"))?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            out_dir,
            repeats,
            scenarios,
            method,
            iterations,
            threads,
        } => {
            let mut config = common.load()?;
            if checkpoint.is_some() {
                config.checkpoint = checkpoint;
            }
            if let Some(dir) = out_dir {
                config.output_dir = dir;
            }
            if let Some(r) = repeats {
                config.repeats = r;
            }
            if let Some(s) = scenarios {
                config.scenarios_per_interval = s;
            }
            if let Some(m) = method {
                config.interval_method = m;
            }
            if let Some(n) = iterations {
                config.gan.iterations = n;
            }
            let threads = match threads {
                Some(n) => n.max(1),
                None => threads_from_env()?,
            };
            let manifest = run_experiment_with::<f64>(&config, threads)?;
            println!(
                "wrote {} files to {} in {:.1} s ({} scenario sets, {} hull violations)",
                manifest.files.len() + 1,
                config.output_dir.display(),
                manifest.timings.total_seconds,
                manifest.checks.scenario_sets,
                manifest.checks.hull_violations
            );
        }
        Command::Report { metrics, low_ecp } => {
            if !(0.0..=1.0).contains(&low_ecp) {
                return Err(Error::InvalidArgument(format!(
                    "--low-ecp must lie in [0, 1], got {low_ecp}"
                )));
            }
            for (i, path) in metrics.iter().enumerate() {
                let report = MetricsReport::load(path)?;
                if i > 0 {
                    println!();
                }
                println!("{}", path.display());
                print!("{}", FallacyReport::from_metrics(&report, low_ecp)?.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
