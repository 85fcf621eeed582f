use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::seed::{derive_seed, Label};
use crate::data::{load_csv, make_windows, synth_prices, PriceSeries, SampleSet, Scaler};
use crate::error::{Error, Result};
use crate::gan::{checkpoint_to_json, load_checkpoint, train, ModelCheckpoint, TrainingTrace};
use crate::intervals::{build_interval, generate_scenarios, IntervalMethod};
use crate::metrics::{coverage_matrix, CoverageMatrix, MetricsReport};
use crate::numerics::Tensor2;
use crate::scalar::Scalar;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SCENARIO_BANDS_THREADS";

pub const FIG6_HEADER: &str = "t,truth,lower,upper,ecp,eaw";
pub const FIG7_HEADER: &str = "sigma,ecp_worst,eaw_worst";
pub const FIG8_HEADER: &str = "sigma,repeat,ecpas,eawapi";
pub const FIG9_HEADER: &str = "sigma,cl,ecpas_at_cl,eawapi_at_cl";
pub const TRACE_HEADER: &str = "iteration,critic_loss,generator_loss,gradient_penalty";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_seconds: f64,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub write_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunChecks {
    pub scenario_sets: u64,
    /// Scenario values falling outside the envelope of their own set.
    pub hull_violations: u64,
    /// Test point tracked in fig7.
    pub worst_point: usize,
    /// σ at which `worst_point` was chosen.
    pub worst_point_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub checkpoint: PathBuf,
    pub trained: bool,
    pub threads: usize,
    /// File name (relative to the output directory) to SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
    pub checks: RunChecks,
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Worker count from [`THREADS_ENV`], else the number of available cores.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The configured price series, from CSV or the synthetic generator.
pub fn load_series(config: &ExperimentConfig) -> Result<PriceSeries<f64>> {
    match &config.data_csv {
        Some(path) => load_csv(path, config.points_per_day),
        None => synth_prices(&config.synth),
    }
}

/// Normalized train and test windows, with the scaler fitted on the
/// training days only.
pub fn prepare_data<T: Scalar>(
    series: &PriceSeries<f64>,
    test_days: usize,
) -> Result<(SampleSet<T>, SampleSet<T>, Scaler<T>)> {
    let series = PriceSeries::new(
        series.values.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        series.points_per_day,
        series.start_index,
    )?;
    if series.days() < test_days + 2 {
        return Err(Error::InvalidArgument(format!(
            "{} days cannot provide {test_days} test days plus a training day and its condition",
            series.days()
        )));
    }
    let train_part = series.head_days(series.days() - test_days)?;
    let scaler = Scaler::fit(&train_part.values)?;
    let (train_set, test_set) = make_windows(&scaler.apply(&series), test_days)?;
    Ok((train_set, test_set, scaler))
}

/// Seed of one (σ index, repeat) cell.
pub fn cell_seed(master: u64, sigma_index: usize, repeat: usize) -> u64 {
    derive_seed(
        master,
        &[
            Label::Str("sigma"),
            sigma_index.into(),
            Label::Str("repeat"),
            repeat.into(),
        ],
    )
}

/// Seed of one test day within a cell.
pub fn day_seed(cell: u64, day: usize) -> u64 {
    derive_seed(cell, &[Label::Str("day"), day.into()])
}

/// Bands of all `R` repeats at one σ, each `R × N` in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBands<T = f64> {
    pub sigma: f64,
    pub lower: Tensor2<T>,
    pub upper: Tensor2<T>,
    pub scenario_sets: u64,
    pub hull_violations: u64,
}

struct Cell<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    hull_violations: u64,
}

fn run_cell<T: Scalar>(
    ck: &ModelCheckpoint<T>,
    test: &SampleSet<T>,
    sigma: f64,
    scenarios: usize,
    method: IntervalMethod,
    seed: u64,
) -> Result<Cell<T>> {
    let n = test.evaluation_points();
    let mut cell = Cell {
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
        hull_violations: 0,
    };
    for (j, sample) in test.samples.iter().enumerate() {
        let set = generate_scenarios(ck, &sample.condition, j, sigma, scenarios, day_seed(seed, j))?;
        let hull = build_interval(&set, IntervalMethod::Envelope)?;
        cell.hull_violations += set
            .scenarios
            .iter_rows()
            .map(|row| row.iter().enumerate().filter(|&(t, &v)| !hull.contains(t, v)).count() as u64)
            .sum::<u64>();
        let band = if method == IntervalMethod::Envelope {
            hull
        } else {
            build_interval(&set, method)?
        };
        cell.lower.extend(band.lower);
        cell.upper.extend(band.upper);
    }
    Ok(cell)
}

/// Predicts every (σ, repeat) cell. Cells are independent and may run in
/// any order; results are assembled in grid order.
pub fn predict_grid<T: Scalar>(
    ck: &ModelCheckpoint<T>,
    test: &SampleSet<T>,
    config: &ExperimentConfig,
    threads: usize,
) -> Result<Vec<SigmaBands<T>>> {
    if let Some(&s) = config.sigma_grid.iter().find(|&&s| !ck.sigma_in_range(s)) {
        let (lo, hi) = ck.train_sigma_range;
        return Err(Error::InvalidArgument(format!(
            "sigma {s} lies outside the checkpoint's training range [{lo}, {hi}]"
        )));
    }
    let repeats = config.repeats;
    let cells: Vec<(usize, usize)> = (0..config.sigma_grid.len())
        .flat_map(|k| (0..repeats).map(move |r| (k, r)))
        .collect();
    let work = |&(k, r): &(usize, usize)| {
        run_cell(
            ck,
            test,
            config.sigma_grid[k],
            config.scenarios_per_interval,
            config.interval_method,
            cell_seed(config.master_seed, k, r),
        )
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Cell<T>> = pool.install(|| cells.par_iter().map(work).collect::<Result<_>>())?;

    let n = test.evaluation_points();
    let mut out = Vec::with_capacity(config.sigma_grid.len());
    for (k, chunk) in results.chunks(repeats).enumerate() {
        let mut lower = Vec::with_capacity(repeats * n);
        let mut upper = Vec::with_capacity(repeats * n);
        let mut violations = 0;
        for cell in chunk {
            lower.extend_from_slice(&cell.lower);
            upper.extend_from_slice(&cell.upper);
            violations += cell.hull_violations;
        }
        out.push(SigmaBands {
            sigma: config.sigma_grid[k],
            lower: Tensor2::from_vec(repeats, n, lower)?,
            upper: Tensor2::from_vec(repeats, n, upper)?,
            scenario_sets: (repeats * test.len()) as u64,
            hull_violations: violations,
        });
    }
    Ok(out)
}

/// Grid index whose test point with the lowest ECP is tracked in fig7:
/// σ = 1 when present, otherwise the σ closest to 1 (lowest index on ties).
pub fn reference_sigma_index(grid: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in grid.iter().enumerate() {
        if (s - 1.0).abs() < (grid[best] - 1.0).abs() {
            best = k;
        }
    }
    best
}

/// Index of the minimum, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

struct Emitter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Emitter {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }
}

fn trace_csv(trace: &TrainingTrace) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (i, r) in trace.records.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", r.critic_loss, r.generator_loss, r.gradient_penalty);
    }
    out
}

/// Runs with the worker count from [`THREADS_ENV`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    run_experiment_with::<f64>(config, threads_from_env()?)
}

/// Full sweep: data, training (or loading), σ × repeat predictions,
/// metrics and figure files. Output files depend only on the config, never
/// on `threads`.
pub fn run_experiment_with<T: Scalar>(config: &ExperimentConfig, threads: usize) -> Result<RunManifest> {
    let start = Instant::now();
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut emit = Emitter {
        dir: dir.clone(),
        files: BTreeMap::new(),
    };
    let mut timings = Timings::default();

    let t = Instant::now();
    let series = load_series(config)?;
    let (train_set, test_set, scaler) = prepare_data::<T>(&series, config.test_days)?;
    timings.data_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (ck, checkpoint_path, trained) = match &config.checkpoint {
        Some(path) => {
            let ck: ModelCheckpoint<T> = load_checkpoint(path)?;
            if ck.condition_dim != test_set.condition_dim() || ck.target_dim != test_set.points_per_day {
                return Err(Error::Inconsistent(format!(
                    "checkpoint expects condition {} / target {}, data give {} / {}",
                    ck.condition_dim,
                    ck.target_dim,
                    test_set.condition_dim(),
                    test_set.points_per_day
                )));
            }
            (ck, path.clone(), false)
        }
        None => {
            let seed = derive_seed(config.master_seed, &[Label::Str("train")]);
            let (ck, trace) = train(&train_set, scaler, &config.gan, seed)?;
            let mut json = checkpoint_to_json(&ck)?;
            json.push('\n');
            emit.write("checkpoint.json", &json)?;
            emit.write("training_trace.csv", &trace_csv(&trace))?;
            (ck, dir.join("checkpoint.json"), true)
        }
    };
    timings.train_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let bands = predict_grid(&ck, &test_set, config, threads)?;
    timings.predict_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let truth = test_set.truth();
    let range = ck.scaler.range();
    let unit = |v: T| {
        if config.price_units {
            ck.scaler.denormalize(v).to_f64_lossless()
        } else {
            v.to_f64_lossless()
        }
    };
    let mut reports = Vec::with_capacity(bands.len());
    let mut checks = RunChecks::default();
    for (k, b) in bands.iter().enumerate() {
        let mut m: CoverageMatrix<T> = coverage_matrix(&b.lower, &b.upper, &truth)?;
        if config.price_units {
            m = m.scale_widths(range)?;
        }
        let report = MetricsReport::from_matrix(&m, b.sigma, &config.cl_grid)?;
        emit.write(&format!("metrics_sigma{k}.json"), &(report.to_json()? + "\n"))?;

        let mut fig6 = format!("{FIG6_HEADER}\n");
        for (i, &y) in truth.iter().enumerate() {
            let _ = writeln!(
                fig6,
                "{i},{},{},{},{},{}",
                unit(y),
                unit(b.lower.get(0, i)),
                unit(b.upper.get(0, i)),
                report.ecp[i],
                report.eaw[i]
            );
        }
        emit.write(&format!("fig6_sigma{k}.csv"), &fig6)?;
        checks.scenario_sets += b.scenario_sets;
        checks.hull_violations += b.hull_violations;
        reports.push(report);
    }

    let reference = reference_sigma_index(&config.sigma_grid);
    checks.worst_point = argmin(&reports[reference].ecp);
    checks.worst_point_sigma = config.sigma_grid[reference];
    let mut fig7 = format!("{FIG7_HEADER}\n");
    let mut fig8 = format!("{FIG8_HEADER}\n");
    let mut fig9 = format!("{FIG9_HEADER}\n");
    for rep in &reports {
        let w = checks.worst_point;
        let _ = writeln!(fig7, "{},{},{}", rep.sigma, rep.ecp[w], rep.eaw[w]);
        for (r, (e, w)) in rep.ecpas.iter().zip(&rep.eawapi).enumerate() {
            let _ = writeln!(fig8, "{},{r},{e},{w}", rep.sigma);
        }
        for row in &rep.confidence_table {
            let _ = writeln!(
                fig9,
                "{},{},{},{}",
                rep.sigma, row.cl, row.ecpas_at_cl, row.eawapi_at_cl
            );
        }
    }
    emit.write("fig7.csv", &fig7)?;
    emit.write("fig8.csv", &fig8)?;
    emit.write("fig9.csv", &fig9)?;
    timings.write_seconds = t.elapsed().as_secs_f64();
    timings.total_seconds = start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        checkpoint: checkpoint_path,
        trained,
        threads,
        files: emit.files,
        checks,
        timings,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Inconsistent(e.to_string()))?;
    let path = dir.join("manifest.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;
    use crate::gan::GanHyper;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig {
                days: 6,
                points_per_day: 4,
                ..SynthConfig::default()
            },
            test_days: 1,
            sigma_grid: vec![1.0],
            repeats: 1,
            scenarios_per_interval: 5,
            output_dir: dir.to_path_buf(),
            gan: GanHyper {
                noise_dim: 3,
                hidden_widths: vec![6],
                batch_size: 4,
                iterations: 3,
                ..GanHyper::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn smallest_run_writes_schema_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment_with::<f64>(&tiny(dir.path()), 1).unwrap();
        let names: Vec<&str> = m.files.keys().map(String::as_str).collect();
        assert_eq!(
            names,
            vec![
                "checkpoint.json",
                "fig6_sigma0.csv",
                "fig7.csv",
                "fig8.csv",
                "fig9.csv",
                "metrics_sigma0.json",
                "training_trace.csv"
            ]
        );
        for (name, sum) in &m.files {
            let bytes = fs::read(dir.path().join(name)).unwrap();
            assert_eq!(&sha256_hex(&bytes), sum, "{name}");
        }
        let fig6 = fs::read_to_string(dir.path().join("fig6_sigma0.csv")).unwrap();
        assert_eq!(fig6.lines().next(), Some(FIG6_HEADER));
        assert_eq!(fig6.lines().count(), 1 + 4);
        let rep = MetricsReport::load(dir.path().join("metrics_sigma0.json")).unwrap();
        assert_eq!((rep.ecp.len(), rep.ecpas.len()), (4, 1));
        assert_eq!(m.checks.hull_violations, 0);
        assert_eq!(m.checks.scenario_sets, 1);
        let back = RunManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn figure_headers_are_frozen() {
        assert_eq!(FIG6_HEADER, "t,truth,lower,upper,ecp,eaw");
        assert_eq!(FIG7_HEADER, "sigma,ecp_worst,eaw_worst");
        assert_eq!(FIG8_HEADER, "sigma,repeat,ecpas,eawapi");
        assert_eq!(FIG9_HEADER, "sigma,cl,ecpas_at_cl,eawapi_at_cl");
    }

    #[test]
    fn sigma_outside_training_range_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            sigma_grid: vec![1.0, 3.5],
            ..tiny(dir.path())
        };
        let err = run_experiment_with::<f64>(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("3.5"), "{err}");
        assert!(!dir.path().join("fig7.csv").exists());
    }

    #[test]
    fn scaler_sees_training_days_only() {
        let mut values = vec![1.0; 16];
        values[15] = 100.0;
        values[0] = 0.0;
        let series = PriceSeries::new(values, 4, 0).unwrap();
        let (_, test, scaler) = prepare_data::<f64>(&series, 1).unwrap();
        assert_eq!((scaler.min, scaler.max), (0.0, 1.0));
        assert_eq!(test.samples[0].target[3], 100.0);
    }

    #[test]
    fn reference_sigma_rules() {
        assert_eq!(reference_sigma_index(&crate::gan::SIGMA_GRID), 2);
        assert_eq!(reference_sigma_index(&[0.5, 1.5, 2.0]), 0);
        assert_eq!(reference_sigma_index(&[2.0, 1.2]), 1);
        assert_eq!(argmin(&[0.3, 0.1, 0.1]), 1);
    }

    #[test]
    fn cell_seeds_follow_labels() {
        assert_eq!(
            cell_seed(9, 2, 3),
            derive_seed(9, &["sigma".into(), 2u64.into(), "repeat".into(), 3u64.into()])
        );
        assert_ne!(day_seed(1, 0), day_seed(1, 1));
    }
}
