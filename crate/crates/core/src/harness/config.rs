use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::gan::{GanHyper, SIGMA_GRID};
use crate::intervals::IntervalMethod;
use crate::metrics::default_cl_grid;

/// Experiment settings. Every key is optional in TOML; top-level keys are
/// scalars or arrays, with the synthetic generator under `[synth]` and the
/// GAN settings under `[gan]`.
///
/// ```toml
/// master_seed = 7
/// test_days = 5
/// repeats = 100
/// scenarios_per_interval = 100
/// interval_method = "envelope"     # or "quantile:0.1"
/// sigma_grid = [0.5, 1.0, 2.0]
/// output_dir = "out"
/// # data_csv = "prices.csv"       # t,price; replaces [synth]
/// # checkpoint = "ck.json"        # load instead of training
///
/// [gan]
/// iterations = 3000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// CSV price file; when absent, data come from `synth`.
    pub data_csv: Option<PathBuf>,
    /// Points per day of `data_csv`.
    pub points_per_day: usize,
    pub test_days: usize,
    pub sigma_grid: Vec<f64>,
    pub repeats: usize,
    pub scenarios_per_interval: usize,
    pub interval_method: IntervalMethod,
    pub cl_grid: Vec<f64>,
    /// Existing checkpoint to evaluate instead of training one.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Report widths and fig6 bands in price units instead of normalized
    /// units.
    pub price_units: bool,
    pub synth: SynthConfig,
    pub gan: GanHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 2024,
            data_csv: None,
            points_per_day: 48,
            test_days: 5,
            sigma_grid: SIGMA_GRID.to_vec(),
            repeats: 100,
            scenarios_per_interval: 100,
            interval_method: IntervalMethod::Envelope,
            cl_grid: default_cl_grid(),
            checkpoint: None,
            output_dir: PathBuf::from("out"),
            price_units: false,
            synth: SynthConfig::default(),
            gan: GanHyper::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that does not need the checkpoint. The σ grid is
    /// checked against the checkpoint's training range separately.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.test_days == 0 {
            return bad("test_days must be >= 1".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.scenarios_per_interval < 2 {
            return bad("scenarios_per_interval must be >= 2".into());
        }
        if self.points_per_day == 0 {
            return bad("points_per_day must be >= 1".into());
        }
        if self.sigma_grid.is_empty() {
            return bad("sigma_grid is empty".into());
        }
        if let Some(s) = self.sigma_grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("sigma_grid entries must be > 0, got {s}"));
        }
        if let Some(cl) = self.cl_grid.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return bad(format!("cl_grid entries must lie in (0, 1), got {cl}"));
        }
        self.interval_method.validate()?;
        if self.data_csv.is_none() {
            self.synth.validate()?;
        }
        if self.checkpoint.is_none() {
            self.gan.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_experiment() {
        let c = ExperimentConfig::default();
        assert_eq!(c.sigma_grid.len(), 9);
        assert_eq!((c.repeats, c.scenarios_per_interval, c.test_days), (100, 100, 5));
        assert_eq!(c.cl_grid.len(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig {
            repeats: 3,
            interval_method: IntervalMethod::Quantile(0.2),
            data_csv: Some("p.csv".into()),
            ..ExperimentConfig::default()
        };
        c.gan.iterations = 10;
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_overrides() {
        let c = ExperimentConfig::from_toml(
            "repeats = 7\ninterval_method = \"quantile:0.1\"\n[gan]\niterations = 12\n[synth]\ndays = 30\n",
        )
        .unwrap();
        assert_eq!(c.repeats, 7);
        assert_eq!(c.interval_method, IntervalMethod::Quantile(0.1));
        assert_eq!(c.gan.iterations, 12);
        assert_eq!(c.gan.noise_dim, 32);
        assert_eq!(c.synth.days, 30);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "repeats = 0",
            "scenarios_per_interval = 1",
            "sigma_grid = [1.0, 0.0]",
            "sigma_grid = []",
            "cl_grid = [0.5, 1.0]",
            "unknown_key = 1",
            "interval_method = \"median\"",
            "[gan]\nnoise_dim = 0",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
