//! Price series: synthetic generation, CSV ingestion, min-max scaling and
//! day-ahead windowing.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// Number of extra condition features appended after the previous day's
/// prices (sin and cos of the weekday phase).
pub const PHASE_FEATURES: usize = 2;

const PHASE_PERIOD_DAYS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries<T = f64> {
    pub values: Vec<T>,
    pub points_per_day: usize,
    /// Absolute index of `values[0]` in the source series.
    pub start_index: usize,
}

impl<T: Scalar> PriceSeries<T> {
    pub fn new(values: Vec<T>, points_per_day: usize, start_index: usize) -> Result<Self> {
        if points_per_day == 0 {
            return Err(Error::InvalidArgument("points_per_day must be positive".into()));
        }
        if values.is_empty() || !values.len().is_multiple_of(points_per_day) {
            return Err(Error::InvalidArgument(format!(
                "series length {} is not a positive multiple of {points_per_day} points per day",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value at index {i}")));
        }
        Ok(Self {
            values,
            points_per_day,
            start_index,
        })
    }

    pub fn days(&self) -> usize {
        self.values.len() / self.points_per_day
    }

    pub fn day(&self, d: usize) -> &[T] {
        &self.values[d * self.points_per_day..(d + 1) * self.points_per_day]
    }

    /// The first `days` days as a new series.
    pub fn head_days(&self, days: usize) -> Result<Self> {
        if days == 0 || days > self.days() {
            return Err(Error::InvalidArgument(format!(
                "cannot take {days} of {} days",
                self.days()
            )));
        }
        Self::new(
            self.values[..days * self.points_per_day].to_vec(),
            self.points_per_day,
            self.start_index,
        )
    }
}

/// Min-max scaler onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T = f64> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> Scaler<T> {
    pub fn new(min: T, max: T) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Degenerate(format!(
                "scaler needs finite max > min, got min={min} max={max}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn fit(values: &[T]) -> Result<Self> {
        let min = values.iter().copied().fold(T::infinity(), T::min);
        let max = values.iter().copied().fold(T::neg_infinity(), T::max);
        if values.is_empty() || !(max > min) {
            return Err(Error::Degenerate(
                "cannot scale a series with fewer than two distinct values".into(),
            ));
        }
        Self::new(min, max)
    }

    #[inline]
    pub fn range(&self) -> T {
        self.max - self.min
    }

    #[inline]
    pub fn normalize(&self, v: T) -> T {
        (v - self.min) / self.range()
    }

    #[inline]
    pub fn denormalize(&self, v: T) -> T {
        v * self.range() + self.min
    }

    /// Scales every value. Values outside the fitted range are left outside
    /// `[0, 1]`; nothing is clipped.
    pub fn apply(&self, series: &PriceSeries<T>) -> PriceSeries<T> {
        PriceSeries {
            values: series.values.iter().map(|&v| self.normalize(v)).collect(),
            ..series.clone()
        }
    }

    pub fn invert(&self, series: &PriceSeries<T>) -> PriceSeries<T> {
        PriceSeries {
            values: series.values.iter().map(|&v| self.denormalize(v)).collect(),
            ..series.clone()
        }
    }
}

/// Fits a scaler on `series` and returns the scaled series with it.
pub fn fit_normalize<T: Scalar>(series: &PriceSeries<T>) -> Result<(PriceSeries<T>, Scaler<T>)> {
    let scaler = Scaler::fit(&series.values)?;
    Ok((scaler.apply(series), scaler))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f64> {
    pub condition: Vec<T>,
    pub target: Vec<T>,
    /// Day index of the target within the source series.
    pub day: usize,
    /// Absolute index of the target's first point.
    pub true_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T = f64> {
    pub samples: Vec<Sample<T>>,
    pub points_per_day: usize,
}

impl<T: Scalar> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Evaluation points: samples times points per day.
    pub fn evaluation_points(&self) -> usize {
        self.samples.len() * self.points_per_day
    }

    pub fn condition_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.condition.len())
    }

    /// All targets concatenated in sample order.
    pub fn truth(&self) -> Vec<T> {
        self.samples.iter().flat_map(|s| s.target.iter().copied()).collect()
    }
}

/// Condition vector for the day that follows `previous_day`, whose absolute
/// day number is `day_number`.
pub fn day_condition<T: Scalar>(previous_day: &[T], day_number: usize) -> Vec<T> {
    let angle = 2.0 * PI * (day_number % PHASE_PERIOD_DAYS) as f64 / PHASE_PERIOD_DAYS as f64;
    let mut c = Vec::with_capacity(previous_day.len() + PHASE_FEATURES);
    c.extend_from_slice(previous_day);
    c.push(T::from_f64_lossy(angle.sin()));
    c.push(T::from_f64_lossy(angle.cos()));
    c
}

/// Builds day-ahead samples. Day `d` (for `d >= 1`) is conditioned on day
/// `d - 1`; the last `test_days` days form the test set, everything before
/// the training set.
pub fn make_windows<T: Scalar>(series: &PriceSeries<T>, test_days: usize) -> Result<(SampleSet<T>, SampleSet<T>)> {
    let days = series.days();
    if test_days == 0 || days < test_days + 2 {
        return Err(Error::InvalidArgument(format!(
            "{days} days cannot provide {test_days} test days plus a training day and its condition"
        )));
    }
    let ppd = series.points_per_day;
    let first_day = series.start_index / ppd;
    let sample = |d: usize| Sample {
        condition: day_condition(series.day(d - 1), first_day + d),
        target: series.day(d).to_vec(),
        day: d,
        true_index: series.start_index + d * ppd,
    };
    let split = days - test_days;
    let train = SampleSet {
        samples: (1..split).map(sample).collect(),
        points_per_day: ppd,
    };
    let test = SampleSet {
        samples: (split..days).map(sample).collect(),
        points_per_day: ppd,
    };
    Ok((train, test))
}

/// Parameters of the synthetic price generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub points_per_day: usize,
    pub base_level: f64,
    pub daily_amplitude: f64,
    /// Phase offset of the daily sinusoid, radians.
    pub phase: f64,
    pub noise_std: f64,
    pub spike_probability: f64,
    pub spike_magnitude_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 365,
            points_per_day: 48,
            base_level: 50.0,
            daily_amplitude: 15.0,
            phase: -PI / 2.0,
            noise_std: 4.0,
            spike_probability: 0.01,
            spike_magnitude_range: (40.0, 120.0),
            seed: 2024,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.spike_magnitude_range;
        let bad = if self.days == 0 {
            Some("days must be >= 1")
        } else if self.points_per_day == 0 {
            Some("points_per_day must be >= 1")
        } else if !(0.0..=1.0).contains(&self.spike_probability) {
            Some("spike_probability must lie in [0, 1]")
        } else if !(self.daily_amplitude >= 0.0) {
            Some("daily_amplitude must be >= 0")
        } else if !(self.noise_std >= 0.0) {
            Some("noise_std must be >= 0")
        } else if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            Some("spike_magnitude_range must be finite with lo <= hi")
        } else if !self.base_level.is_finite() || !self.phase.is_finite() {
            Some("base_level and phase must be finite")
        } else {
            None
        };
        match bad {
            Some(msg) => Err(Error::InvalidArgument(msg.into())),
            None => Ok(()),
        }
    }
}

/// Synthetic series plus the mask of points that received a spike.
pub fn synth_prices_with_spikes(config: &SynthConfig) -> Result<(PriceSeries<f64>, Vec<bool>)> {
    config.validate()?;
    let mut rng = Rng::seed_from(config.seed);
    let n = config.days * config.points_per_day;
    let (lo, hi) = config.spike_magnitude_range;
    let mut values = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    for t in 0..n {
        let angle = 2.0 * PI * t as f64 / config.points_per_day as f64 + config.phase;
        let noise = rng.standard_normal() * config.noise_std;
        let spiked = rng.bernoulli(config.spike_probability);
        let spike = if spiked { rng.uniform_in(lo, hi) } else { 0.0 };
        values.push(config.base_level + config.daily_amplitude * angle.sin() + noise + spike);
        spikes.push(spiked);
    }
    Ok((PriceSeries::new(values, config.points_per_day, 0)?, spikes))
}

pub fn synth_prices(config: &SynthConfig) -> Result<PriceSeries<f64>> {
    synth_prices_with_spikes(config).map(|(s, _)| s)
}

/// Reads a `t,price` CSV. `t` must count up from 0.
pub fn load_csv(path: impl AsRef<Path>, points_per_day: usize) -> Result<PriceSeries<f64>> {
    let path = path.as_ref();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "t" || &header[1] != "price" {
        return Err(parse_err(
            1,
            format!(
                "expected header `t,price`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut values = Vec::new();
    for (expected_t, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let t: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid index `{}`", &record[0])))?;
        if t != expected_t {
            return Err(parse_err(
                line,
                format!("index {t} out of sequence, expected {expected_t}"),
            ));
        }
        let price: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid price `{}`", &record[1])))?;
        if !price.is_finite() {
            return Err(parse_err(line, format!("non-finite price `{}`", &record[1])));
        }
        values.push(price);
    }
    PriceSeries::new(values, points_per_day, 0)
}

pub fn write_csv(series: &PriceSeries<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "t,price").map_err(io)?;
    for (t, v) in series.values.iter().enumerate() {
        writeln!(w, "{t},{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}
