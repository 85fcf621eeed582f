//! Scenario draws at a fixed inference σ and their aggregation into
//! per-time-point bands.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::ModelCheckpoint;
use crate::numerics::{fill_gaussian, quantile_sorted, Rng, Tensor2};
use crate::scalar::Scalar;

/// `S` scenarios sharing one condition, drawn at one σ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet<T = f64> {
    /// `S × target_dim`, one scenario per row.
    pub scenarios: Tensor2<T>,
    pub sigma: f64,
    pub condition_id: usize,
    pub seed_used: u64,
}

impl<T: Scalar> ScenarioSet<T> {
    pub fn new(scenarios: Tensor2<T>, sigma: f64, condition_id: usize, seed_used: u64) -> Result<Self> {
        if scenarios.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a scenario set needs at least 2 scenarios, got {}",
                scenarios.rows()
            )));
        }
        check_sigma(sigma)?;
        if !scenarios.is_finite() {
            return Err(Error::NonFinite("generated scenario".into()));
        }
        Ok(Self {
            scenarios,
            sigma,
            condition_id,
            seed_used,
        })
    }

    pub fn len(&self) -> usize {
        self.scenarios.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.rows() == 0
    }

    pub fn target_dim(&self) -> usize {
        self.scenarios.cols()
    }

    /// Values of every scenario at time point `t`.
    pub fn column(&self, t: usize) -> Vec<T> {
        self.scenarios.iter_rows().map(|row| row[t]).collect()
    }
}

/// How scenarios become a band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum IntervalMethod {
    /// Pointwise min and max.
    #[default]
    Envelope,
    /// Nearest-rank `alpha/2` and `1 - alpha/2` quantiles.
    Quantile(f64),
}

impl IntervalMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Envelope => Ok(()),
            Self::Quantile(alpha) if alpha > 0.0 && alpha < 1.0 => Ok(()),
            Self::Quantile(alpha) => Err(Error::InvalidArgument(format!(
                "quantile alpha must lie in (0, 1), got {alpha}"
            ))),
        }
    }
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Envelope => f.write_str("envelope"),
            Self::Quantile(alpha) => write!(f, "quantile:{alpha}"),
        }
    }
}

impl FromStr for IntervalMethod {
    type Err = Error;

    /// Accepts `envelope` or `quantile:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let method = if s.eq_ignore_ascii_case("envelope") {
            Self::Envelope
        } else if let Some(alpha) = s.strip_prefix("quantile:") {
            let alpha = alpha
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad quantile alpha in {s:?}")))?;
            Self::Quantile(alpha)
        } else {
            return Err(Error::InvalidArgument(format!(
                "unknown interval method {s:?}; expected envelope or quantile:<alpha>"
            )));
        };
        method.validate()?;
        Ok(method)
    }
}

impl TryFrom<String> for IntervalMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<IntervalMethod> for String {
    fn from(m: IntervalMethod) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries<T = f64> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub sigma: f64,
    pub method: IntervalMethod,
}

impl<T: Scalar> IntervalSeries<T> {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn widths(&self) -> Vec<T> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| u - l).collect()
    }

    pub fn contains(&self, t: usize, value: T) -> bool {
        self.lower[t] <= value && value <= self.upper[t]
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "sigma must be finite and > 0, got {sigma}"
        )))
    }
}

/// Draws `count` scenarios for one condition with `z ~ N(0, sigma² I)`.
pub fn generate_scenarios<T: Scalar>(
    checkpoint: &ModelCheckpoint<T>,
    condition: &[T],
    condition_id: usize,
    sigma: f64,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet<T>> {
    check_sigma(sigma)?;
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scenarios per interval, got {count}"
        )));
    }
    let mut rng = Rng::seed_from(seed);
    let mut z = Tensor2::zeros(count, checkpoint.noise_dim);
    fill_gaussian(&mut rng, z.data_mut(), T::from_f64_lossy(sigma));
    let scenarios = checkpoint.generate_batch(&z, condition)?;
    ScenarioSet::new(scenarios, sigma, condition_id, seed)
}

pub fn build_interval<T: Scalar>(set: &ScenarioSet<T>, method: IntervalMethod) -> Result<IntervalSeries<T>> {
    method.validate()?;
    let dim = set.target_dim();
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for t in 0..dim {
        let mut column = set.column(t);
        let (lo, hi) = match method {
            IntervalMethod::Envelope => column
                .iter()
                .fold((column[0], column[0]), |(lo, hi), &v| (lo.min(v), hi.max(v))),
            IntervalMethod::Quantile(alpha) => {
                column.sort_by(|a, b| a.partial_cmp(b).expect("finite scenarios"));
                (
                    quantile_sorted(&column, alpha / 2.0)?,
                    quantile_sorted(&column, 1.0 - alpha / 2.0)?,
                )
            }
        };
        lower.push(lo);
        upper.push(hi);
    }
    Ok(IntervalSeries {
        lower,
        upper,
        sigma: set.sigma,
        method,
    })
}

/// [`generate_scenarios`] followed by [`build_interval`].
pub fn predict_day<T: Scalar>(
    checkpoint: &ModelCheckpoint<T>,
    condition: &[T],
    sigma: f64,
    count: usize,
    method: IntervalMethod,
    seed: u64,
) -> Result<IntervalSeries<T>> {
    let set = generate_scenarios(checkpoint, condition, 0, sigma, count, seed)?;
    build_interval(&set, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scaler;
    use crate::gan::GanHyper;
    use crate::numerics::Rng;
    use proptest::prelude::{prop, prop_assert, proptest, Strategy};

    fn set_of(rows: &[Vec<f64>]) -> ScenarioSet {
        ScenarioSet::new(Tensor2::from_rows(rows).unwrap(), 1.0, 0, 0).unwrap()
    }

    fn small_checkpoint() -> ModelCheckpoint {
        let hyper = GanHyper {
            noise_dim: 4,
            hidden_widths: vec![8],
            ..GanHyper::default()
        };
        ModelCheckpoint::init(&hyper, 3, 5, Scaler::new(0.0, 1.0).unwrap(), &mut Rng::seed_from(9)).unwrap()
    }

    #[test]
    fn envelope_of_three_scenarios() {
        let set = set_of(&[vec![1.0, 5.0], vec![3.0, 2.0], vec![2.0, 9.0]]);
        let band = build_interval(&set, IntervalMethod::Envelope).unwrap();
        assert_eq!(band.lower, vec![1.0, 2.0]);
        assert_eq!(band.upper, vec![3.0, 9.0]);
    }

    #[test]
    fn identical_scenarios_give_zero_width() {
        let set = set_of(&vec![vec![0.3, 0.7]; 4]);
        for m in [IntervalMethod::Envelope, IntervalMethod::Quantile(0.2)] {
            let band = build_interval(&set, m).unwrap();
            assert_eq!(band.lower, band.upper);
        }
    }

    #[test]
    fn quantile_band_uses_nearest_rank() {
        let rows: Vec<Vec<f64>> = (1..=100).map(|k| vec![k as f64]).collect();
        let band = build_interval(&set_of(&rows), IntervalMethod::Quantile(0.1)).unwrap();
        assert_eq!((band.lower[0], band.upper[0]), (5.0, 95.0));
    }

    #[test]
    fn scenario_set_invariants() {
        assert!(ScenarioSet::new(Tensor2::<f64>::zeros(1, 3), 1.0, 0, 0).is_err());
        assert!(ScenarioSet::new(Tensor2::<f64>::zeros(2, 3), 0.0, 0, 0).is_err());
        let mut bad = Tensor2::<f64>::zeros(2, 1);
        bad.set(0, 0, f64::NAN);
        assert!(ScenarioSet::new(bad, 1.0, 0, 0).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("envelope".parse::<IntervalMethod>().unwrap(), IntervalMethod::Envelope);
        assert_eq!(
            "quantile:0.1".parse::<IntervalMethod>().unwrap(),
            IntervalMethod::Quantile(0.1)
        );
        assert!("quantile:1.5".parse::<IntervalMethod>().is_err());
        assert!("median".parse::<IntervalMethod>().is_err());
        let m = IntervalMethod::Quantile(0.25);
        assert_eq!(m.to_string().parse::<IntervalMethod>().unwrap(), m);
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        let ck = small_checkpoint();
        let cond = [0.1, 0.2, 0.3];
        let a = generate_scenarios(&ck, &cond, 4, 1.0, 10, 77).unwrap();
        assert_eq!(a, generate_scenarios(&ck, &cond, 4, 1.0, 10, 77).unwrap());
        assert_ne!(a, generate_scenarios(&ck, &cond, 4, 1.0, 10, 78).unwrap());
        assert_eq!((a.len(), a.target_dim(), a.condition_id, a.seed_used), (10, 5, 4, 77));
        assert!(generate_scenarios(&ck, &cond, 0, 0.0, 10, 1).is_err());
        assert!(generate_scenarios(&ck, &cond, 0, -1.0, 10, 1).is_err());
        assert!(generate_scenarios(&ck, &cond, 0, 1.0, 1, 1).is_err());
        assert!(generate_scenarios(&ck, &cond[..2], 0, 1.0, 10, 1).is_err());
    }

    #[test]
    fn rows_match_single_generator_calls() {
        let ck = small_checkpoint();
        let cond = [0.5, -0.5, 1.0];
        let set = generate_scenarios(&ck, &cond, 0, 2.0, 3, 5).unwrap();
        let mut rng = Rng::seed_from(5);
        for row in set.scenarios.iter_rows() {
            let z = crate::numerics::sample_gaussian(&mut rng, 4, 2.0).unwrap();
            let single = ck.generator_forward(&z, &cond).unwrap();
            for (a, b) in row.iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_sigma_collapses_scenarios() {
        let ck = small_checkpoint();
        let cond = [0.0, 0.4, 0.8];
        let spread = |sigma| {
            let set = generate_scenarios(&ck, &cond, 0, sigma, 2, 3).unwrap();
            (0..5)
                .map(|t| (set.scenarios.get(0, t) - set.scenarios.get(1, t)).abs())
                .fold(0.0, f64::max)
        };
        assert!(spread(1e-6) < 1e-4);
        assert!(spread(1e-9) < spread(1e-6));
    }

    #[test]
    fn predict_day_composes() {
        let ck = small_checkpoint();
        let cond = [0.2, 0.2, 0.2];
        let band = predict_day(&ck, &cond, 1.5, 20, IntervalMethod::Envelope, 11).unwrap();
        let set = generate_scenarios(&ck, &cond, 0, 1.5, 20, 11).unwrap();
        assert_eq!(band, build_interval(&set, IntervalMethod::Envelope).unwrap());
        for row in set.scenarios.iter_rows() {
            for (t, &v) in row.iter().enumerate() {
                assert!(band.contains(t, v));
            }
        }
    }

    fn scenario_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..30, 1usize..6)
            .prop_flat_map(|(s, d)| prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), s))
    }

    proptest! {
        #[test]
        fn envelope_is_a_hull(rows in scenario_matrix()) {
            let set = set_of(&rows);
            let band = build_interval(&set, IntervalMethod::Envelope).unwrap();
            for row in &rows {
                for (t, &v) in row.iter().enumerate() {
                    prop_assert!(band.contains(t, v));
                }
            }
            for t in 0..band.len() {
                prop_assert!(rows.iter().any(|r| r[t] == band.lower[t]));
                prop_assert!(rows.iter().any(|r| r[t] == band.upper[t]));
            }
        }

        #[test]
        fn quantile_bands_nest(rows in scenario_matrix(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (a1, a2) = if a <= b { (a, b) } else { (b, a) };
            let set = set_of(&rows);
            let wide = build_interval(&set, IntervalMethod::Quantile(a1)).unwrap();
            let narrow = build_interval(&set, IntervalMethod::Quantile(a2)).unwrap();
            let hull = build_interval(&set, IntervalMethod::Envelope).unwrap();
            for t in 0..wide.len() {
                prop_assert!(wide.lower[t] <= wide.upper[t]);
                prop_assert!(narrow.lower[t] <= narrow.upper[t]);
                prop_assert!(wide.lower[t] <= narrow.lower[t] && narrow.upper[t] <= wide.upper[t]);
                prop_assert!(hull.lower[t] <= wide.lower[t] && wide.upper[t] <= hull.upper[t]);
            }
        }

        #[test]
        fn envelope_never_shrinks_with_more_scenarios(rows in scenario_matrix(), extra in prop::collection::vec(-200.0f64..200.0, 1..6)) {
            let d = rows[0].len();
            let mut more = rows.clone();
            more.push(extra.iter().cycle().take(d).copied().collect());
            let small = build_interval(&set_of(&rows), IntervalMethod::Envelope).unwrap();
            let big = build_interval(&set_of(&more), IntervalMethod::Envelope).unwrap();
            for t in 0..d {
                prop_assert!(big.lower[t] <= small.lower[t] && small.upper[t] <= big.upper[t]);
            }
        }
    }
}
