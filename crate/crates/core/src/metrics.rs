//! Coverage and width metrics over repeated interval predictions.
//!
//! Everything derives from one `R × N` [`CoverageMatrix`] (repeat `r`,
//! evaluation point `i`). Column means give the per-point ECP and EAW, row
//! means the per-repeat ECPAS and EAWAPI. The per-repeat formulas and the
//! confidence statistics are reconstructions from their prose definitions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{quantile_sorted, Tensor2};
use crate::scalar::Scalar;

/// Containment indicators and widths for `R` repeats over `N` points.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMatrix<T = f64> {
    covered: Vec<bool>,
    widths: Tensor2<T>,
}

impl<T: Scalar> CoverageMatrix<T> {
    /// `covered` is row-major `R × N`, matching `widths`.
    pub fn new(covered: Vec<bool>, widths: Tensor2<T>) -> Result<Self> {
        let (r, n) = widths.shape();
        if r == 0 || n == 0 {
            return Err(Error::Dimension("coverage matrix needs R >= 1 and N >= 1".into()));
        }
        if covered.len() != r * n {
            return Err(Error::Dimension(format!(
                "{} coverage flags for a {r}x{n} width matrix",
                covered.len()
            )));
        }
        if widths.data().iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidArgument("widths must be finite and >= 0".into()));
        }
        Ok(Self { covered, widths })
    }

    pub fn repeats(&self) -> usize {
        self.widths.rows()
    }

    pub fn points(&self) -> usize {
        self.widths.cols()
    }

    pub fn is_covered(&self, r: usize, i: usize) -> bool {
        self.covered[r * self.points() + i]
    }

    pub fn width(&self, r: usize, i: usize) -> T {
        self.widths.get(r, i)
    }

    pub fn widths(&self) -> &Tensor2<T> {
        &self.widths
    }

    /// Same indicators with every width multiplied by `k`.
    pub fn scale_widths(&self, k: T) -> Result<Self> {
        let mut widths = self.widths.clone();
        widths.data_mut().iter_mut().for_each(|w| *w = *w * k);
        Self::new(self.covered.clone(), widths)
    }

    /// Covered-count per point.
    pub fn column_counts(&self) -> Vec<usize> {
        let n = self.points();
        let mut counts = vec![0; n];
        for row in self.covered.chunks(n) {
            for (c, &hit) in counts.iter_mut().zip(row) {
                *c += usize::from(hit);
            }
        }
        counts
    }

    /// Covered-count per repeat.
    pub fn row_counts(&self) -> Vec<usize> {
        self.covered
            .chunks(self.points())
            .map(|row| row.iter().filter(|&&hit| hit).count())
            .collect()
    }
}

/// Builds the matrix from `R × N` bounds and `N` true values. Bounds are
/// inclusive.
pub fn coverage_matrix<T: Scalar>(lower: &Tensor2<T>, upper: &Tensor2<T>, truth: &[T]) -> Result<CoverageMatrix<T>> {
    if lower.shape() != upper.shape() || lower.cols() != truth.len() {
        return Err(Error::Dimension(format!(
            "bounds {:?} / {:?} do not match {} true values",
            lower.shape(),
            upper.shape(),
            truth.len()
        )));
    }
    let (r, n) = lower.shape();
    let mut covered = Vec::with_capacity(r * n);
    let mut widths = Tensor2::zeros(r, n);
    for row in 0..r {
        for (i, &y) in truth.iter().enumerate() {
            let (lo, hi) = (lower.get(row, i), upper.get(row, i));
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "lower bound above upper at repeat {row}, point {i}"
                )));
            }
            covered.push(lo <= y && y <= hi);
            widths.set(row, i, hi - lo);
        }
    }
    CoverageMatrix::new(covered, widths)
}

/// ECP: fraction of repeats covering each point.
pub fn ecp_per_sample<T: Scalar>(m: &CoverageMatrix<T>) -> Vec<T> {
    let r = T::of_usize(m.repeats());
    m.column_counts().into_iter().map(|c| T::of_usize(c) / r).collect()
}

/// EAW: mean width per point.
pub fn eaw_per_sample<T: Scalar>(m: &CoverageMatrix<T>) -> Vec<T> {
    let r = T::of_usize(m.repeats());
    let mut sums = vec![T::zero(); m.points()];
    for row in m.widths.iter_rows() {
        for (s, &w) in sums.iter_mut().zip(row) {
            *s = *s + w;
        }
    }
    sums.into_iter().map(|s| s / r).collect()
}

/// ECPAS: fraction of points covered by each repeat.
pub fn ecpas_per_repeat<T: Scalar>(m: &CoverageMatrix<T>) -> Vec<T> {
    let n = T::of_usize(m.points());
    m.row_counts().into_iter().map(|c| T::of_usize(c) / n).collect()
}

/// EAWAPI: mean width of each repeat.
pub fn eawapi_per_repeat<T: Scalar>(m: &CoverageMatrix<T>) -> Vec<T> {
    let n = T::of_usize(m.points());
    m.widths
        .iter_rows()
        .map(|row| row.iter().copied().sum::<T>() / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceKind {
    /// A coverage level met or exceeded by at least a `CL` share of repeats.
    CoverageLower,
    /// A width not exceeded by at least a `CL` share of repeats.
    WidthUpper,
}

/// Nearest-rank confidence statistic over per-repeat values: the
/// `(1 - CL)`-quantile for coverage, the `CL`-quantile for width.
pub fn confidence_stat<T: Scalar>(values: &[T], cl: f64, kind: ConfidenceKind) -> Result<T> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {cl}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("confidence statistic of no values".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("confidence statistic input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let q = match kind {
        ConfidenceKind::CoverageLower => 1.0 - cl,
        ConfidenceKind::WidthUpper => cl,
    };
    quantile_sorted(&sorted, q)
}

/// Confidence levels 0.50, 0.55, ..., 0.95.
pub fn default_cl_grid() -> Vec<f64> {
    (10..=19).map(|k| f64::from(k) * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub cl: f64,
    pub ecpas_at_cl: f64,
    pub eawapi_at_cl: f64,
}

/// All metric views of one matrix at one σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub sigma: f64,
    pub ecp: Vec<f64>,
    pub eaw: Vec<f64>,
    pub ecpas: Vec<f64>,
    pub eawapi: Vec<f64>,
    pub confidence_table: Vec<ConfidenceRow>,
}

impl MetricsReport {
    pub fn from_matrix<T: Scalar>(m: &CoverageMatrix<T>, sigma: f64, cl_grid: &[f64]) -> Result<Self> {
        let f = |v: Vec<T>| v.into_iter().map(|x| x.to_f64_lossless()).collect::<Vec<_>>();
        let ecpas = f(ecpas_per_repeat(m));
        let eawapi = f(eawapi_per_repeat(m));
        let confidence_table = cl_grid
            .iter()
            .map(|&cl| {
                Ok(ConfidenceRow {
                    cl,
                    ecpas_at_cl: confidence_stat(&ecpas, cl, ConfidenceKind::CoverageLower)?,
                    eawapi_at_cl: confidence_stat(&eawapi, cl, ConfidenceKind::WidthUpper)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sigma,
            ecp: f(ecp_per_sample(m)),
            eaw: f(eaw_per_sample(m)),
            ecpas,
            eawapi,
            confidence_table,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Inconsistent(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Corrupt {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// `point,ecp,eaw`
    pub fn points_csv(&self) -> String {
        let mut out = String::from("point,ecp,eaw\n");
        for (i, (e, w)) in self.ecp.iter().zip(&self.eaw).enumerate() {
            let _ = writeln!(out, "{i},{e},{w}");
        }
        out
    }

    /// `repeat,ecpas,eawapi`
    pub fn repeats_csv(&self) -> String {
        let mut out = String::from("repeat,ecpas,eawapi\n");
        for (r, (e, w)) in self.ecpas.iter().zip(&self.eawapi).enumerate() {
            let _ = writeln!(out, "{r},{e},{w}");
        }
        out
    }

    /// `cl,ecpas_at_cl,eawapi_at_cl`
    pub fn confidence_csv(&self) -> String {
        let mut out = String::from("cl,ecpas_at_cl,eawapi_at_cl\n");
        for row in &self.confidence_table {
            let _ = writeln!(out, "{},{},{}", row.cl, row.ecpas_at_cl, row.eawapi_at_cl);
        }
        out
    }
}

/// Order statistics of a per-repeat quantity. The median is the
/// nearest-rank 0.5 quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("summary needs non-empty, non-NaN values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        Ok(Self {
            min: sorted[0],
            median: quantile_sorted(&sorted, 0.5)?,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowEcpPoint {
    pub point: usize,
    pub ecp: f64,
}

/// Per-point coverage failures set against the all-sample view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallacyReport {
    pub sigma: Option<f64>,
    pub threshold: f64,
    pub points: usize,
    pub repeats: usize,
    pub low_ecp: Vec<LowEcpPoint>,
    pub ecpas: Summary,
    pub ecp: Summary,
}

impl FallacyReport {
    pub fn from_metrics(report: &MetricsReport, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "threshold must be finite, got {threshold}"
            )));
        }
        let low_ecp = report
            .ecp
            .iter()
            .enumerate()
            .filter(|(_, &e)| e < threshold)
            .map(|(point, &ecp)| LowEcpPoint { point, ecp })
            .collect();
        Ok(Self {
            sigma: Some(report.sigma),
            threshold,
            points: report.ecp.len(),
            repeats: report.ecpas.len(),
            low_ecp,
            ecpas: Summary::of(&report.ecpas)?,
            ecp: Summary::of(&report.ecp)?,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(sigma) = self.sigma {
            let _ = write!(out, "sigma {sigma}: ");
        }
        let _ = writeln!(out, "{} points, {} repeats", self.points, self.repeats);
        let _ = writeln!(
            out,
            "all-sample view: ECPAS min {:.4}, median {:.4}, mean {:.4}, max {:.4}",
            self.ecpas.min, self.ecpas.median, self.ecpas.mean, self.ecpas.max
        );
        let _ = writeln!(
            out,
            "per-sample view: {} of {} points have ECP < {}",
            self.low_ecp.len(),
            self.points,
            self.threshold
        );
        for p in &self.low_ecp {
            let _ = writeln!(out, "  point {:>5}  ECP {:.4}", p.point, p.ecp);
        }
        if !self.low_ecp.is_empty() {
            let _ = writeln!(
                out,
                "an ECPAS of {:.4} does not mean each point is covered with that probability",
                self.ecpas.median
            );
        }
        out
    }
}

pub fn fallacy_report<T: Scalar>(m: &CoverageMatrix<T>, threshold: f64) -> Result<FallacyReport> {
    let mut report = FallacyReport::from_metrics(&MetricsReport::from_matrix(m, 0.0, &[])?, threshold)?;
    report.sigma = None;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};

    fn matrix_from(covered: &[&[bool]], widths: &[&[f64]]) -> CoverageMatrix {
        let flags = covered.iter().flat_map(|r| r.iter().copied()).collect();
        CoverageMatrix::new(flags, Tensor2::from_rows(widths).unwrap()).unwrap()
    }

    #[test]
    fn inclusive_bounds() {
        let lo = Tensor2::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let hi = Tensor2::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let m = coverage_matrix(&lo, &hi, &[1.0, 1.0000001]).unwrap();
        assert!(m.is_covered(0, 0));
        assert!(!m.is_covered(0, 1));
        let m = coverage_matrix(&lo, &hi, &[0.0, -1e-300]).unwrap();
        assert!(m.is_covered(0, 0) && !m.is_covered(0, 1));
    }

    #[test]
    fn coverage_matrix_rejects_bad_shapes() {
        let lo = Tensor2::<f64>::zeros(2, 3);
        let hi = Tensor2::<f64>::zeros(2, 3);
        assert!(coverage_matrix(&lo, &hi, &[0.0; 2]).is_err());
        assert!(coverage_matrix(&lo, &Tensor2::zeros(3, 3), &[0.0; 3]).is_err());
        let mut inverted = Tensor2::<f64>::zeros(2, 3);
        inverted.set(1, 1, -1.0);
        assert!(coverage_matrix(&lo, &inverted, &[0.0; 3]).is_err());
        assert!(CoverageMatrix::new(vec![], Tensor2::<f64>::zeros(0, 0)).is_err());
        assert!(CoverageMatrix::new(vec![true], Tensor2::from_vec(1, 1, vec![-0.1]).unwrap()).is_err());
    }

    #[test]
    fn small_means() {
        let m = matrix_from(&[&[true, false], &[true, true]], &[&[0.1, 0.2], &[0.3, 0.6]]);
        assert_eq!(ecp_per_sample(&m), vec![1.0, 0.5]);
        assert!((eaw_per_sample(&m)[0] - 0.2).abs() < 1e-15);
        assert_eq!(ecpas_per_repeat(&m), vec![0.5, 1.0]);
        let row = matrix_from(&[&[true, true, true]], &[&[0.2, 0.4, 0.6]]);
        assert!((eawapi_per_repeat(&row)[0] - 0.4).abs() < 1e-15);
        assert!(ecp_per_sample(&row).iter().all(|&e| e == 0.0 || e == 1.0));
    }

    #[test]
    fn ten_of_a_hundred() {
        let flags: Vec<bool> = (0..100).map(|r| r < 10).collect();
        let m: CoverageMatrix = CoverageMatrix::new(flags, Tensor2::zeros(100, 1)).unwrap();
        assert_eq!(ecp_per_sample(&m), vec![0.1]);
    }

    #[test]
    fn confidence_examples() {
        let values: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0).collect();
        assert_eq!(
            confidence_stat(&values, 0.95, ConfidenceKind::CoverageLower).unwrap(),
            0.05
        );
        assert_eq!(
            confidence_stat(&values, 0.95, ConfidenceKind::WidthUpper).unwrap(),
            0.95
        );
        for cl in default_cl_grid() {
            for kind in [ConfidenceKind::CoverageLower, ConfidenceKind::WidthUpper] {
                assert_eq!(confidence_stat(&[0.7; 9], cl, kind).unwrap(), 0.7);
            }
        }
        assert!(confidence_stat(&values, 0.0, ConfidenceKind::WidthUpper).is_err());
        assert!(confidence_stat(&values, 1.0, ConfidenceKind::WidthUpper).is_err());
        assert!(confidence_stat::<f64>(&[], 0.5, ConfidenceKind::WidthUpper).is_err());
    }

    #[test]
    fn cl_grid() {
        let g = default_cl_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[9] - 0.95).abs() < 1e-15);
    }

    fn plateau() -> CoverageMatrix {
        let never = [17, 161, 200];
        let flags = (0..100).flat_map(|_| (0..240).map(|i| !never.contains(&i))).collect();
        CoverageMatrix::new(flags, Tensor2::zeros(100, 240)).unwrap()
    }

    #[test]
    fn plateau_fixture() {
        let m = plateau();
        assert!(ecpas_per_repeat(&m).iter().all(|&e| e == 0.9875));
        let rep = fallacy_report(&m, 0.5).unwrap();
        let flagged: Vec<usize> = rep.low_ecp.iter().map(|p| p.point).collect();
        assert_eq!(flagged, vec![17, 161, 200]);
        assert!(rep.low_ecp.iter().all(|p| p.ecp == 0.0));
        assert_eq!(rep.ecpas.median, 0.9875);
        let text = rep.render();
        assert!(text.contains("3 of 240 points"), "{text}");
        assert!(text.contains("0.9875"));
    }

    #[test]
    fn fully_covered_has_no_low_points() {
        let m: CoverageMatrix = CoverageMatrix::new(vec![true; 12], Tensor2::zeros(3, 4)).unwrap();
        assert!(fallacy_report(&m, 0.99).unwrap().low_ecp.is_empty());
    }

    #[test]
    fn threshold_flags_exactly_one_column() {
        let flags = (0..100).flat_map(|r| [true, r < 79, true]).collect();
        let m: CoverageMatrix = CoverageMatrix::new(flags, Tensor2::zeros(100, 3)).unwrap();
        let rep = fallacy_report(&m, 0.8).unwrap();
        assert_eq!(rep.low_ecp, vec![LowEcpPoint { point: 1, ecp: 0.79 }]);
    }

    #[test]
    fn report_round_trips_and_tables() {
        let m = matrix_from(
            &[&[true, false], &[false, true], &[true, true]],
            &[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]],
        );
        let rep = MetricsReport::from_matrix(&m, 1.0, &default_cl_grid()).unwrap();
        let back = MetricsReport::from_json(&rep.to_json().unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.points_csv().lines().next(), Some("point,ecp,eaw"));
        assert_eq!(rep.points_csv().lines().count(), 3);
        assert_eq!(rep.repeats_csv().lines().next(), Some("repeat,ecpas,eawapi"));
        assert_eq!(rep.repeats_csv().lines().count(), 4);
        assert_eq!(rep.confidence_csv().lines().next(), Some("cl,ecpas_at_cl,eawapi_at_cl"));
        assert_eq!(rep.confidence_csv().lines().count(), 11);
        assert!(MetricsReport::from_json("{", Path::new("x")).is_err());
    }

    fn random_matrix() -> impl Strategy<Value = CoverageMatrix> {
        (1usize..=50, 1usize..=50).prop_flat_map(|(r, n)| {
            (
                prop::collection::vec(prop::bool::ANY, r * n),
                prop::collection::vec(0.0f64..2.0, r * n),
            )
                .prop_map(move |(c, w)| CoverageMatrix::new(c, Tensor2::from_vec(r, n, w).unwrap()).unwrap())
        })
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    proptest! {
        #[test]
        fn transpose_identity(m in random_matrix()) {
            prop_assert!((mean(&ecp_per_sample(&m)) - mean(&ecpas_per_repeat(&m))).abs() <= 1e-12);
            prop_assert!((mean(&eaw_per_sample(&m)) - mean(&eawapi_per_repeat(&m))).abs() <= 1e-12);
        }

        #[test]
        fn metric_ranges(m in random_matrix()) {
            prop_assert!(ecp_per_sample(&m).iter().chain(&ecpas_per_repeat(&m)).all(|&e| (0.0..=1.0).contains(&e)));
            prop_assert!(eaw_per_sample(&m).iter().chain(&eawapi_per_repeat(&m)).all(|&w| w >= 0.0));
        }

        #[test]
        fn confidence_is_monotone_and_guaranteed(values in prop::collection::vec(0.0f64..1.0, 1..120)) {
            let grid = default_cl_grid();
            let lows: Vec<f64> = grid.iter().map(|&cl| confidence_stat(&values, cl, ConfidenceKind::CoverageLower).unwrap()).collect();
            let highs: Vec<f64> = grid.iter().map(|&cl| confidence_stat(&values, cl, ConfidenceKind::WidthUpper).unwrap()).collect();
            for k in 1..grid.len() {
                prop_assert!(lows[k] <= lows[k - 1]);
                prop_assert!(highs[k] >= highs[k - 1]);
            }
            for (k, &cl) in grid.iter().enumerate() {
                let need = (cl * values.len() as f64 - 1e-9).ceil() as usize;
                prop_assert!(values.iter().filter(|&&v| v >= lows[k]).count() >= need);
                prop_assert!(values.iter().filter(|&&v| v <= highs[k]).count() >= need);
            }
        }

        #[test]
        fn counts_are_consistent(m in random_matrix()) {
            prop_assert_eq!(m.column_counts().iter().sum::<usize>(), m.row_counts().iter().sum::<usize>());
        }
    }
}
