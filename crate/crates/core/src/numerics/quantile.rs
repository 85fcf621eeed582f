//! Nearest-rank empirical quantiles.

use crate::error::{Error, Result};

/// 1-based nearest rank `ceil(q * n)`, clamped to `1..=n`.
///
/// A product `q * n` within 1e-9 (relative) of an integer counts as that
/// integer, so `(1 - 0.95) * 100` gives rank 5 rather than 6.
pub fn nearest_rank(n: usize, q: f64) -> usize {
    let x = q * n as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * (n as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank.max(1.0) as usize).min(n.max(1))
}

/// Nearest-rank `q`-quantile of already sorted values.
pub fn quantile_sorted<T: Copy>(sorted: &[T], q: f64) -> Result<T> {
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
    }
    Ok(sorted[nearest_rank(sorted.len(), q) - 1])
}
