use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Central-difference check of an analytic gradient.
///
/// Returns the largest `|analytic - numeric| / max(1e-6, |analytic| + |numeric|)`
/// over all coordinates of `params`. The floor keeps coordinates whose true
/// gradient is zero (an output bias that cancels between two terms, say)
/// from turning finite-difference rounding noise of order `ε·|loss| / h`
/// into a large relative error.
pub fn grad_check<T, F>(mut loss: F, params: &[T], analytic: &[T], fd_step: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(fd_step > T::zero()) {
        return Err(Error::InvalidArgument(format!("fd_step must be > 0, got {fd_step}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let floor = lit::<T>(1e-6);
    let two = lit::<T>(2.0);
    let mut probe = params.to_vec();
    let mut worst = T::zero();
    for i in 0..params.len() {
        probe[i] = params[i] + fd_step;
        let up = loss(&probe);
        probe[i] = params[i] - fd_step;
        let down = loss(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        let numeric = (up - down) / (two * fd_step);
        let err = (analytic[i] - numeric).abs() / floor.max(analytic[i].abs() + numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
