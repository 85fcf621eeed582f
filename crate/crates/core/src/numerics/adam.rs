use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Adam moments and hyperparameters for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub first_moment: MlpGrads<T>,
    pub second_moment: MlpGrads<T>,
    pub step_count: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, learning_rate: T, beta1: T, beta2: T) -> Result<Self> {
        let in_unit = |b: T| b >= T::zero() && b < T::one();
        if !(learning_rate > T::zero()) || !in_unit(beta1) || !in_unit(beta2) {
            return Err(Error::InvalidArgument(format!(
                "adam needs lr > 0 and betas in [0, 1), got lr={learning_rate} beta1={beta1} beta2={beta2}"
            )));
        }
        Ok(Self {
            first_moment: params.zero_grads(),
            second_moment: params.zero_grads(),
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon: lit(1e-8),
        })
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut MlpParams<T>,
    gradients: &MlpGrads<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let grads = gradients.slices();
    let param_lens: Vec<usize> = params
        .layers()
        .iter()
        .flat_map(|l| [l.weight.data().len(), l.bias.len()])
        .collect();
    let lens = |slices: Vec<&[T]>| slices.iter().map(|s| s.len()).collect::<Vec<_>>();
    if param_lens != lens(grads.clone()) || param_lens != lens(state.first_moment.slices()) {
        return Err(Error::Dimension("gradients do not match parameters".into()));
    }
    if !gradients.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let correction1 = T::one() - b1.powi(t);
    let correction2 = T::one() - b2.powi(t);

    let params_s = params.param_slices_mut();
    let m_s = state.first_moment.slices_mut();
    let v_s = state.second_moment.slices_mut();
    for (((p, g), m), v) in params_s.into_iter().zip(grads).zip(m_s).zip(v_s) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
