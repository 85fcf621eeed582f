use super::{sample_training_noise, ModelCheckpoint};
use crate::error::{Error, Result};
use crate::numerics::{MlpGrads, MlpParams, Rng, Tensor2};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WganLosses<T = f64> {
    /// `mean D(fake) - mean D(real) + gp_weight * gradient_penalty`
    pub critic_loss: T,
    /// `-mean D(fake)`
    pub generator_loss: T,
    /// Unweighted `mean (‖∇x̂ D(x̂)‖ - 1)²`.
    pub gradient_penalty: T,
    /// `mean D(real) - mean D(fake)`
    pub wasserstein_estimate: T,
}

impl<T: Scalar> WganLosses<T> {
    pub fn is_finite(&self) -> bool {
        self.critic_loss.is_finite() && self.generator_loss.is_finite() && self.gradient_penalty.is_finite()
    }
}

/// Evaluates the WGAN-GP losses on one minibatch. Fake rows use
/// training-regime noise; interpolation weights are drawn per row.
pub fn wgan_losses<T: Scalar>(
    checkpoint: &ModelCheckpoint<T>,
    real_batch: &Tensor2<T>,
    condition_batch: &Tensor2<T>,
    gp_weight: T,
    rng: &mut Rng,
) -> Result<WganLosses<T>> {
    let fake = generate_training_fakes(checkpoint, condition_batch, rng)?.0;
    let eps: Vec<T> = (0..real_batch.rows())
        .map(|_| T::from_f64_lossy(rng.uniform()))
        .collect();
    let (losses, _) = critic_gradients(&checkpoint.critic, real_batch, &fake, condition_batch, &eps, gp_weight)?;
    if !losses.is_finite() {
        return Err(Error::NonFinite("wgan loss".into()));
    }
    Ok(losses)
}

/// Generator output for each condition row, each with its own σ.
pub(crate) fn generate_training_fakes<T: Scalar>(
    checkpoint: &ModelCheckpoint<T>,
    condition_batch: &Tensor2<T>,
    rng: &mut Rng,
) -> Result<(Tensor2<T>, Vec<f64>)> {
    let (z, sigmas) = training_noise_batch(checkpoint, condition_batch.rows(), rng)?;
    let input = z.hconcat(condition_batch)?;
    Ok((checkpoint.generator.forward(&input)?.output().clone(), sigmas))
}

pub(crate) fn training_noise_batch<T: Scalar>(
    checkpoint: &ModelCheckpoint<T>,
    rows: usize,
    rng: &mut Rng,
) -> Result<(Tensor2<T>, Vec<f64>)> {
    let mut data = Vec::with_capacity(rows * checkpoint.noise_dim);
    let mut sigmas = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (z, s) = sample_training_noise::<T>(rng, checkpoint.noise_dim, checkpoint.train_sigma_range)?;
        data.extend(z);
        sigmas.push(s);
    }
    Ok((Tensor2::from_vec(rows, checkpoint.noise_dim, data)?, sigmas))
}

/// Critic loss and its gradient with respect to the critic parameters, for
/// fixed real rows, fake rows and interpolation weights.
pub fn critic_gradients<T: Scalar>(
    critic: &MlpParams<T>,
    real: &Tensor2<T>,
    fake: &Tensor2<T>,
    condition: &Tensor2<T>,
    eps: &[T],
    gp_weight: T,
) -> Result<(WganLosses<T>, MlpGrads<T>)> {
    let batch = real.rows();
    if batch == 0 || fake.shape() != real.shape() || condition.rows() != batch || eps.len() != batch {
        return Err(Error::Dimension(format!(
            "inconsistent critic batch: real {:?}, fake {:?}, condition {:?}, {} weights",
            real.shape(),
            fake.shape(),
            condition.shape(),
            eps.len()
        )));
    }
    let inv_b = T::one() / T::of_usize(batch);

    let tape_real = critic.forward(&real.hconcat(condition)?)?;
    let tape_fake = critic.forward(&fake.hconcat(condition)?)?;
    let mean_real = tape_real.output().data().iter().copied().sum::<T>() * inv_b;
    let mean_fake = tape_fake.output().data().iter().copied().sum::<T>() * inv_b;

    let mut seed = Tensor2::zeros(batch, 1);
    seed.fill(-inv_b);
    let (mut grads, _) = critic.backward(&tape_real, &seed)?;
    seed.fill(inv_b);
    let (fake_grads, _) = critic.backward(&tape_fake, &seed)?;
    grads.add_scaled(T::one(), &fake_grads);

    let mut interp = real.clone();
    for (r, &e) in eps.iter().enumerate() {
        let fr = fake.row(r);
        for (x, &f) in interp.row_mut(r).iter_mut().zip(fr) {
            *x = e * *x + (T::one() - e) * f;
        }
    }
    let (penalty, penalty_grads) = gradient_penalty(critic, &interp, condition)?;
    grads.add_scaled(gp_weight, &penalty_grads);

    let wasserstein = mean_real - mean_fake;
    Ok((
        WganLosses {
            critic_loss: -wasserstein + gp_weight * penalty,
            generator_loss: -mean_fake,
            gradient_penalty: penalty,
            wasserstein_estimate: wasserstein,
        },
        grads,
    ))
}

/// `mean_b (‖∇_x D([x_b | c_b])‖ - 1)²`, the gradient taken over the
/// scenario coordinates only, plus its gradient with respect to the critic
/// parameters.
pub fn gradient_penalty<T: Scalar>(
    critic: &MlpParams<T>,
    scenarios: &Tensor2<T>,
    condition: &Tensor2<T>,
) -> Result<(T, MlpGrads<T>)> {
    let batch = scenarios.rows();
    let width = scenarios.cols();
    let tape = critic.forward(&scenarios.hconcat(condition)?)?;
    let mut ones = Tensor2::zeros(batch, 1);
    ones.fill(T::one());
    let igt = critic.input_gradient(&tape, &ones)?;
    let g = igt.input_gradient();

    let inv_b = T::one() / T::of_usize(batch);
    let two = lit::<T>(2.0);
    let mut penalty = T::zero();
    let mut adjoint = Tensor2::zeros(batch, g.cols());
    for b in 0..batch {
        let gs = &g.row(b)[..width];
        let norm = gs.iter().map(|&v| v * v).sum::<T>().sqrt();
        let gap = norm - T::one();
        penalty = penalty + gap * gap;
        if norm > T::zero() {
            let k = two * gap / norm * inv_b;
            for (a, &v) in adjoint.row_mut(b)[..width].iter_mut().zip(gs) {
                *a = k * v;
            }
        }
    }
    let grads = critic.input_gradient_param_vjp(&tape, &igt, &adjoint)?;
    Ok((penalty * inv_b, grads))
}

/// Generator loss `-mean D(G(z, c), c)` and its gradient with respect to
/// the generator parameters.
pub fn generator_gradients<T: Scalar>(
    generator: &MlpParams<T>,
    critic: &MlpParams<T>,
    z: &Tensor2<T>,
    condition: &Tensor2<T>,
) -> Result<(T, MlpGrads<T>)> {
    let batch = z.rows();
    if batch == 0 || condition.rows() != batch {
        return Err(Error::Dimension("generator batch is empty or misaligned".into()));
    }
    let inv_b = T::one() / T::of_usize(batch);
    let gen_tape = generator.forward(&z.hconcat(condition)?)?;
    let fake = gen_tape.output();
    let critic_tape = critic.forward(&fake.hconcat(condition)?)?;
    let loss = -critic_tape.output().data().iter().copied().sum::<T>() * inv_b;
    let mut seed = Tensor2::zeros(batch, 1);
    seed.fill(-inv_b);
    let (_, d_input) = critic.backward(&critic_tape, &seed)?;
    let d_fake = d_input.columns(0, fake.cols())?;
    let (grads, _) = generator.backward(&gen_tape, &d_fake)?;
    Ok((loss, grads))
}
