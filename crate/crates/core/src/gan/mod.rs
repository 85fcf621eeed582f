//! Pattern-diversity conditional time-series GAN.
//!
//! A conditional generator maps `[z | condition]` to one day of prices and a
//! conditional critic scores `[scenario | condition]`. Training is WGAN with
//! gradient penalty. During training every noise vector is drawn at its own
//! scale `σ ~ U(lo, hi)`, so inference at any σ inside that range stays
//! within the distribution of noise the generator has seen.

mod checkpoint;
mod losses;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use losses::{critic_gradients, generator_gradients, gradient_penalty, wgan_losses, WganLosses};
pub use train::{train, TrainingRecord, TrainingTrace};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{Activation, MlpParams, Rng, Tensor2};
use crate::scalar::Scalar;

/// The inference noise scales swept by the experiment harness.
pub const SIGMA_GRID: [f64; 9] = [
    1.0 / 3.0,
    2.0 / 3.0,
    1.0,
    4.0 / 3.0,
    5.0 / 3.0,
    2.0,
    7.0 / 3.0,
    8.0 / 3.0,
    3.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanHyper {
    pub noise_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub generator_activation: Activation,
    pub critic_activation: Activation,
    pub critic_steps_per_gen_step: usize,
    pub gp_weight: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub train_sigma_range: (f64, f64),
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            noise_dim: 32,
            hidden_widths: vec![64, 64],
            generator_activation: Activation::Relu,
            critic_activation: Activation::Relu,
            critic_steps_per_gen_step: 5,
            gp_weight: 10.0,
            batch_size: 32,
            iterations: 3000,
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.9,
            train_sigma_range: (1.0 / 3.0, 3.0),
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.train_sigma_range;
        let bad = if self.noise_dim == 0 {
            Some("noise_dim must be >= 1".to_string())
        } else if self.hidden_widths.contains(&0) {
            Some("hidden widths must be positive".to_string())
        } else if self.critic_steps_per_gen_step == 0 || self.batch_size == 0 {
            Some("critic_steps_per_gen_step and batch_size must be >= 1".to_string())
        } else if !(self.gp_weight >= 0.0) {
            Some("gp_weight must be >= 0".to_string())
        } else if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            Some("need learning_rate > 0 and betas in [0, 1)".to_string())
        } else if let Err(e) = validate_sigma_range((lo, hi)) {
            Some(e.to_string())
        } else {
            None
        };
        match bad {
            Some(msg) => Err(Error::InvalidArgument(msg)),
            None => Ok(()),
        }
    }
}

pub(crate) fn validate_sigma_range((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma range needs 0 < lo <= hi < inf, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_critic_loss: Option<f64>,
    pub final_generator_loss: Option<f64>,
    pub seed: u64,
}

/// A trained (or freshly initialized) generator/critic pair and everything
/// needed to use it on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<T = f64> {
    pub generator: MlpParams<T>,
    pub critic: MlpParams<T>,
    pub scaler: Scaler<T>,
    pub condition_dim: usize,
    pub target_dim: usize,
    pub noise_dim: usize,
    pub train_sigma_range: (f64, f64),
    pub format_version: u64,
    pub training_meta: TrainingMeta,
}

impl<T: Scalar> ModelCheckpoint<T> {
    /// Fresh networks: generator `[noise + condition] -> hidden -> target`,
    /// critic `[target + condition] -> hidden -> 1`, identity outputs.
    pub fn init(
        hyper: &GanHyper,
        condition_dim: usize,
        target_dim: usize,
        scaler: Scaler<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        if target_dim == 0 {
            return Err(Error::InvalidArgument("target_dim must be >= 1".into()));
        }
        let build = |input: usize, output: usize, act: Activation, rng: &mut Rng| {
            let mut dims = vec![input];
            dims.extend_from_slice(&hyper.hidden_widths);
            dims.push(output);
            let mut acts = vec![act; hyper.hidden_widths.len()];
            acts.push(Activation::Identity);
            MlpParams::init(&dims, &acts, rng)
        };
        let generator = build(
            hyper.noise_dim + condition_dim,
            target_dim,
            hyper.generator_activation,
            rng,
        )?;
        let critic = build(target_dim + condition_dim, 1, hyper.critic_activation, rng)?;
        Ok(Self {
            generator,
            critic,
            scaler,
            condition_dim,
            target_dim,
            noise_dim: hyper.noise_dim,
            train_sigma_range: hyper.train_sigma_range,
            format_version: FORMAT_VERSION,
            training_meta: TrainingMeta {
                iterations: 0,
                final_critic_loss: None,
                final_generator_loss: None,
                seed: 0,
            },
        })
    }

    /// Checks that the networks and the declared dimensions agree.
    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let c = &self.critic;
        let mismatch =
            |what: &str, got: usize, want: usize| Err(Error::Inconsistent(format!("{what} is {got}, expected {want}")));
        if g.input_dim() != self.noise_dim + self.condition_dim {
            return mismatch("generator input", g.input_dim(), self.noise_dim + self.condition_dim);
        }
        if g.output_dim() != self.target_dim {
            return mismatch("generator output", g.output_dim(), self.target_dim);
        }
        if c.input_dim() != self.target_dim + self.condition_dim {
            return mismatch("critic input", c.input_dim(), self.target_dim + self.condition_dim);
        }
        if c.output_dim() != 1 {
            return mismatch("critic output", c.output_dim(), 1);
        }
        for (name, net) in [("generator", g), ("critic", c)] {
            let last = &net.layers()[net.layers().len() - 1];
            if last.activation != Activation::Identity {
                return Err(Error::Inconsistent(format!(
                    "{name} output activation must be identity, found {}",
                    last.activation.name()
                )));
            }
            if !net.is_finite() {
                return Err(Error::Inconsistent(format!("{name} has non-finite parameters")));
            }
        }
        validate_sigma_range(self.train_sigma_range).map_err(|e| Error::Inconsistent(e.to_string()))
    }

    pub fn sigma_in_range(&self, sigma: f64) -> bool {
        let (lo, hi) = self.train_sigma_range;
        sigma >= lo && sigma <= hi
    }

    /// One scenario for one noise vector and condition.
    pub fn generator_forward(&self, z: &[T], condition: &[T]) -> Result<Vec<T>> {
        self.check_condition(condition)?;
        if z.len() != self.noise_dim {
            return Err(Error::Dimension(format!(
                "noise has length {}, expected {}",
                z.len(),
                self.noise_dim
            )));
        }
        let mut input = Vec::with_capacity(z.len() + condition.len());
        input.extend_from_slice(z);
        input.extend_from_slice(condition);
        self.generator.forward_one(&input)
    }

    /// Scenarios for a batch of noise rows sharing one condition.
    pub fn generate_batch(&self, z: &Tensor2<T>, condition: &[T]) -> Result<Tensor2<T>> {
        self.check_condition(condition)?;
        if z.cols() != self.noise_dim {
            return Err(Error::Dimension(format!(
                "noise rows have length {}, expected {}",
                z.cols(),
                self.noise_dim
            )));
        }
        let cond = Tensor2::from_rows(&vec![condition; z.rows()])?;
        let input = z.hconcat(&cond)?;
        Ok(self.generator.forward(&input)?.output().clone())
    }

    /// Unbounded critic score of one scenario under one condition.
    pub fn critic_forward(&self, scenario: &[T], condition: &[T]) -> Result<T> {
        self.check_condition(condition)?;
        if scenario.len() != self.target_dim {
            return Err(Error::Dimension(format!(
                "scenario has length {}, expected {}",
                scenario.len(),
                self.target_dim
            )));
        }
        let mut input = Vec::with_capacity(scenario.len() + condition.len());
        input.extend_from_slice(scenario);
        input.extend_from_slice(condition);
        Ok(self.critic.forward_one(&input)?[0])
    }

    fn check_condition(&self, condition: &[T]) -> Result<()> {
        if condition.len() != self.condition_dim {
            return Err(Error::Dimension(format!(
                "condition has length {}, expected {}",
                condition.len(),
                self.condition_dim
            )));
        }
        Ok(())
    }
}

/// Draws `σ ~ U(lo, hi)` and then `z ~ N(0, σ² I)`.
pub fn sample_training_noise<T: Scalar>(
    rng: &mut Rng,
    noise_dim: usize,
    sigma_range: (f64, f64),
) -> Result<(Vec<T>, f64)> {
    validate_sigma_range(sigma_range)?;
    let sigma = rng.uniform_in(sigma_range.0, sigma_range.1);
    let z = crate::numerics::sample_gaussian(rng, noise_dim, T::from_f64_lossy(sigma))?;
    Ok((z, sigma))
}
