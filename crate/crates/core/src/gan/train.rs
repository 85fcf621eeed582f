use serde::{Deserialize, Serialize};

use super::losses::{critic_gradients, generate_training_fakes, generator_gradients, training_noise_batch};
use super::{GanHyper, ModelCheckpoint};
use crate::data::{SampleSet, Scaler};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, Rng, Tensor2};
use crate::scalar::Scalar;

/// Per-iteration training record. Critic figures are averaged over the
/// critic steps of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub gradient_penalty: f64,
    /// σ drawn for each row of the generator step.
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TrainingRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Trains a fresh generator/critic pair on `train_set`.
///
/// Each iteration runs `critic_steps_per_gen_step` critic updates and one
/// generator update, every one on a minibatch drawn with replacement. Fully
/// deterministic in `seed`.
pub fn train<T: Scalar>(
    train_set: &SampleSet<T>,
    scaler: Scaler<T>,
    hyper: &GanHyper,
    seed: u64,
) -> Result<(ModelCheckpoint<T>, TrainingTrace)> {
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let condition_dim = train_set.condition_dim();
    let target_dim = train_set.points_per_day;
    if train_set
        .samples
        .iter()
        .any(|s| s.condition.len() != condition_dim || s.target.len() != target_dim)
    {
        return Err(Error::Dimension("training samples have ragged dimensions".into()));
    }

    let mut rng = Rng::seed_from(seed);
    let mut ck = ModelCheckpoint::init(hyper, condition_dim, target_dim, scaler, &mut rng)?;
    ck.training_meta.seed = seed;
    let lr = T::from_f64_lossy(hyper.learning_rate);
    let (b1, b2) = (T::from_f64_lossy(hyper.beta1), T::from_f64_lossy(hyper.beta2));
    let mut gen_opt = AdamState::new(&ck.generator, lr, b1, b2)?;
    let mut critic_opt = AdamState::new(&ck.critic, lr, b1, b2)?;
    let gp_weight = T::from_f64_lossy(hyper.gp_weight);
    let mut trace = TrainingTrace::default();

    for iteration in 0..hyper.iterations {
        let diverged = |message: String, trace: &TrainingTrace| Error::Divergence {
            iteration,
            message,
            trace: Box::new(trace.clone()),
        };

        let mut critic_loss = 0.0;
        let mut penalty = 0.0;
        for _ in 0..hyper.critic_steps_per_gen_step {
            let (real, cond) = minibatch(train_set, hyper.batch_size, &mut rng)?;
            let (fake, _) = generate_training_fakes(&ck, &cond, &mut rng)?;
            let eps: Vec<T> = (0..hyper.batch_size)
                .map(|_| T::from_f64_lossy(rng.uniform()))
                .collect();
            let (losses, grads) = critic_gradients(&ck.critic, &real, &fake, &cond, &eps, gp_weight)?;
            if !losses.is_finite() || !grads.is_finite() {
                return Err(diverged("non-finite critic loss".into(), &trace));
            }
            adam_step(&mut ck.critic, &grads, &mut critic_opt)?;
            critic_loss += losses.critic_loss.to_f64_lossless();
            penalty += losses.gradient_penalty.to_f64_lossless();
        }
        let steps = hyper.critic_steps_per_gen_step as f64;

        let (_, cond) = minibatch(train_set, hyper.batch_size, &mut rng)?;
        let (z, sigmas) = training_noise_batch(&ck, hyper.batch_size, &mut rng)?;
        let (gen_loss, grads) = generator_gradients(&ck.generator, &ck.critic, &z, &cond)?;
        if !gen_loss.is_finite() || !grads.is_finite() {
            return Err(diverged("non-finite generator loss".into(), &trace));
        }
        adam_step(&mut ck.generator, &grads, &mut gen_opt)?;

        trace.records.push(TrainingRecord {
            critic_loss: critic_loss / steps,
            generator_loss: gen_loss.to_f64_lossless(),
            gradient_penalty: penalty / steps,
            sigmas,
        });
    }

    ck.training_meta.iterations = hyper.iterations;
    if let Some(last) = trace.records.last() {
        ck.training_meta.final_critic_loss = Some(last.critic_loss);
        ck.training_meta.final_generator_loss = Some(last.generator_loss);
    }
    Ok((ck, trace))
}

fn minibatch<T: Scalar>(set: &SampleSet<T>, batch: usize, rng: &mut Rng) -> Result<(Tensor2<T>, Tensor2<T>)> {
    let picks: Vec<usize> = (0..batch).map(|_| rng.index(set.len())).collect();
    let targets: Vec<&[T]> = picks.iter().map(|&i| set.samples[i].target.as_slice()).collect();
    let conds: Vec<&[T]> = picks.iter().map(|&i| set.samples[i].condition.as_slice()).collect();
    Ok((Tensor2::from_rows(&targets)?, Tensor2::from_rows(&conds)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    pub(crate) fn gaussian_toy(n: usize, seed: u64) -> SampleSet<f64> {
        let mut rng = Rng::seed_from(seed);
        SampleSet {
            samples: (0..n)
                .map(|i| Sample {
                    condition: vec![0.0],
                    target: vec![0.5 + 0.1 * rng.standard_normal()],
                    day: i,
                    true_index: i,
                })
                .collect(),
            points_per_day: 1,
        }
    }

    fn quick() -> GanHyper {
        GanHyper {
            noise_dim: 4,
            hidden_widths: vec![8],
            batch_size: 8,
            iterations: 20,
            ..GanHyper::default()
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let set = gaussian_toy(16, 1);
        let hyper = GanHyper {
            iterations: 0,
            ..quick()
        };
        let scaler = Scaler::new(0.0, 1.0).unwrap();
        let (ck, trace) = train(&set, scaler, &hyper, 5).unwrap();
        assert!(trace.is_empty());
        let mut rng = Rng::seed_from(5);
        let fresh = ModelCheckpoint::init(&hyper, 1, 1, scaler, &mut rng).unwrap();
        assert_eq!(ck.generator, fresh.generator);
        assert_eq!(ck.critic, fresh.critic);
    }

    #[test]
    fn training_is_deterministic() {
        let set = gaussian_toy(16, 1);
        let scaler = Scaler::new(0.0, 1.0).unwrap();
        let (a, ta) = train(&set, scaler, &quick(), 77).unwrap();
        let (b, tb) = train(&set, scaler, &quick(), 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 20);
        assert!(ta.records.iter().all(|r| r.gradient_penalty >= 0.0
            && r.critic_loss.is_finite()
            && r.generator_loss.is_finite()
            && r.sigmas.len() == 8));
        let (c, _) = train(&set, scaler, &quick(), 78).unwrap();
        assert_ne!(a.generator, c.generator);
    }

    #[test]
    fn divergence_keeps_trace_prefix() {
        let set = gaussian_toy(16, 1);
        let hyper = GanHyper {
            learning_rate: 1e100,
            iterations: 50,
            generator_activation: crate::numerics::Activation::Relu,
            critic_activation: crate::numerics::Activation::Relu,
            ..quick()
        };
        match train(&set, Scaler::new(0.0, 1.0).unwrap(), &hyper, 3) {
            Err(Error::Divergence { iteration, trace, .. }) => {
                assert_eq!(trace.len(), iteration);
            }
            other => panic!("expected divergence, got {:?}", other.map(|(_, t)| t.len())),
        }
    }

    #[test]
    fn rejects_empty_training_set() {
        let set = SampleSet::<f64> {
            samples: vec![],
            points_per_day: 1,
        };
        assert!(train(&set, Scaler::new(0.0, 1.0).unwrap(), &quick(), 0).is_err());
    }
}
