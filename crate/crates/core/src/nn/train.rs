use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, check_stochastic};
use super::model::{Model, WeightInit};
use super::optim::Sgd;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

/// Optimiser settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_init: WeightInit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
            weight_init: WeightInit::FanInUniform,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a freshly initialised network (seeded from `cfg.seed`) on soft targets.
///
/// Pure in `(spec, inputs, targets, cfg)`: identical calls give bit-identical models.
pub fn train<X, Y>(
    spec: &NetworkSpec,
    inputs: &[X],
    targets: &[Y],
    cfg: &TrainConfig,
) -> Result<TrainOutcome>
where
    X: AsRef<[f64]>,
    Y: AsRef<[f64]>,
{
    cfg.validate()?;
    let model = Model::init(spec, cfg.seed, cfg.weight_init)?;
    train_from(model, inputs, targets, cfg)
}

/// Continues training `model` in place of a fresh initialisation.
pub fn train_from<X, Y>(
    mut model: Model,
    inputs: &[X],
    targets: &[Y],
    cfg: &TrainConfig,
) -> Result<TrainOutcome>
where
    X: AsRef<[f64]>,
    Y: AsRef<[f64]>,
{
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::input("cannot train on an empty labeled set"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::input(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let input_len = model.spec().input_len();
    let k = model.num_classes();
    for (i, (x, t)) in inputs.iter().zip(targets).enumerate() {
        if x.as_ref().len() != input_len {
            return Err(Error::input(format!("input {i} has the wrong size")));
        }
        if t.as_ref().len() != k {
            return Err(Error::input(format!(
                "target {i} has {} classes, expected {k}",
                t.as_ref().len()
            )));
        }
        check_stochastic(t.as_ref(), &format!("target {i}"))?;
    }

    // separate stream from the initialisation RNG
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_04de_u64);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut opt = Sgd::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in chunk {
                epoch_loss +=
                    model.accumulate_sample(inputs[i].as_ref(), targets[i].as_ref(), &mut grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in grads.iter_mut().flatten() {
                *g *= scale;
            }
            opt.step(model.params_mut(), &grads, cfg);
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Predicted class (argmax, lowest index on ties).
pub fn predict_class(model: &Model, x: &[f64]) -> Result<usize> {
    Ok(argmax(&model.logits(x)?))
}

/// Fraction of inputs whose predicted class equals the label.
pub fn evaluate<X: AsRef<[f64]>>(model: &Model, inputs: &[X], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::input("inputs and labels differ in length"));
    }
    let mut correct = 0usize;
    for (x, &y) in inputs.iter().zip(labels) {
        if predict_class(model, x.as_ref())? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (NetworkSpec, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let spec = NetworkSpec::mlp([1, 2, 1], &[4], 2);
        let xs = vec![
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.2, 0.9],
            vec![0.8, 0.1],
        ];
        let ts = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
        ];
        (spec, xs, ts)
    }

    #[test]
    fn zero_lr_keeps_initial_params() {
        let (spec, xs, ts) = toy();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(&spec, &xs, &ts, &cfg).unwrap();
        let init = Model::init(&spec, 9, WeightInit::FanInUniform).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn same_seed_bit_identical() {
        let (spec, xs, ts) = toy();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train(&spec, &xs, &ts, &cfg).unwrap();
        let b = train(&spec, &xs, &ts, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn empty_set_is_input_error() {
        let (spec, _, _) = toy();
        let xs: Vec<Vec<f64>> = vec![];
        let ts: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            train(&spec, &xs, &ts, &TrainConfig::default()),
            Err(Error::Input(_))
        ));
        let m = Model::zeros(&spec).unwrap();
        assert!(matches!(evaluate(&m, &xs, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn uniform_model_predicts_class_zero() {
        let spec = NetworkSpec::mlp([1, 2, 1], &[], 10);
        let m = Model::zeros(&spec).unwrap();
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0, 0.5]).collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        assert!((evaluate(&m, &xs, &labels).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_on_toy() {
        let (spec, xs, ts) = toy();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let out = train(&spec, &xs, &ts, &cfg).unwrap();
        assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
    }

    #[test]
    fn rejects_bad_config() {
        let (spec, xs, ts) = toy();
        for cfg in [
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&spec, &xs, &ts, &cfg).is_err());
        }
    }
}
