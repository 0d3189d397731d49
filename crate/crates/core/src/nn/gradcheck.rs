//! Finite-difference verification of [`Model::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::softmax_row;
use super::model::{Gradients, Model, WeightInit};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// A check passes when the max relative error is below this.
pub const GRAD_TOL: f64 = 1e-4;

/// Denominator floor so that near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub num_params: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOL
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A random model (with non-zero biases), a batch of 3 inputs in `[0, 1]`,
/// and random soft targets, all derived from `seed`.
pub fn random_problem(spec: &NetworkSpec, seed: u64) -> Result<(Model, Tensor, Tensor)> {
    let mut model = Model::init(spec, seed, WeightInit::FanInUniform)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            for b in p.values_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let batch_size = 3;
    let n = spec.input_len();
    let xs: Vec<f64> = (0..batch_size * n).map(|_| rng.gen::<f64>()).collect();
    let mut shape = vec![batch_size];
    shape.extend_from_slice(&spec.input_shape);
    let batch = Tensor::new(shape, xs)?;
    let k = spec.num_classes;
    let mut ts = Vec::with_capacity(batch_size * k);
    for _ in 0..batch_size {
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        ts.extend(softmax_row(&logits));
    }
    let targets = Tensor::new(vec![batch_size, k], ts)?;
    Ok((model, batch, targets))
}

/// Compares `grads` against central differences of the batch loss, returning the
/// largest relative error over every parameter.
pub fn compare_with_finite_differences(
    model: &Model,
    batch: &Tensor,
    targets: &Tensor,
    grads: &Gradients,
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in 0..model.params().len() {
        for i in 0..model.params()[p].len() {
            let orig = model.params()[p].values()[i];
            probe.params_mut()[p].values_mut()[i] = orig + FD_STEP;
            let up = probe.loss(batch, targets)?;
            probe.params_mut()[p].values_mut()[i] = orig - FD_STEP;
            let down = probe.loss(batch, targets)?;
            probe.params_mut()[p].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads[p][i], numeric));
            count += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        num_params: count,
    })
}

/// Builds a random problem for `spec` and checks the analytic gradient.
pub fn grad_check(spec: &NetworkSpec, seed: u64) -> Result<GradCheckReport> {
    let (model, batch, targets) = random_problem(spec, seed)?;
    let (_, grads) = model.backward(&batch, &targets)?;
    compare_with_finite_differences(&model, &batch, &targets, &grads)
}

/// A small random architecture: an optional conv block (with or without
/// pooling) followed by one or two dense layers. Every result is valid.
pub fn random_spec(seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.gen_range(5..9);
    let channels = rng.gen_range(1..3);
    let num_classes = rng.gen_range(2..5);
    let mut layers = Vec::new();
    if rng.gen_bool(0.5) {
        let kernel = rng.gen_range(2..4);
        layers.push(LayerSpec::Conv2d {
            out_channels: rng.gen_range(1..4),
            kernel,
        });
        layers.push(LayerSpec::Relu);
        if side - kernel + 1 >= 2 && rng.gen_bool(0.5) {
            layers.push(LayerSpec::MaxPool2d);
        }
    }
    layers.push(LayerSpec::Flatten);
    for _ in 0..rng.gen_range(0..3) {
        layers.push(LayerSpec::Dense {
            out_dim: rng.gen_range(2..7),
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense {
        out_dim: num_classes,
    });
    NetworkSpec {
        input_shape: [side, side, channels],
        layers,
        num_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_spec() -> NetworkSpec {
        NetworkSpec {
            input_shape: [8, 8, 2],
            layers: vec![
                LayerSpec::Conv2d {
                    out_channels: 3,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 4 },
            ],
            num_classes: 4,
        }
    }

    #[test]
    fn dense_net_passes() {
        let r = grad_check(&NetworkSpec::mlp([3, 3, 1], &[6, 5], 3), 1).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn conv_pool_net_passes() {
        let r = grad_check(&conv_spec(), 2).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let spec = NetworkSpec::mlp([2, 2, 1], &[4], 2);
        let (model, batch, targets) = random_problem(&spec, 3).unwrap();
        let (_, mut grads) = model.backward(&batch, &targets).unwrap();
        grads[0][1] += 1.0;
        let r = compare_with_finite_differences(&model, &batch, &targets, &grads).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert!(!r.passed());
    }
}
