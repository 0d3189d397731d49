use super::model::Gradients;
use super::train::TrainConfig;
use crate::tensor::Tensor;

/// SGD with classical momentum: `v <- m*v + g; p <- p - lr*v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &Gradients, cfg: &TrainConfig) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p.values_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = cfg.momentum * *vi + gi;
                *w -= cfg.learning_rate * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params.clone();
        Sgd::new().step(&mut params, &vec![vec![0.0; 3]], &cfg(0.1, 0.9));
        assert_eq!(params, before);
    }

    #[test]
    fn no_momentum_is_vanilla_sgd() {
        let mut params = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        Sgd::new().step(&mut params, &vec![vec![0.5, -1.0]], &cfg(0.1, 0.0));
        assert_eq!(params[0].values(), &[1.0 - 0.1 * 0.5, 2.0 + 0.1 * 1.0]);
    }

    #[test]
    fn two_momentum_steps_unrolled() {
        // v1 = g, v2 = 0.9 g + g => total update -lr * g * (1 + 1.9)
        let (lr, g) = (0.01, 2.0);
        let mut params = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
        let mut opt = Sgd::new();
        opt.step(&mut params, &vec![vec![g]], &cfg(lr, 0.9));
        opt.step(&mut params, &vec![vec![g]], &cfg(lr, 0.9));
        assert!((params[0].values()[0] - (-lr * g * 2.9)).abs() < 1e-15);
    }
}
