//! Small deterministic feedforward network engine.
//!
//! Forward inference, softmax, soft-label cross-entropy, backpropagation,
//! momentum SGD, and a finite-difference gradient checker. Everything runs
//! sequentially on `f64`, so a training run is a pure function of its inputs.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod spec;
pub mod train;

pub use gradcheck::{grad_check, random_spec, GradCheckReport};
pub use loss::{argmax, entropy, soft_cross_entropy, softmax, softmax_row};
pub use model::{Gradients, Model, WeightInit};
pub use optim::Sgd;
pub use spec::{Architecture, LayerSpec, NetworkSpec};
pub use train::{evaluate, predict_class, train, train_from, TrainConfig, TrainOutcome};
