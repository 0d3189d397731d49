use activemix::data::synth_blobs;
use activemix::nn::{evaluate, grad_check, random_spec, train, LayerSpec, TrainConfig};
use activemix::teacher::SoftLabel;
use activemix::NetworkSpec;
use proptest::prelude::*;

/// Two-class logistic regression by full-batch gradient descent, written out
/// by hand. Returns training accuracy.
fn logistic_regression_accuracy(xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let d = xs[0].len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y as f64;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += err * v;
            }
            gb += err;
        }
        let n = xs.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * g / n;
        }
        b -= 0.5 * gb / n;
    }
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) as usize == y
        })
        .count();
    hits as f64 / xs.len() as f64
}

#[test]
fn mlp_learns_separable_blobs() {
    let train_set = synth_blobs(2, 100, 10, 11);
    let test_set = synth_blobs(2, 100, 10, 12);
    let xs: Vec<Vec<f64>> = train_set
        .images()
        .iter()
        .map(|im| im.pixels().to_vec())
        .collect();
    let ys = train_set.labels().unwrap();

    // The task itself must be linearly separable, or the threshold below means nothing.
    assert!(logistic_regression_accuracy(&xs, ys) >= 0.99);

    let targets: Vec<SoftLabel> = ys
        .iter()
        .map(|&y| SoftLabel::one_hot(2, y).unwrap())
        .collect();
    let spec = NetworkSpec::mlp(train_set.shape(), &[16], 2);
    let out = train(&spec, &xs, &targets, &TrainConfig::default()).unwrap();
    assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
    let acc = evaluate(&out.model, test_set.images(), test_set.labels().unwrap()).unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
}

#[test]
fn training_is_deterministic() {
    let ds = synth_blobs(3, 20, 8, 4);
    let targets: Vec<SoftLabel> = ds
        .labels()
        .unwrap()
        .iter()
        .map(|&y| SoftLabel::one_hot(3, y).unwrap())
        .collect();
    let spec = NetworkSpec::mlp(ds.shape(), &[8], 3);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let a = train(&spec, ds.images(), &targets, &cfg).unwrap().model;
    let b = train(&spec, ds.images(), &targets, &cfg).unwrap().model;
    assert_eq!(a.params(), b.params());
}

#[test]
fn small_cnn_gradients() {
    let spec = NetworkSpec {
        input_shape: [12, 12, 1],
        layers: vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::Conv2d {
                out_channels: 3,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: 3 },
        ],
        num_classes: 3,
    };
    let r = grad_check(&spec, 5).unwrap();
    assert!(r.passed(), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_architectures_pass_grad_check(arch in any::<u64>(), seed in any::<u64>()) {
        let spec = random_spec(arch);
        let r = grad_check(&spec, seed).unwrap();
        prop_assert!(r.passed(), "{:?} on {:?}", r, spec);
    }
}
