use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{check_stochastic, cross_entropy_row, softmax_row};
use super::spec::{ActShape, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    #[default]
    FanInUniform,
}

/// Per-layer execution plan compiled from a [`NetworkSpec`].
#[derive(Debug, Clone, Copy)]
enum Step {
    Dense {
        param: usize,
        inp: usize,
        out: usize,
    },
    Conv {
        param: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        k: usize,
        out_h: usize,
        out_w: usize,
        out_c: usize,
    },
    Relu,
    Pool {
        in_w: usize,
        c: usize,
        out_h: usize,
        out_w: usize,
    },
    Flatten,
}

fn compile(spec: &NetworkSpec) -> Result<Vec<Step>> {
    let acts = spec.activation_shapes()?;
    let mut param = 0;
    let mut steps = Vec::with_capacity(spec.layers.len());
    for (l, layer) in spec.layers.iter().enumerate() {
        let step = match (layer, acts[l], acts[l + 1]) {
            (LayerSpec::Dense { .. }, ActShape::Flat(inp), ActShape::Flat(out)) => {
                param += 2;
                Step::Dense {
                    param: param - 2,
                    inp,
                    out,
                }
            }
            (
                LayerSpec::Conv2d { kernel, .. },
                ActShape::Spatial { h, w, c },
                ActShape::Spatial {
                    h: oh,
                    w: ow,
                    c: oc,
                },
            ) => {
                param += 2;
                Step::Conv {
                    param: param - 2,
                    in_h: h,
                    in_w: w,
                    in_c: c,
                    k: *kernel,
                    out_h: oh,
                    out_w: ow,
                    out_c: oc,
                }
            }
            (LayerSpec::Relu, _, _) => Step::Relu,
            (
                LayerSpec::MaxPool2d,
                ActShape::Spatial { w, c, .. },
                ActShape::Spatial { h: oh, w: ow, .. },
            ) => Step::Pool {
                in_w: w,
                c,
                out_h: oh,
                out_w: ow,
            },
            (LayerSpec::Flatten, _, _) => Step::Flatten,
            _ => return Err(Error::logic(format!("layer {l} does not match its shapes"))),
        };
        steps.push(step);
    }
    Ok(steps)
}

/// A feedforward classifier: architecture plus parameters.
///
/// Used for students and local teachers alike. `forward` produces logits;
/// [`Model::probabilities`] applies softmax to give `P(y | x)`.
#[derive(Debug, Clone)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    seed: u64,
    steps: Vec<Step>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params && self.seed == other.seed
    }
}

/// Gradients laid out like [`Model::params`].
pub type Gradients = Vec<Vec<f64>>;

impl Model {
    /// Fresh random parameters for `spec`, deterministic in `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64, scheme: WeightInit) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let values = if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let limit = match scheme {
                        WeightInit::FanInUniform => (6.0 / fan_in as f64).sqrt(),
                    };
                    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                };
                Tensor::new(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(spec.clone(), params, seed)
    }

    /// All-zero parameters; outputs uniform probabilities for any input.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let params = spec
            .param_shapes()?
            .into_iter()
            .map(Tensor::zeros)
            .collect();
        Self::from_parts(spec.clone(), params, 0)
    }

    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::input(format!(
                "spec has {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (want, got)) in shapes.iter().zip(&params).enumerate() {
            if want.as_slice() != got.shape() {
                return Err(Error::input(format!(
                    "parameter {i}: expected shape {want:?}, got {:?}",
                    got.shape()
                )));
            }
        }
        let steps = compile(&spec)?;
        Ok(Model {
            spec,
            params,
            seed,
            steps,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn zero_grads(&self) -> Gradients {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(Error::input(format!(
                "input has {} values, model expects {:?}",
                x.len(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let want = &self.spec.input_shape;
        if batch.shape().len() != 4 || batch.shape()[1..] != want[..] {
            return Err(Error::input(format!(
                "batch shape {:?} does not match [B, {}, {}, {}]",
                batch.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
        Ok(())
    }

    /// Logits for a batch `[B, H, W, C]` → `[B, K]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let k = self.num_classes();
        let mut values = Vec::with_capacity(batch.rows() * k);
        for b in 0..batch.rows() {
            values.extend(self.logits_unchecked(batch.row(b)));
        }
        Tensor::new(vec![batch.rows(), k], values)
    }

    /// Logits for a single flattened `H*W*C` sample.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_sample(x)?;
        Ok(self.logits_unchecked(x))
    }

    /// Class probabilities for a single sample.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_row(&self.logits(x)?))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for step in &self.steps {
            cur = self.apply(step, &cur);
        }
        cur
    }

    fn apply(&self, step: &Step, x: &[f64]) -> Vec<f64> {
        match *step {
            Step::Dense { param, inp, out } => {
                let w = self.params[param].values();
                let b = self.params[param + 1].values();
                (0..out)
                    .map(|o| {
                        let row = &w[o * inp..(o + 1) * inp];
                        b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
                    })
                    .collect()
            }
            Step::Conv {
                param,
                in_w,
                in_c,
                k,
                out_h,
                out_w,
                out_c,
                ..
            } => {
                let w = self.params[param].values();
                let b = self.params[param + 1].values();
                let mut y = vec![0.0; out_h * out_w * out_c];
                let span = k * in_c;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let dst = (oy * out_w + ox) * out_c;
                        for oc in 0..out_c {
                            let mut acc = b[oc];
                            for ky in 0..k {
                                let xi = ((oy + ky) * in_w + ox) * in_c;
                                let wi = (oc * k + ky) * span;
                                acc += w[wi..wi + span]
                                    .iter()
                                    .zip(&x[xi..xi + span])
                                    .map(|(a, v)| a * v)
                                    .sum::<f64>();
                            }
                            y[dst + oc] = acc;
                        }
                    }
                }
                y
            }
            Step::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Step::Pool {
                in_w,
                c,
                out_h,
                out_w,
            } => {
                let mut y = vec![0.0; out_h * out_w * c];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        for ch in 0..c {
                            let idx = pool_argmax(x, in_w, c, oy, ox, ch);
                            y[(oy * out_w + ox) * c + ch] = x[idx];
                        }
                    }
                }
                y
            }
            Step::Flatten => x.to_vec(),
        }
    }

    /// Adds the gradient of `CE(softmax(f(x)), target)` for one sample into `grads`
    /// (unscaled) and returns the sample loss.
    pub(crate) fn accumulate_sample(
        &self,
        x: &[f64],
        target: &[f64],
        grads: &mut Gradients,
    ) -> f64 {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.steps.len() + 1);
        acts.push(x.to_vec());
        for step in &self.steps {
            let next = self.apply(step, acts.last().unwrap());
            acts.push(next);
        }
        let probs = softmax_row(acts.last().unwrap());
        let loss = cross_entropy_row(&probs, target);
        // d(loss)/d(logits) = p - t
        let mut g: Vec<f64> = probs.iter().zip(target).map(|(p, t)| p - t).collect();
        for (l, step) in self.steps.iter().enumerate().rev() {
            g = self.step_backward(step, &acts[l], &g, grads);
        }
        loss
    }

    fn step_backward(&self, step: &Step, x: &[f64], g: &[f64], grads: &mut Gradients) -> Vec<f64> {
        match *step {
            Step::Dense { param, inp, out } => {
                let w = self.params[param].values();
                let mut dx = vec![0.0; inp];
                for o in 0..out {
                    let go = g[o];
                    let dw = &mut grads[param][o * inp..(o + 1) * inp];
                    for (d, v) in dw.iter_mut().zip(x) {
                        *d += go * v;
                    }
                    for (d, a) in dx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                        *d += go * a;
                    }
                }
                for (d, go) in grads[param + 1].iter_mut().zip(g) {
                    *d += go;
                }
                dx
            }
            Step::Conv {
                param,
                in_h,
                in_w,
                in_c,
                k,
                out_h,
                out_w,
                out_c,
            } => {
                let w = self.params[param].values();
                let mut dx = vec![0.0; in_h * in_w * in_c];
                let span = k * in_c;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let src = (oy * out_w + ox) * out_c;
                        for oc in 0..out_c {
                            let go = g[src + oc];
                            grads[param + 1][oc] += go;
                            for ky in 0..k {
                                let xi = ((oy + ky) * in_w + ox) * in_c;
                                let wi = (oc * k + ky) * span;
                                let dw = &mut grads[param][wi..wi + span];
                                for (d, v) in dw.iter_mut().zip(&x[xi..xi + span]) {
                                    *d += go * v;
                                }
                                for (d, a) in dx[xi..xi + span].iter_mut().zip(&w[wi..wi + span]) {
                                    *d += go * a;
                                }
                            }
                        }
                    }
                }
                dx
            }
            Step::Relu => x
                .iter()
                .zip(g)
                .map(|(&v, &go)| if v > 0.0 { go } else { 0.0 })
                .collect(),
            Step::Pool {
                in_w,
                c,
                out_h,
                out_w,
            } => {
                let mut dx = vec![0.0; x.len()];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        for ch in 0..c {
                            let idx = pool_argmax(x, in_w, c, oy, ox, ch);
                            dx[idx] += g[(oy * out_w + ox) * c + ch];
                        }
                    }
                }
                dx
            }
            Step::Flatten => g.to_vec(),
        }
    }

    /// Mean-reduced loss and parameter gradients for a batch with soft targets `[B, K]`.
    pub fn backward(&self, batch: &Tensor, targets: &Tensor) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let k = self.num_classes();
        if targets.shape() != [batch.rows(), k] {
            return Err(Error::input(format!(
                "targets {:?} do not match [{}, {k}]",
                targets.shape(),
                batch.rows()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::input("empty batch"));
        }
        for b in 0..targets.rows() {
            check_stochastic(targets.row(b), &format!("target row {b}"))?;
        }
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for b in 0..batch.rows() {
            loss += self.accumulate_sample(batch.row(b), targets.row(b), &mut grads);
        }
        let scale = 1.0 / batch.rows() as f64;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
        Ok((loss * scale, grads))
    }

    /// Mean loss over a batch without computing gradients.
    pub fn loss(&self, batch: &Tensor, targets: &Tensor) -> Result<f64> {
        let logits = self.forward(batch)?;
        let mut total = 0.0;
        for b in 0..batch.rows() {
            total += cross_entropy_row(&softmax_row(logits.row(b)), targets.row(b));
        }
        Ok(total / batch.rows() as f64)
    }
}

/// Flat index of the max in one 2x2 window; first maximum in row-major order wins.
fn pool_argmax(x: &[f64], in_w: usize, c: usize, oy: usize, ox: usize, ch: usize) -> usize {
    let base = |dy: usize, dx: usize| ((2 * oy + dy) * in_w + 2 * ox + dx) * c + ch;
    let mut best = base(0, 0);
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let i = base(dy, dx);
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}
