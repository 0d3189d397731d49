use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_kernel() -> usize {
    5
}

/// One layer of a feedforward classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out_dim: usize,
    },
    /// Valid-padding, stride-1 square convolution.
    Conv2d {
        out_channels: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    MaxPool2d,
    Flatten,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial { h, w, c } => h * w * c,
            ActShape::Flat(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Architecture of a classifier: input image shape `(H, W, C)`, layer list, class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// `flatten -> (dense(h) -> relu)* -> dense(K)`.
    pub fn mlp(input_shape: [usize; 3], hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &h in hidden {
            layers.push(LayerSpec::Dense { out_dim: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense {
            out_dim: num_classes,
        });
        NetworkSpec {
            input_shape,
            layers,
            num_classes,
        }
    }

    /// A LeNet-style stack: two conv/relu/pool blocks followed by a small dense head.
    pub fn small_cnn(input_shape: [usize; 3], num_classes: usize) -> Self {
        NetworkSpec {
            input_shape,
            layers: vec![
                LayerSpec::Conv2d {
                    out_channels: 6,
                    kernel: 5,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d {
                    out_channels: 16,
                    kernel: 5,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 84 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_dim: num_classes,
                },
            ],
            num_classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Activation shapes: entry 0 is the input, entry `l + 1` is the output of layer `l`.
    pub fn activation_shapes(&self) -> Result<Vec<ActShape>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::input(format!(
                "input shape {:?} must be positive",
                self.input_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::input("num_classes must be at least 2"));
        }
        let mut shapes = vec![ActShape::Spatial { h, w, c }];
        for (idx, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (layer, cur) {
                (LayerSpec::Dense { out_dim }, ActShape::Flat(_)) if *out_dim > 0 => {
                    ActShape::Flat(*out_dim)
                }
                (LayerSpec::Dense { .. }, ActShape::Spatial { .. }) => {
                    return Err(Error::input(format!(
                        "layer {idx}: dense needs a flattened input"
                    )))
                }
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                    },
                    ActShape::Spatial { h, w, .. },
                ) if *out_channels > 0 && *kernel > 0 && *kernel <= h && *kernel <= w => {
                    ActShape::Spatial {
                        h: h - kernel + 1,
                        w: w - kernel + 1,
                        c: *out_channels,
                    }
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::MaxPool2d, ActShape::Spatial { h, w, c }) if h >= 2 && w >= 2 => {
                    ActShape::Spatial {
                        h: h / 2,
                        w: w / 2,
                        c,
                    }
                }
                (LayerSpec::Flatten, s) => ActShape::Flat(s.len()),
                (layer, shape) => {
                    return Err(Error::input(format!(
                        "layer {idx} ({layer:?}) cannot follow activation shape {shape:?}"
                    )))
                }
            };
            shapes.push(next);
        }
        match shapes.last() {
            Some(ActShape::Flat(k)) if *k == self.num_classes => Ok(shapes),
            last => Err(Error::input(format!(
                "network ends in {last:?}, expected {} flat logits",
                self.num_classes
            ))),
        }
    }

    /// Shapes of the trainable tensors in order: `weight, bias` per dense/conv layer.
    ///
    /// Dense weights are `[out, in]`; conv weights are `[out_c, k, k, in_c]`.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let acts = self.activation_shapes()?;
        let mut out = Vec::new();
        for (layer, input) in self.layers.iter().zip(&acts) {
            match (layer, *input) {
                (LayerSpec::Dense { out_dim }, ActShape::Flat(d)) => {
                    out.push(vec![*out_dim, d]);
                    out.push(vec![*out_dim]);
                }
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                    },
                    ActShape::Spatial { c, .. },
                ) => {
                    out.push(vec![*out_channels, *kernel, *kernel, c]);
                    out.push(vec![*out_channels]);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum())
    }
}

/// Architecture family as written in config files; the input shape and class
/// count are filled in from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Mlp { hidden: Vec<usize> },
    SmallCnn,
    Layers { layers: Vec<LayerSpec> },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp { hidden: vec![32] }
    }
}

impl Architecture {
    pub fn resolve(&self, input_shape: [usize; 3], num_classes: usize) -> Result<NetworkSpec> {
        let spec = match self {
            Architecture::Mlp { hidden } => NetworkSpec::mlp(input_shape, hidden, num_classes),
            Architecture::SmallCnn => NetworkSpec::small_cnn(input_shape, num_classes),
            Architecture::Layers { layers } => NetworkSpec {
                input_shape,
                layers: layers.clone(),
                num_classes,
            },
        };
        spec.activation_shapes()?;
        Ok(spec)
    }
}
