//! Dense feed-forward networks whose hidden layers are partitioned into
//! equally sized unit groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::subnet::TrainableMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Affine map using the leading `rows` output units and the leading
/// `x.cols()` input columns of `layer`. Activation is not applied.
pub(crate) fn affine_prefix(x: &Matrix, layer: &DenseLayer, rows: usize) -> Matrix {
    let cols = x.cols();
    debug_assert!(rows <= layer.out_dim() && cols <= layer.in_dim());
    let mut out = Matrix::zeros(x.rows(), rows);
    for n in 0..x.rows() {
        let xr = x.row(n);
        let or = out.row_mut(n);
        for (i, o) in or.iter_mut().enumerate() {
            let w = &layer.weights.row(i)[..cols];
            let mut acc = 0.0;
            for (a, b) in w.iter().zip(xr) {
                acc += a * b;
            }
            *o = acc + layer.bias[i];
        }
    }
    out
}

/// The working network: hidden ReLU layers followed by an identity classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    num_classes: usize,
    groups: usize,
    seed: u64,
}

impl Network {
    /// Glorot-uniform initialization, biases zero.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        groups: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (i, &width) in hidden
            .iter()
            .chain(std::iter::once(&num_classes))
            .enumerate()
        {
            let limit = (6.0 / (fan_in + width) as f64).sqrt();
            let data = (0..width * fan_in)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let activation = if i < hidden.len() {
                Activation::Relu
            } else {
                Activation::Identity
            };
            layers.push(DenseLayer::new(
                Matrix::from_vec(width, fan_in, data)?,
                vec![0.0; width],
                activation,
            )?);
            fan_in = width;
        }
        Network::from_layers(layers, groups, seed)
    }

    /// Assembles a network from explicit layers; the last layer is the classifier.
    pub fn from_layers(layers: Vec<DenseLayer>, groups: usize, seed: u64) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Parameter("network needs at least one layer".into()));
        };
        if groups == 0 {
            return Err(Error::Parameter("group count must be at least 1".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Shape(format!(
                    "layer expects {} inputs but previous layer emits {}",
                    pair[1].in_dim(),
                    pair[0].out_dim()
                )));
            }
        }
        for (l, layer) in layers[..layers.len() - 1].iter().enumerate() {
            if layer.out_dim() % groups != 0 || layer.out_dim() == 0 {
                return Err(Error::Parameter(format!(
                    "hidden layer {l} width {} is not a positive multiple of {groups} groups",
                    layer.out_dim()
                )));
            }
        }
        let num_classes = last.out_dim();
        let net = Network {
            layers,
            num_classes,
            groups,
            seed,
        };
        if net.num_params() == 0 {
            return Err(Error::Parameter("network has no parameters".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Direct parameter access, for tests and hand-built fixtures.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.num_hidden()]
            .iter()
            .map(DenseLayer::out_dim)
            .collect()
    }

    /// |θ|
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Output widths of every layer, classifier included.
    pub fn full_widths(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::out_dim).collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward_widths(batch, &self.full_widths())
    }

    /// Forward pass where layer `l` only computes its first `widths[l]` units.
    pub(crate) fn forward_widths(&self, batch: &Matrix, widths: &[usize]) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        debug_assert_eq!(widths.len(), self.layers.len());
        let mut h = affine_prefix(batch, &self.layers[0], widths[0]);
        apply_activation(&mut h, self.layers[0].activation);
        for (layer, &w) in self.layers.iter().zip(widths).skip(1) {
            h = affine_prefix(&h, layer, w);
            apply_activation(&mut h, layer.activation);
        }
        Ok(h)
    }

    /// θ ← θ − lr·(mask ⊙ grad). Rejects the whole step if any gradient is non-finite.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, mask: &TrainableMask) -> Result<()> {
        if grads.layers.len() != self.layers.len() || mask.num_layers() != self.layers.len() {
            return Err(Error::Shape(
                "gradient or mask does not match network".into(),
            ));
        }
        for (l, (layer, g)) in self.layers.iter().zip(&grads.layers).enumerate() {
            if g.weights.shape() != layer.weights.shape()
                || g.bias.len() != layer.bias.len()
                || mask.layer(l).len() != layer.out_dim()
            {
                return Err(Error::Shape(format!(
                    "layer {l} gradient/mask shape mismatch"
                )));
            }
            if !g.weights.is_finite() || g.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { layer: l });
            }
        }
        for (l, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            for (i, &trainable) in mask.layer(l).iter().enumerate() {
                if !trainable {
                    continue;
                }
                for (w, d) in layer.weights.row_mut(i).iter_mut().zip(g.weights.row(i)) {
                    *w -= lr * d;
                }
                layer.bias[i] -= lr * g.bias[i];
            }
        }
        Ok(())
    }
}

pub(crate) fn apply_activation(m: &mut Matrix, act: Activation) {
    if act == Activation::Relu {
        for v in m.data_mut() {
            *v = v.max(0.0);
        }
    }
}
