//! Matrix-level reverse-mode differentiation over the parameters of one
//! [`Network`].
//!
//! A [`Tape`] borrows the network whose parameters it differentiates. Every
//! operation appends a node holding its forward value; nodes are appended in
//! evaluation order, so walking them backwards from the loss is a valid
//! reverse topological order. Values fed in through [`Tape::constant`] (inputs,
//! stored logits, teacher outputs) never receive gradients.

use crate::error::{Error, Result};
use crate::loss;
use crate::matrix::Matrix;
use crate::network::{affine_prefix, apply_activation, Activation, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    /// Affine map through the first `value.cols()` units of a layer.
    Affine {
        input: Var,
        layer: usize,
    },
    Relu {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
    SquaredDistance {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradient of one layer's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of a network, shaped like it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// Every gradient entry, layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

pub struct Tape<'n> {
    net: &'n Network,
    nodes: Vec<Node>,
}

impl<'n> Tape<'n> {
    pub fn new(net: &'n Network) -> Self {
        Tape {
            net,
            nodes: Vec::new(),
        }
    }

    pub fn network(&self) -> &'n Network {
        self.net
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// `input · W[..rows, ..cols]ᵀ + b[..rows]` for layer `layer`, where `cols` is the
    /// input width.
    pub fn affine(&mut self, input: Var, layer: usize, rows: usize) -> Result<Var> {
        let l = self
            .net
            .layers()
            .get(layer)
            .ok_or_else(|| Error::Index(format!("layer {layer}")))?;
        let x = self.value(input);
        if x.cols() > l.in_dim() || rows > l.out_dim() {
            return Err(Error::Shape(format!(
                "slice {rows}x{} exceeds layer {layer} of shape {}x{}",
                x.cols(),
                l.out_dim(),
                l.in_dim()
            )));
        }
        let value = affine_prefix(x, l, rows);
        Ok(self.push(value, Op::Affine { input, layer }, true))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let mut value = self.value(input).clone();
        apply_activation(&mut value, Activation::Relu);
        let needs = self.needs(input);
        self.push(value, Op::Relu { input }, needs)
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = loss::cross_entropy_with_probs(self.value(logits), labels)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss])?,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Batch mean of `‖a − b‖²` per row.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = loss::mse_logits(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss])?,
            Op::SquaredDistance { a, b },
            needs,
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let needs = self.needs(input);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let value = Matrix::from_vec(
            va.rows(),
            va.cols(),
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Runs the network on `batch`, layer `l` restricted to its first `widths[l]` units.
    pub fn forward_widths(&mut self, batch: Var, widths: &[usize]) -> Result<Var> {
        let net = self.net;
        if self.value(batch).cols() != net.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                self.value(batch).cols(),
                net.input_dim()
            )));
        }
        if widths.len() != net.layers().len() {
            return Err(Error::Shape(format!(
                "{} widths for {} layers",
                widths.len(),
                net.layers().len()
            )));
        }
        let mut h = batch;
        for (l, (layer, &w)) in net.layers().iter().zip(widths).enumerate() {
            h = self.affine(h, l, w)?;
            if layer.activation == Activation::Relu {
                h = self.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward(&mut self, batch: Var) -> Result<Var> {
        self.forward_widths(batch, &self.net.full_widths())
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        backward(self, loss)
    }
}

/// Reverse pass from a scalar `loss`, visiting each node at most once.
pub fn backward(tape: &Tape<'_>, loss: Var) -> Result<Gradients> {
    let net = tape.net;
    let mut grads = Gradients::zeros_like(net);
    if tape.value(loss).shape() != (1, 1) {
        return Err(Error::Shape("backward needs a scalar loss".into()));
    }
    let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
    adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

    for i in (0..=loss.0).rev() {
        let node = &tape.nodes[i];
        if !node.needs_grad {
            continue;
        }
        let Some(g) = adj[i].take() else { continue };
        match &node.op {
            Op::Constant => {}
            Op::Affine { input, layer } => {
                let x = tape.value(*input);
                let w = &net.layers()[*layer].weights;
                let (rows, cols) = (g.cols(), x.cols());
                let lg = &mut grads.layers[*layer];
                for n in 0..g.rows() {
                    let gr = g.row(n);
                    let xr = x.row(n);
                    for (o, &go) in gr.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        lg.bias[o] += go;
                        for (dw, &xv) in lg.weights.row_mut(o)[..cols].iter_mut().zip(xr) {
                            *dw += go * xv;
                        }
                    }
                }
                if tape.needs(*input) {
                    let mut dx = Matrix::zeros(x.rows(), cols);
                    for n in 0..g.rows() {
                        let gr = g.row(n);
                        let dr = dx.row_mut(n);
                        for (o, &go) in gr.iter().enumerate().take(rows) {
                            if go == 0.0 {
                                continue;
                            }
                            for (d, &wv) in dr.iter_mut().zip(&w.row(o)[..cols]) {
                                *d += go * wv;
                            }
                        }
                    }
                    accumulate(&mut adj, *input, dx);
                }
            }
            Op::Relu { input } => {
                let y = &node.value;
                let mut dx = g;
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                accumulate(&mut adj, *input, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if !labels.is_empty() {
                    let scale = g[(0, 0)] / labels.len() as f64;
                    let mut dz = probs.clone();
                    for (n, &y) in labels.iter().enumerate() {
                        dz[(n, y)] -= 1.0;
                    }
                    for v in dz.data_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut adj, *logits, dz);
                }
            }
            Op::SquaredDistance { a, b } => {
                let (va, vb) = (tape.value(*a), tape.value(*b));
                if va.rows() > 0 {
                    let scale = 2.0 * g[(0, 0)] / va.rows() as f64;
                    let diff = Matrix::from_vec(
                        va.rows(),
                        va.cols(),
                        va.data()
                            .iter()
                            .zip(vb.data())
                            .map(|(x, y)| scale * (x - y))
                            .collect(),
                    )?;
                    if tape.needs(*b) {
                        accumulate(&mut adj, *b, diff.map(|v| -v));
                    }
                    if tape.needs(*a) {
                        accumulate(&mut adj, *a, diff);
                    }
                }
            }
            Op::Scale { input, factor } => {
                accumulate(&mut adj, *input, g.map(|v| v * factor));
            }
            Op::Add { a, b } => {
                if tape.needs(*b) {
                    accumulate(&mut adj, *b, g.clone());
                }
                if tape.needs(*a) {
                    accumulate(&mut adj, *a, g);
                }
            }
        }
    }
    Ok(grads)
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
