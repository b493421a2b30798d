//! Weight-shared subnets of the working network.
//!
//! A subnet is described by an [`ArchConfig`]: for each hidden layer, how many
//! of the `G` unit groups it keeps. Subnets always take a *prefix* of each
//! layer's units, so smaller configurations are nested inside larger ones and
//! read the working network's parameters in place.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::Network;

/// Per-hidden-layer group counts. Serialized as `"3,3,2"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArchConfig(Vec<usize>);

impl ArchConfig {
    pub fn new(groups: Vec<usize>) -> Self {
        ArchConfig(groups)
    }

    pub fn uniform(layers: usize, groups: usize) -> Self {
        ArchConfig(vec![groups; layers])
    }

    /// The configuration that keeps every unit of `net`.
    pub fn full(net: &Network) -> Self {
        ArchConfig::uniform(net.num_hidden(), net.groups())
    }

    pub fn groups(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise `self ≤ other`.
    pub fn is_within(&self, other: &ArchConfig) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.0.len() != net.num_hidden() {
            return Err(Error::Shape(format!(
                "arch {self} has {} layers, network has {} hidden layers",
                self.0.len(),
                net.num_hidden()
            )));
        }
        if let Some(g) = self.0.iter().find(|&&g| g == 0 || g > net.groups()) {
            return Err(Error::Shape(format!(
                "arch {self} uses {g} groups, allowed range is 1..={}",
                net.groups()
            )));
        }
        Ok(())
    }

    /// Output widths of every layer under this arch; the classifier stays full.
    pub fn widths(&self, net: &Network) -> Result<Vec<usize>> {
        self.validate(net)?;
        let mut widths: Vec<usize> = net
            .hidden_widths()
            .iter()
            .zip(&self.0)
            .map(|(&w, &g)| active_units(w, g, net.groups()))
            .collect();
        widths.push(net.num_classes());
        Ok(widths)
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(ArchConfig(Vec::new()));
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad group count {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ArchConfig)
    }
}

impl TryFrom<String> for ArchConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ArchConfig> for String {
    fn from(a: ArchConfig) -> String {
        a.to_string()
    }
}

/// ⌈groups·width/G⌉
pub fn active_units(width: usize, groups: usize, total_groups: usize) -> usize {
    (groups * width).div_ceil(total_groups)
}

/// Logits of the subnet `arch` of `net`.
pub fn slice_forward(net: &Network, arch: &ArchConfig, batch: &Matrix) -> Result<Matrix> {
    net.forward_widths(batch, &arch.widths(net)?)
}

/// [`slice_forward`] recorded on a tape, differentiable in the shared parameters.
pub fn slice_forward_on(tape: &mut Tape<'_>, arch: &ArchConfig, batch: Var) -> Result<Var> {
    let widths = arch.widths(tape.network())?;
    tape.forward_widths(batch, &widths)
}

/// |ψ_arch|: weights and biases read by [`slice_forward`].
pub fn param_count(net: &Network, arch: &ArchConfig) -> Result<usize> {
    let widths = arch.widths(net)?;
    let mut fan_in = net.input_dim();
    let mut total = 0;
    for w in widths {
        total += w * fan_in + w;
        fan_in = w;
    }
    Ok(total)
}

/// |ψ_arch| / |θ|
pub fn param_ratio(net: &Network, arch: &ArchConfig) -> Result<f64> {
    Ok(param_count(net, arch)? as f64 / net.num_params() as f64)
}

/// Which output rows (weight row plus bias entry) of each layer may be updated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    rows: Vec<Vec<bool>>,
}

impl TrainableMask {
    pub fn full(net: &Network) -> Self {
        TrainableMask {
            rows: net
                .layers()
                .iter()
                .map(|l| vec![true; l.out_dim()])
                .collect(),
        }
    }

    pub fn frozen(net: &Network) -> Self {
        TrainableMask {
            rows: net
                .layers()
                .iter()
                .map(|l| vec![false; l.out_dim()])
                .collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Self {
        TrainableMask { rows }
    }

    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.rows[l]
    }

    pub fn trainable_rows(&self, l: usize) -> usize {
        self.rows[l].iter().filter(|&&t| t).count()
    }
}

/// Hidden units with index below ⌈g_t·width/G⌉ are trainable; the classifier always is.
pub fn trainable_mask(net: &Network, g_t: usize) -> Result<TrainableMask> {
    if g_t == 0 || g_t > net.groups() {
        return Err(Error::Parameter(format!(
            "search space of {g_t} groups outside 1..={}",
            net.groups()
        )));
    }
    let hidden = net.num_hidden();
    let rows = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let width = layer.out_dim();
            let active = if l < hidden {
                active_units(width, g_t, net.groups())
            } else {
                width
            };
            (0..width).map(|i| i < active).collect()
        })
        .collect();
    Ok(TrainableMask { rows })
}
