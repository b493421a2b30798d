//! Subnet-constrained experience replay.
//!
//! The buffer follows reservoir sampling, except that once it is full each
//! incoming example is additionally kept only with probability
//! `exp(−α·ρ)`, where `ρ = |ψ_arch| / |θ|` is the relative size of the
//! representative network active for the current batch. The net insertion
//! probability of the `k`-th example is `exp(−αρ)·B/k`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy, mse_logits};
use crate::matrix::Matrix;
use crate::network::Network;

/// Where an offered item ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Appended(usize),
    Replaced(usize),
    Rejected,
}

/// Fixed-capacity reservoir with ratio-damped insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScerReservoir<T> {
    capacity: usize,
    alpha: f64,
    seen: u64,
    entries: Vec<T>,
}

impl<T> ScerReservoir<T> {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        ScerReservoir {
            capacity,
            alpha,
            seen: 0,
            entries: Vec::with_capacity(capacity),
        }
    }

    /// Rebuilds a reservoir from saved state.
    pub fn restore(capacity: usize, alpha: f64, seen: u64, entries: Vec<T>) -> Result<Self> {
        if entries.len() as u64 != seen.min(capacity as u64) {
            return Err(Error::Consistency(format!(
                "{} entries for capacity {capacity} after {seen} offers",
                entries.len()
            )));
        }
        Ok(ScerReservoir {
            capacity,
            alpha,
            seen,
            entries,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Stream items offered so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Offers the next stream item. `ratio` is ρ ∈ [0, 1].
    ///
    /// Once full, a slot `j` is drawn uniformly from `0..k` (the item being the
    /// `k`-th) and `u` uniformly from `[0, 1)`; the item replaces slot `j` iff
    /// `u < exp(−αρ)` and `j < capacity`.
    pub fn offer<R: Rng + ?Sized>(&mut self, item: T, ratio: f64, rng: &mut R) -> Placement {
        debug_assert!((0.0..=1.0).contains(&ratio), "ratio {ratio} outside [0, 1]");
        self.seen += 1;
        if self.seen <= self.capacity as u64 {
            self.entries.push(item);
            return Placement::Appended(self.entries.len() - 1);
        }
        let j = rng.random_range(0..self.seen);
        let u: f64 = rng.random();
        if u < (-self.alpha * ratio).exp() && j < self.capacity as u64 {
            let j = j as usize;
            self.entries[j] = item;
            Placement::Replaced(j)
        } else {
            Placement::Rejected
        }
    }
}

/// Insertion probability of the `k`-th item into a full buffer: exp(−αρ)·B/k.
pub fn insertion_probability(capacity: usize, k: u64, ratio: f64, alpha: f64) -> f64 {
    if k <= capacity as u64 {
        return 1.0;
    }
    (-alpha * ratio).exp() * capacity as f64 / k as f64
}

/// Probability that one of the first `capacity` items survives `k` offers:
/// Π_{n=B+1}^{k} (1 − exp(−α ρ_n)/n). `ratios[i]` is ρ for item `B+1+i`.
pub fn retention_probability(capacity: usize, k: usize, ratios: &[f64], alpha: f64) -> Result<f64> {
    if k < capacity {
        return Err(Error::Parameter(format!(
            "stream length {k} shorter than capacity {capacity}"
        )));
    }
    if ratios.len() != k - capacity {
        return Err(Error::Parameter(format!(
            "{} ratios for {} offers beyond capacity",
            ratios.len(),
            k - capacity
        )));
    }
    Ok(ratios
        .iter()
        .enumerate()
        .map(|(i, &rho)| 1.0 - (-alpha * rho).exp() / (capacity + 1 + i) as f64)
        .product())
}

/// A stored example with the logits the network produced when it was buffered.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub input: Vec<f64>,
    pub label: usize,
    pub logits: Vec<f64>,
}

pub type ReplayBuffer = ScerReservoir<ReplayEntry>;

/// A batch drawn from the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub logits: Matrix,
}

/// Rehearsal frequency `1/m`: replay runs on every `m`-th batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RehearsalFrequency(u32);

impl RehearsalFrequency {
    pub fn every(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Parameter(
                "rehearsal period must be at least 1".into(),
            ));
        }
        Ok(RehearsalFrequency(m))
    }

    pub fn period(self) -> u32 {
        self.0
    }
}

impl Default for RehearsalFrequency {
    fn default() -> Self {
        RehearsalFrequency(1)
    }
}

impl fmt::Display for RehearsalFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 1 {
            f.write_str("1")
        } else {
            write!(f, "1/{}", self.0)
        }
    }
}

impl FromStr for RehearsalFrequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let m = match s.split_once('/') {
            None if s == "1" => 1,
            Some((num, den)) if num.trim() == "1" => den
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::Parameter(format!("bad rehearsal frequency {s:?}")))?,
            _ => {
                return Err(Error::Parameter(format!(
                    "rehearsal frequency must be written 1/m, got {s:?}"
                )))
            }
        };
        RehearsalFrequency::every(m)
    }
}

impl TryFrom<String> for RehearsalFrequency {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RehearsalFrequency> for String {
    fn from(r: RehearsalFrequency) -> String {
        r.to_string()
    }
}

/// Replay weights and gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub rehearsal_frequency: RehearsalFrequency,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            beta1: 0.5,
            beta2: 0.1,
            rehearsal_frequency: RehearsalFrequency::default(),
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// True iff replay runs on batch `step`.
pub fn rehearsal_gate(step: u64, freq: RehearsalFrequency) -> bool {
    step.is_multiple_of(u64::from(freq.period()))
}

const BUFFER_MAGIC: &[u8; 7] = b"E2NBUF1";

impl ScerReservoir<ReplayEntry> {
    /// Uniform draw without replacement, or with replacement when the buffer
    /// holds fewer than `size` entries. `None` when empty.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Option<Minibatch> {
        if self.entries.is_empty() || size == 0 {
            return None;
        }
        let picks: Vec<usize> = if self.entries.len() >= size {
            index::sample(rng, self.entries.len(), size).into_vec()
        } else {
            (0..size)
                .map(|_| rng.random_range(0..self.entries.len()))
                .collect()
        };
        let input_rows: Vec<&[f64]> = picks.iter().map(|&i| &self.entries[i].input[..]).collect();
        let logit_rows: Vec<&[f64]> = picks.iter().map(|&i| &self.entries[i].logits[..]).collect();
        Some(Minibatch {
            inputs: Matrix::from_rows(&input_rows).ok()?,
            labels: picks.iter().map(|&i| self.entries[i].label).collect(),
            logits: Matrix::from_rows(&logit_rows).ok()?,
        })
    }

    /// Serializes in the `E2NBUF1` layout: magic, capacity (u64), seen (u64),
    /// alpha (f64), then per entry input dim (u32), inputs, label (u32),
    /// logits dim (u32), logits. All little-endian.
    pub fn write_to<W: Write>(&self, w: W) -> Result<W> {
        let mut w = Writer::new(w);
        w.bytes(BUFFER_MAGIC)?;
        w.u64(self.capacity as u64)?;
        w.u64(self.seen)?;
        w.f64(self.alpha)?;
        for e in &self.entries {
            w.u32(e.input.len() as u32)?;
            w.f64s(&e.input)?;
            w.u32(e.label as u32)?;
            w.u32(e.logits.len() as u32)?;
            w.f64s(&e.logits)?;
        }
        Ok(w.into_inner())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::read_with(&mut Reader::new(r))
    }

    pub(crate) fn read_with<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let magic: [u8; 7] = r.bytes()?;
        if &magic != BUFFER_MAGIC {
            return Err(Error::Incompatible(format!(
                "replay buffer magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(BUFFER_MAGIC)
            )));
        }
        let capacity = r.usize()?;
        let seen = r.u64()?;
        let alpha = r.f64()?;
        let count = (seen.min(capacity as u64)) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let dim = r.u32()? as usize;
            let input = r.f64s(dim)?;
            let label = r.u32()? as usize;
            let classes = r.u32()? as usize;
            let logits = r.f64s(classes)?;
            entries.push(ReplayEntry {
                input,
                label,
                logits,
            });
        }
        Ok(ScerReservoir {
            capacity,
            alpha,
            seen,
            entries,
        })
    }

    /// Replay objective on a drawn minibatch, recorded on `tape`:
    /// β₁·CE(z_θ(X), Y) + β₂·‖z_θ(X) − Z‖². Zero-weighted terms are left off the
    /// tape; `None` when both weights are zero.
    pub fn replay_loss_on(
        tape: &mut Tape<'_>,
        batch: &Minibatch,
        cfg: &ReplayConfig,
    ) -> Result<Option<Var>> {
        if cfg.beta1 == 0.0 && cfg.beta2 == 0.0 {
            return Ok(None);
        }
        let x = tape.constant(batch.inputs.clone());
        let logits = tape.forward(x)?;
        let mut total = None;
        if cfg.beta1 != 0.0 {
            let ce = tape.cross_entropy(logits, &batch.labels)?;
            total = Some(if cfg.beta1 == 1.0 {
                ce
            } else {
                tape.scale(ce, cfg.beta1)
            });
        }
        if cfg.beta2 != 0.0 {
            let z = tape.constant(batch.logits.clone());
            let d = tape.squared_distance(logits, z)?;
            let d = tape.scale(d, cfg.beta2);
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
        Ok(total)
    }

    /// Value of the replay objective on a fresh minibatch; zero when empty.
    pub fn replay_loss<R: Rng + ?Sized>(
        &self,
        net: &Network,
        size: usize,
        cfg: &ReplayConfig,
        rng: &mut R,
    ) -> Result<f64> {
        let Some(batch) = self.sample_minibatch(size, rng) else {
            return Ok(0.0);
        };
        minibatch_loss(net, &batch, cfg)
    }
}

/// Replay objective of `net` on a fixed minibatch, without a tape.
pub fn minibatch_loss(net: &Network, batch: &Minibatch, cfg: &ReplayConfig) -> Result<f64> {
    let z = net.forward(&batch.inputs)?;
    Ok(cfg.beta1 * cross_entropy(&z, &batch.labels)? + cfg.beta2 * mse_logits(&z, &batch.logits)?)
}
