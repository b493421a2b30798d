//! Candidate network selection: at each task boundary, pick the subnet of the
//! current search space whose logits best track the working network,
//! penalized by its relative size, and refresh the single teacher snapshot.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::mse_logits;
use crate::matrix::Matrix;
use crate::network::Network;
use crate::subnet::{param_count, slice_forward, ArchConfig};

/// Inputs used to score candidates, sampled from the task that just finished.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSet {
    inputs: Matrix,
}

impl SelectionSet {
    pub fn new(inputs: Matrix) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Parameter("selection set is empty".into()));
        }
        Ok(SelectionSet { inputs })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }
}

/// How the candidate architectures are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSearch {
    /// Uniform-width configurations plus this many random heterogeneous ones.
    Sampled(usize),
    /// Every configuration with per-layer groups in `1..=g_t`.
    Exhaustive,
}

/// exp(|ψ|/|θ|) · mean ‖z_θ(x) − z_ψ(x)‖²
pub fn cns_score(net: &Network, arch: &ArchConfig, sel: &SelectionSet) -> Result<f64> {
    let reference = net.forward(&sel.inputs)?;
    score_against(net, arch, sel, &reference)
}

fn score_against(
    net: &Network,
    arch: &ArchConfig,
    sel: &SelectionSet,
    reference: &Matrix,
) -> Result<f64> {
    let sliced = slice_forward(net, arch, &sel.inputs)?;
    let ratio = param_count(net, arch)? as f64 / net.num_params() as f64;
    Ok(ratio.exp() * mse_logits(reference, &sliced)?)
}

/// Admissible candidates for search space `g_t`, deduplicated and sorted.
pub fn candidate_set<R: Rng + ?Sized>(
    net: &Network,
    g_t: usize,
    search: CandidateSearch,
    rng: &mut R,
) -> Result<BTreeSet<ArchConfig>> {
    if g_t == 0 || g_t > net.groups() {
        return Err(Error::Parameter(format!(
            "search space of {g_t} groups outside 1..={}",
            net.groups()
        )));
    }
    let layers = net.num_hidden();
    let mut out = BTreeSet::new();
    for c in 1..=g_t {
        out.insert(ArchConfig::uniform(layers, c));
    }
    match search {
        CandidateSearch::Sampled(k) => {
            for _ in 0..k {
                out.insert(ArchConfig::new(
                    (0..layers).map(|_| rng.random_range(1..=g_t)).collect(),
                ));
            }
        }
        CandidateSearch::Exhaustive => {
            let mut current = vec![1; layers];
            loop {
                out.insert(ArchConfig::new(current.clone()));
                // odometer increment
                let Some(pos) = current.iter().rposition(|&g| g < g_t) else {
                    break;
                };
                current[pos] += 1;
                for g in &mut current[pos + 1..] {
                    *g = 1;
                }
            }
        }
    }
    // The identity subnet always has distance zero.
    let identity = ArchConfig::full(net);
    if out.len() > 1 {
        out.remove(&identity);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub arch: ArchConfig,
    pub score: f64,
    pub param_count: usize,
    pub param_ratio: f64,
}

/// Minimum-score candidate; ties go to fewer parameters, then the
/// lexicographically smaller configuration.
pub fn select_representative<R: Rng + ?Sized>(
    net: &Network,
    g_t: usize,
    sel: &SelectionSet,
    search: CandidateSearch,
    rng: &mut R,
) -> Result<Selection> {
    let candidates: Vec<ArchConfig> = candidate_set(net, g_t, search, rng)?.into_iter().collect();
    let reference = net.forward(&sel.inputs)?;
    let total = net.num_params() as f64;
    let scored = candidates
        .into_par_iter()
        .map(|arch| {
            let score = score_against(net, &arch, sel, &reference)?;
            let count = param_count(net, &arch)?;
            Ok(Selection {
                param_ratio: count as f64 / total,
                arch,
                score,
                param_count: count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored
        .into_iter()
        .min_by(selection_order)
        .ok_or_else(|| Error::State("no admissible candidate".into()))
}

fn selection_order(a: &Selection, b: &Selection) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.param_count.cmp(&b.param_count))
        .then_with(|| a.arch.cmp(&b.arch))
}

/// Metrics emitted at each boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub boundary_index: usize,
    pub arch: ArchConfig,
    pub score: f64,
    pub param_ratio: f64,
}

/// Representative architectures chosen so far and the one frozen teacher.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidatePool {
    archs: Vec<ArchConfig>,
    teacher: Option<Network>,
    boundary_index: usize,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(
        archs: Vec<ArchConfig>,
        teacher: Option<Network>,
        boundary_index: usize,
    ) -> Self {
        CandidatePool {
            archs,
            teacher,
            boundary_index,
        }
    }

    pub fn archs(&self) -> &[ArchConfig] {
        &self.archs
    }

    pub fn teacher(&self) -> Option<&Network> {
        self.teacher.as_ref()
    }

    /// Number of boundaries processed.
    pub fn boundary_index(&self) -> usize {
        self.boundary_index
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    /// Uniform draw from the pool; `None` before the first boundary.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&ArchConfig> {
        if self.archs.is_empty() {
            None
        } else {
            Some(&self.archs[rng.random_range(0..self.archs.len())])
        }
    }

    /// Runs selection for boundary number `boundary` (1-based: the boundary
    /// after task `boundary`), appends the winner and replaces the teacher
    /// with a copy of `net`.
    pub fn boundary_update<R: Rng + ?Sized>(
        &mut self,
        boundary: usize,
        net: &Network,
        g_t: usize,
        sel: &SelectionSet,
        search: CandidateSearch,
        rng: &mut R,
    ) -> Result<BoundaryRecord> {
        if boundary != self.boundary_index + 1 {
            return Err(Error::State(format!(
                "boundary {boundary} requested after boundary {}",
                self.boundary_index
            )));
        }
        let chosen = select_representative(net, g_t, sel, search, rng)?;
        self.archs.push(chosen.arch.clone());
        self.teacher = Some(net.clone());
        self.boundary_index = boundary;
        Ok(BoundaryRecord {
            boundary_index: boundary,
            arch: chosen.arch,
            score: chosen.score,
            param_ratio: chosen.param_ratio,
        })
    }
}
