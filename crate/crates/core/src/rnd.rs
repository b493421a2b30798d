//! Representative network distillation: the student's view of a pooled
//! architecture is pulled toward the frozen teacher's view of the same one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cns::CandidatePool;
use crate::error::{Error, Result};
use crate::loss::mse_logits;
use crate::matrix::Matrix;
use crate::network::Network;
use crate::subnet::{slice_forward, slice_forward_on, ArchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RndConfig {
    pub lambda: f64,
    pub enabled: bool,
}

impl Default for RndConfig {
    fn default() -> Self {
        RndConfig {
            lambda: 0.05,
            enabled: true,
        }
    }
}

impl RndConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Distillation term for `arch` on the tape's network. The teacher output
/// enters as a constant, so no gradient reaches the snapshot.
pub fn rnd_loss_on(
    tape: &mut Tape<'_>,
    teacher: &Network,
    arch: &ArchConfig,
    batch: Var,
) -> Result<Var> {
    let target = slice_forward(teacher, arch, tape.value(batch))?;
    let target = tape.constant(target);
    let student = slice_forward_on(tape, arch, batch)?;
    tape.squared_distance(student, target)
}

/// Draws one architecture from the pool and evaluates the distillation loss
/// on `batch`. Returns zero and no architecture while the pool is empty.
pub fn rnd_loss<R: Rng + ?Sized>(
    net: &Network,
    pool: &CandidatePool,
    batch: &Matrix,
    rng: &mut R,
) -> Result<(f64, Option<ArchConfig>)> {
    let Some(arch) = pool.sample(rng) else {
        return Ok((0.0, None));
    };
    let teacher = pool
        .teacher()
        .ok_or_else(|| Error::State("candidate pool has architectures but no teacher".into()))?;
    let student = slice_forward(net, arch, batch)?;
    let target = slice_forward(teacher, arch, batch)?;
    Ok((mse_logits(&student, &target)?, Some(arch.clone())))
}
