//! Binary trainer checkpoints.
//!
//! Layout (little-endian): magic `E2NCKPT1`, training configuration as JSON,
//! network layers, candidate pool (architectures, optional teacher, boundary
//! index), replay buffer in its own `E2NBUF1` layout, the six generator
//! states, progress within the schedule, the boundary selection reservoir,
//! both accuracy matrices, running epoch statistics and boundary records.
//! Task data is not included; the caller supplies the same streams on resume.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cns::{BoundaryRecord, CandidatePool};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::metrics::AccuracyMatrix;
use crate::network::{Activation, DenseLayer, Network};
use crate::scer::{ReplayBuffer, ScerReservoir};
use crate::subnet::ArchConfig;
use crate::trainer::{EpochStats, Progress, Streams, TrainConfig, Trainer};

use super::write_atomic;

const MAGIC: &[u8; 8] = b"E2NCKPT1";

fn write_network(w: &mut Writer<Vec<u8>>, net: &Network) -> Result<()> {
    w.usize(net.groups())?;
    w.u64(net.seed())?;
    w.usize(net.layers().len())?;
    for layer in net.layers() {
        w.bool(layer.activation == Activation::Relu)?;
        w.matrix(&layer.weights)?;
        w.f64s(&layer.bias)?;
    }
    Ok(())
}

fn read_network<R: Read>(r: &mut Reader<R>) -> Result<Network> {
    let groups = r.usize()?;
    let seed = r.u64()?;
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let activation = if r.bool()? {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let weights = r.matrix()?;
        let bias = r.f64s(weights.rows())?;
        layers.push(DenseLayer::new(weights, bias, activation)?);
    }
    Network::from_layers(layers, groups, seed)
}

fn write_rng(w: &mut Writer<Vec<u8>>, rng: &ChaCha8Rng) -> Result<()> {
    w.bytes(&rng.get_seed())?;
    w.u64(rng.get_stream())?;
    w.u128(rng.get_word_pos())
}

fn read_rng<R: Read>(r: &mut Reader<R>) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = r.bytes()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(r.u128()?);
    Ok(rng)
}

fn write_accuracy(w: &mut Writer<Vec<u8>>, m: &AccuracyMatrix) -> Result<()> {
    w.usize(m.len())?;
    for row in m.rows() {
        w.f64s(row)?;
    }
    Ok(())
}

fn read_accuracy<R: Read>(r: &mut Reader<R>) -> Result<AccuracyMatrix> {
    let n = r.usize()?;
    let rows = (0..n).map(|t| r.f64s(t + 1)).collect::<Result<Vec<_>>>()?;
    AccuracyMatrix::from_rows(rows)
}

/// Serializes the full trainer state.
pub fn to_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let mut w = Writer::new(Vec::new());
    w.bytes(MAGIC)?;
    let cfg = serde_json::to_string(&trainer.config).map_err(|e| Error::Config(e.to_string()))?;
    w.string(&cfg)?;
    write_network(&mut w, &trainer.net)?;

    let pool = &trainer.pool;
    w.usize(pool.archs().len())?;
    for a in pool.archs() {
        w.string(&a.to_string())?;
    }
    w.bool(pool.teacher().is_some())?;
    if let Some(t) = pool.teacher() {
        write_network(&mut w, t)?;
    }
    w.usize(pool.boundary_index())?;

    let mut w = Writer::new(trainer.buffer.write_to(w.into_inner())?);

    for rng in trainer.streams.all() {
        write_rng(&mut w, rng)?;
    }

    let p = &trainer.progress;
    w.usize(p.task)?;
    w.usize(p.epoch)?;
    w.usize(p.cursor)?;
    w.u64(p.step)?;
    w.usizes(&p.order)?;
    w.bool(p.finished)?;

    let sel = &trainer.selection;
    w.usize(sel.capacity())?;
    w.u64(sel.seen())?;
    w.usizes(sel.entries())?;

    write_accuracy(&mut w, &trainer.class_il)?;
    write_accuracy(&mut w, &trainer.task_il)?;

    let s = &trainer.epoch_stats;
    w.usize(s.batches)?;
    w.f64s(&[s.ce, s.rnd, s.replay])?;

    let b = serde_json::to_string(&trainer.boundaries).map_err(|e| Error::Config(e.to_string()))?;
    w.string(&b)?;
    Ok(w.into_inner())
}

/// Restores a trainer written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 8] = r
        .bytes()
        .map_err(|_| Error::Incompatible("file too short to be a checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Incompatible(format!(
            "checkpoint header {:?}, this build reads {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let cfg_text = r.string()?;
    let config: TrainConfig = serde_json::from_str(&cfg_text)
        .map_err(|e| r.format_error(format!("bad configuration block: {e}")))?;
    let net = read_network(&mut r)?;

    let n_archs = r.usize()?;
    let archs = (0..n_archs)
        .map(|_| r.string()?.parse::<ArchConfig>())
        .collect::<Result<Vec<_>>>()?;
    let teacher = if r.bool()? {
        Some(read_network(&mut r)?)
    } else {
        None
    };
    let boundary_index = r.usize()?;
    let pool = CandidatePool::from_parts(archs, teacher, boundary_index);

    let buffer = ReplayBuffer::read_with(&mut r)?;

    let rngs = [
        read_rng(&mut r)?,
        read_rng(&mut r)?,
        read_rng(&mut r)?,
        read_rng(&mut r)?,
        read_rng(&mut r)?,
        read_rng(&mut r)?,
    ];
    let streams = Streams::from_array(rngs);

    let progress = Progress {
        task: r.usize()?,
        epoch: r.usize()?,
        cursor: r.usize()?,
        step: r.u64()?,
        order: r.usizes()?,
        finished: r.bool()?,
    };

    let sel_capacity = r.usize()?;
    let sel_seen = r.u64()?;
    let sel_entries = r.usizes()?;
    let selection = ScerReservoir::restore(sel_capacity, 0.0, sel_seen, sel_entries)?;

    let class_il = read_accuracy(&mut r)?;
    let task_il = read_accuracy(&mut r)?;

    let batches = r.usize()?;
    let sums = r.f64s(3)?;
    let epoch_stats = EpochStats {
        batches,
        ce: sums[0],
        rnd: sums[1],
        replay: sums[2],
    };
    let b_text = r.string()?;
    let boundaries: Vec<BoundaryRecord> = serde_json::from_str(&b_text)
        .map_err(|e| r.format_error(format!("bad boundary block: {e}")))?;

    if progress.task >= config.tasks {
        return Err(Error::Consistency(format!(
            "checkpoint at task {} of {}",
            progress.task + 1,
            config.tasks
        )));
    }
    Trainer::from_parts(
        config,
        net,
        pool,
        buffer,
        streams,
        progress,
        selection,
        class_il,
        task_il,
        epoch_stats,
        boundaries,
    )
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(trainer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
