//! Sequential training over a task stream.
//!
//! Every batch assembles `CE + λ·RND + replay`, takes one SGD step restricted
//! to the current search space, and then offers the batch to the replay
//! buffer. Between tasks the candidate pool picks a representative
//! architecture and refreshes its teacher snapshot.
//!
//! Each source of randomness has its own generator, so disabling one
//! component (say, distillation) never shifts the random draws of another.
//! This is what makes the baselines step-for-step reproducible as special
//! cases of the full method.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::cns::{BoundaryRecord, CandidatePool, CandidateSearch, SelectionSet};
use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::metrics::{average_accuracy, evaluate, forgetting, AccuracyMatrix, EvalMode};
use crate::network::Network;
use crate::rnd::{rnd_loss_on, RndConfig};
use crate::scer::{rehearsal_gate, ReplayBuffer, ReplayConfig, ReplayEntry, ScerReservoir};
use crate::schedule::{build_schedule, ScheduleState};
use crate::subnet::{param_ratio, trainable_mask, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    E2net,
    Sgd,
    Er,
    Derpp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::E2net => "e2net",
            Method::Sgd => "sgd",
            Method::Er => "er",
            Method::Derpp => "derpp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e2net" => Ok(Method::E2net),
            "sgd" => Ok(Method::Sgd),
            "er" => Ok(Method::Er),
            "derpp" | "der++" => Ok(Method::Derpp),
            _ => Err(Error::Parameter(format!(
                "unknown method {s:?} (expected e2net, sgd, er or derpp)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub tasks: usize,
    pub groups: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rnd: RndConfig,
    pub alpha: f64,
    pub replay: ReplayConfig,
    pub buffer_capacity: usize,
    /// Examples kept for scoring candidates at each boundary.
    pub selection_size: usize,
    pub candidate_search: CandidateSearch,
    /// Train every parameter regardless of the search space.
    pub full_mask: bool,
    pub eval_mode: EvalMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::E2net,
            tasks: 5,
            groups: 8,
            hidden: vec![64, 64],
            epochs: 5,
            batch_size: 32,
            lr: 0.03,
            rnd: RndConfig::default(),
            alpha: 0.75,
            replay: ReplayConfig::default(),
            buffer_capacity: 200,
            selection_size: 256,
            candidate_search: CandidateSearch::Sampled(64),
            full_mask: false,
            eval_mode: EvalMode::ClassIl,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks == 0 {
            return fail("tasks must be at least 1".into());
        }
        if self.groups == 0 {
            return fail("groups must be at least 1".into());
        }
        if let Some(w) = self
            .hidden
            .iter()
            .find(|&&w| w == 0 || w % self.groups != 0)
        {
            return fail(format!(
                "hidden width {w} is not a positive multiple of {} groups",
                self.groups
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || (self.uses_buffer() && self.batch_size < 2) {
            return fail(format!(
                "batch size {} too small (replay needs at least 2)",
                self.batch_size
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.selection_size == 0 {
            return fail("selection size must be at least 1".into());
        }
        self.rnd.validate()?;
        self.replay.validate()
    }

    pub fn uses_buffer(&self) -> bool {
        self.method != Method::Sgd
    }

    fn uses_pool(&self) -> bool {
        self.method == Method::E2net
    }

    fn distills(&self) -> bool {
        self.uses_pool() && self.rnd.enabled && self.rnd.lambda != 0.0
    }

    fn masked(&self) -> bool {
        self.method == Method::E2net && !self.full_mask
    }

    /// Replay weights after applying the method's fixed choices.
    pub fn effective_replay(&self) -> ReplayConfig {
        match self.method {
            Method::Er => ReplayConfig {
                beta1: 1.0,
                beta2: 0.0,
                ..self.replay
            },
            _ => self.replay,
        }
    }
}

/// Structured training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsEvent {
    Epoch {
        task: usize,
        epoch: usize,
        batches: usize,
        ce: f64,
        rnd: f64,
        replay: f64,
    },
    Boundary(BoundaryRecord),
    TaskEnd {
        task: usize,
        acc_class_il: f64,
        acc_task_il: f64,
        forgetting: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct EpochStats {
    pub batches: usize,
    pub ce: f64,
    pub rnd: f64,
    pub replay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Progress {
    pub task: usize,
    pub epoch: usize,
    pub cursor: usize,
    pub step: u64,
    pub order: Vec<usize>,
    pub finished: bool,
}

/// Independent generators per concern.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Streams {
    pub shuffle: ChaCha8Rng,
    pub arch: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub offer: ChaCha8Rng,
    pub select: ChaCha8Rng,
    pub cns: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id + 1);
            rng
        };
        Streams {
            shuffle: stream(0),
            arch: stream(1),
            replay: stream(2),
            offer: stream(3),
            select: stream(4),
            cns: stream(5),
        }
    }

    pub fn all(&self) -> [&ChaCha8Rng; 6] {
        [
            &self.shuffle,
            &self.arch,
            &self.replay,
            &self.offer,
            &self.select,
            &self.cns,
        ]
    }

    pub fn from_array(a: [ChaCha8Rng; 6]) -> Self {
        let [shuffle, arch, replay, offer, select, cns] = a;
        Streams {
            shuffle,
            arch,
            replay,
            offer,
            select,
            cns,
        }
    }
}

/// Results of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub class_il: AccuracyMatrix,
    pub task_il: AccuracyMatrix,
    pub boundaries: Vec<BoundaryRecord>,
    pub wall_ms: Vec<u64>,
}

pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) schedule: ScheduleState,
    pub(crate) net: Network,
    pub(crate) pool: CandidatePool,
    pub(crate) buffer: ReplayBuffer,
    pub(crate) streams: Streams,
    pub(crate) progress: Progress,
    pub(crate) selection: ScerReservoir<usize>,
    pub(crate) class_il: AccuracyMatrix,
    pub(crate) task_il: AccuracyMatrix,
    pub(crate) epoch_stats: EpochStats,
    pub(crate) boundaries: Vec<BoundaryRecord>,
    pub(crate) events: Vec<MetricsEvent>,
    pub(crate) wall_ms: Vec<u64>,
    task_started: Option<Instant>,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.tasks, config.groups)?;
        let net = Network::new(
            input_dim,
            &config.hidden,
            num_classes,
            config.groups,
            config.seed,
        )?;
        Ok(Trainer {
            buffer: ReplayBuffer::new(config.buffer_capacity, config.alpha),
            selection: ScerReservoir::new(config.selection_size, 0.0),
            streams: Streams::new(config.seed),
            schedule,
            net,
            pool: CandidatePool::new(),
            progress: Progress {
                task: 0,
                epoch: 0,
                cursor: 0,
                step: 0,
                order: Vec::new(),
                finished: false,
            },
            class_il: AccuracyMatrix::new(),
            task_il: AccuracyMatrix::new(),
            epoch_stats: EpochStats::default(),
            boundaries: Vec::new(),
            events: Vec::new(),
            wall_ms: Vec::new(),
            task_started: None,
            config,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: TrainConfig,
        net: Network,
        pool: CandidatePool,
        buffer: ReplayBuffer,
        streams: Streams,
        progress: Progress,
        selection: ScerReservoir<usize>,
        class_il: AccuracyMatrix,
        task_il: AccuracyMatrix,
        epoch_stats: EpochStats,
        boundaries: Vec<BoundaryRecord>,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.tasks, config.groups)?;
        Ok(Trainer {
            config,
            schedule,
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
            events: Vec::new(),
            wall_ms: Vec::new(),
            task_started: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn class_il(&self) -> &AccuracyMatrix {
        &self.class_il
    }

    pub fn task_il(&self) -> &AccuracyMatrix {
        &self.task_il
    }

    /// 0-based task currently being trained.
    pub fn current_task(&self) -> usize {
        self.progress.task
    }

    pub fn current_epoch(&self) -> usize {
        self.progress.epoch
    }

    /// Optimization steps taken so far.
    pub fn steps(&self) -> u64 {
        self.progress.step
    }

    pub fn is_finished(&self) -> bool {
        self.progress.finished
    }

    /// Drains telemetry recorded since the last call.
    pub fn take_events(&mut self) -> Vec<MetricsEvent> {
        std::mem::take(&mut self.events)
    }

    /// Parameters the optimizer may touch during the current task.
    pub fn current_mask(&self) -> Result<TrainableMask> {
        if self.config.masked() {
            trainable_mask(&self.net, self.schedule.groups_for_task(self.progress.task))
        } else {
            Ok(TrainableMask::full(&self.net))
        }
    }

    fn check_streams(&self, train: &TaskStream, test: &TaskStream) -> Result<()> {
        for (name, s) in [("training", train), ("test", test)] {
            if s.num_tasks() != self.config.tasks {
                return Err(Error::Parameter(format!(
                    "{name} stream has {} tasks, configuration expects {}",
                    s.num_tasks(),
                    self.config.tasks
                )));
            }
            if s.input_dim != self.net.input_dim() || s.total_classes != self.net.num_classes() {
                return Err(Error::Shape(format!(
                    "{name} stream is {}-dimensional with {} classes, network expects {} and {}",
                    s.input_dim,
                    s.total_classes,
                    self.net.input_dim(),
                    self.net.num_classes()
                )));
            }
        }
        Ok(())
    }

    /// Processes one batch. Returns `false` once every task is done.
    pub fn step(&mut self, train: &TaskStream, test: &TaskStream) -> Result<bool> {
        if self.progress.finished {
            return Ok(false);
        }
        self.check_streams(train, test)?;
        let task_idx = self.progress.task;
        let task = &train.tasks[task_idx];
        let n = task.len();
        if n == 0 {
            return Err(Error::Parameter(format!(
                "task {} has no examples",
                task_idx + 1
            )));
        }
        if self.progress.order.is_empty() {
            if self.progress.epoch == 0 && self.task_started.is_none() {
                self.task_started = Some(Instant::now());
            }
            self.progress.order = (0..n).collect();
            self.progress.order.shuffle(&mut self.streams.shuffle);
        }

        let bs = self.config.batch_size;
        let start = self.progress.cursor;
        let end = (start + bs).min(n);
        let idx = self.progress.order[start..end].to_vec();
        if idx.len() < bs && self.progress.epoch == 0 {
            log::debug!(
                "task {}: final batch truncated to {} of {bs} examples",
                task_idx + 1,
                idx.len()
            );
        }
        let x = task.inputs.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| task.labels[i]).collect();

        if self.progress.epoch == 0 {
            for &i in &idx {
                self.selection.offer(i, 0.0, &mut self.streams.select);
            }
        }

        let replay_cfg = self.config.effective_replay();
        let mut ratio = 0.0;
        let grads = {
            let mut tape = Tape::new(&self.net);
            let xv = tape.constant(x.clone());
            let logits = tape.forward(xv)?;
            let ce = tape.cross_entropy(logits, &y)?;
            self.epoch_stats.ce += tape.scalar(ce);
            let mut total = ce;

            if self.config.uses_pool() {
                if let Some(arch) = self.pool.sample(&mut self.streams.arch) {
                    ratio = param_ratio(&self.net, arch)?;
                    if self.config.distills() {
                        let teacher = self.pool.teacher().ok_or_else(|| {
                            Error::State("candidate pool has no teacher snapshot".into())
                        })?;
                        let rnd = rnd_loss_on(&mut tape, teacher, arch, xv)?;
                        self.epoch_stats.rnd += tape.scalar(rnd);
                        let rnd = tape.scale(rnd, self.config.rnd.lambda);
                        total = tape.add(total, rnd)?;
                    }
                }
            }

            if self.config.uses_buffer()
                && rehearsal_gate(self.progress.step, replay_cfg.rehearsal_frequency)
            {
                if let Some(mb) = self.buffer.sample_minibatch(bs, &mut self.streams.replay) {
                    if let Some(rep) = ReplayBuffer::replay_loss_on(&mut tape, &mb, &replay_cfg)? {
                        self.epoch_stats.replay += tape.scalar(rep);
                        total = tape.add(total, rep)?;
                    }
                }
            }
            tape.backward(total)?
        };

        let mask = self.current_mask()?;
        self.net.sgd_step(&grads, self.config.lr, &mask)?;

        if self.config.uses_buffer() {
            let z = self.net.forward(&x)?;
            for (r, &label) in y.iter().enumerate() {
                self.buffer.offer(
                    ReplayEntry {
                        input: x.row(r).to_vec(),
                        label,
                        logits: z.row(r).to_vec(),
                    },
                    ratio,
                    &mut self.streams.offer,
                );
            }
        }

        self.epoch_stats.batches += 1;
        self.progress.step += 1;
        self.progress.cursor = end;
        if end >= n {
            self.finish_epoch(train, test)?;
        }
        Ok(!self.progress.finished)
    }

    fn finish_epoch(&mut self, train: &TaskStream, test: &TaskStream) -> Result<()> {
        let stats = std::mem::take(&mut self.epoch_stats);
        let b = stats.batches.max(1) as f64;
        let event = MetricsEvent::Epoch {
            task: self.progress.task + 1,
            epoch: self.progress.epoch + 1,
            batches: stats.batches,
            ce: stats.ce / b,
            rnd: stats.rnd / b,
            replay: stats.replay / b,
        };
        log::debug!("{event:?}");
        self.events.push(event);
        self.progress.epoch += 1;
        self.progress.cursor = 0;
        self.progress.order.clear();
        if self.progress.epoch == self.config.epochs {
            self.finish_task(train, test)?;
        }
        Ok(())
    }

    fn finish_task(&mut self, train: &TaskStream, test: &TaskStream) -> Result<()> {
        let t = self.progress.task;
        self.wall_ms.push(
            self.task_started
                .take()
                .map_or(0, |s| s.elapsed().as_millis() as u64),
        );
        let class_row = evaluate(&self.net, test, t + 1, EvalMode::ClassIl)?;
        let task_row = evaluate(&self.net, test, t + 1, EvalMode::TaskIl)?;
        self.class_il.push_row(class_row)?;
        self.task_il.push_row(task_row)?;
        let reference = match self.config.eval_mode {
            EvalMode::ClassIl => &self.class_il,
            EvalMode::TaskIl => &self.task_il,
        };
        let event = MetricsEvent::TaskEnd {
            task: t + 1,
            acc_class_il: average_accuracy(&self.class_il, t + 1)?,
            acc_task_il: average_accuracy(&self.task_il, t + 1)?,
            forgetting: forgetting(reference, t + 1)?,
        };
        log::info!(
            "[{} seed {}] {event:?}",
            self.config.method,
            self.config.seed
        );
        self.events.push(event);

        if t + 1 == self.config.tasks {
            self.progress.finished = true;
            return Ok(());
        }
        if self.config.uses_pool() {
            let rows: Vec<usize> = self.selection.entries().to_vec();
            let sel = SelectionSet::new(train.tasks[t].inputs.select_rows(&rows))?;
            let record = self.pool.boundary_update(
                t + 1,
                &self.net,
                self.schedule.groups_for_task(t),
                &sel,
                self.config.candidate_search,
                &mut self.streams.cns,
            )?;
            log::info!(
                "boundary {}: arch {} score {:.6} ratio {:.4}",
                record.boundary_index,
                record.arch,
                record.score,
                record.param_ratio
            );
            self.events.push(MetricsEvent::Boundary(record.clone()));
            self.boundaries.push(record);
        }
        self.selection = ScerReservoir::new(self.config.selection_size, 0.0);
        self.progress.task += 1;
        self.progress.epoch = 0;
        Ok(())
    }

    /// Trains every remaining task.
    pub fn run(&mut self, train: &TaskStream, test: &TaskStream) -> Result<TrainOutcome> {
        while self.step(train, test)? {}
        Ok(self.outcome())
    }

    pub fn outcome(&self) -> TrainOutcome {
        TrainOutcome {
            class_il: self.class_il.clone(),
            task_il: self.task_il.clone(),
            boundaries: self.boundaries.clone(),
            wall_ms: self.wall_ms.clone(),
        }
    }
}
