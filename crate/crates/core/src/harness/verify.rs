//! Built-in oracle checks, runnable from the command line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::cns::{select_representative, CandidateSearch, SelectionSet};
use crate::data::{make_synthetic, split_tasks, SyntheticSpec, TaskStream};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::EvalMode;
use crate::network::Network;
use crate::rnd::{rnd_loss_on, RndConfig};
use crate::scer::{retention_probability, Minibatch, Placement, ReplayConfig, ScerReservoir};
use crate::schedule::build_schedule;
use crate::subnet::ArchConfig;
use crate::trainer::{Method, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Schedule,
    Scer,
    Gradients,
    Cns,
    Equivalence,
    All,
}

impl Suite {
    const EACH: [Suite; 5] = [
        Suite::Schedule,
        Suite::Scer,
        Suite::Gradients,
        Suite::Cns,
        Suite::Equivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Schedule => "schedule",
            Suite::Scer => "scer",
            Suite::Gradients => "gradients",
            Suite::Cns => "cns",
            Suite::Equivalence => "equivalence",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite {s:?} (expected schedule, scer, gradients, cns, equivalence or all)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(name: &str, checks: Vec<Check>) -> Self {
        SuiteReport {
            name: name.to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "[{}] {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "  {} {}: {}",
                if c.passed { "ok  " } else { "FAIL" },
                c.label,
                c.detail
            )?;
        }
        Ok(())
    }
}

fn check(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        label: label.into(),
        passed,
        detail: detail.into(),
    }
}

/// Runs one suite, or all of them.
pub fn verify(suite: Suite) -> Result<Vec<SuiteReport>> {
    match suite {
        Suite::All => Suite::EACH.into_iter().map(run_one).collect(),
        s => Ok(vec![run_one(s)?]),
    }
}

fn run_one(suite: Suite) -> Result<SuiteReport> {
    match suite {
        Suite::Schedule => schedule_suite(),
        Suite::Scer => scer_suite(200_000, 0),
        Suite::Gradients => gradient_suite(0),
        Suite::Cns => cns_suite(20, 0),
        Suite::Equivalence => equivalence_suite(0),
        Suite::All => unreachable!("expanded by verify"),
    }
}

pub fn schedule_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (n, g) in [(1, 8), (2, 8), (5, 10), (10, 64), (20, 64)] {
        let s = build_schedule(n, g)?;
        let last = *s.g_groups.last().expect("at least one task");
        let monotone = s.g_groups.windows(2).all(|w| w[0] <= w[1]);
        let raw_sum: f64 = s.s_raw.iter().sum();
        let ok = last == g && monotone && (raw_sum - g as f64).abs() <= 1e-9;
        checks.push(check(
            format!("N={n} G={g}"),
            ok,
            format!(
                "g_N={last}, non-decreasing={monotone}, |sum s - G|={:.2e}",
                (raw_sum - g as f64).abs()
            ),
        ));
    }
    Ok(SuiteReport::new("schedule", checks))
}

/// Empirical behaviour of a reservoir over many independent streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirTrial {
    /// Fraction of trials in which each of the first `capacity` items survived.
    pub retention: Vec<f64>,
    /// How often each slot was overwritten.
    pub slot_hits: Vec<u64>,
}

/// Streams `stream` items through a fresh reservoir `trials` times at a
/// constant ratio. Trials are split over worker threads, each with its own
/// generator stream, so the result depends only on `seed`.
pub fn reservoir_trials(
    capacity: usize,
    stream: usize,
    ratio: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> ReservoirTrial {
    const CHUNKS: usize = 64;
    let partial: Vec<(Vec<u64>, Vec<u64>)> = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let n = trials / CHUNKS + usize::from(chunk < trials % CHUNKS);
            let mut kept = vec![0u64; capacity];
            let mut hits = vec![0u64; capacity];
            for _ in 0..n {
                let mut r = ScerReservoir::new(capacity, alpha);
                for item in 0..stream {
                    if let Placement::Replaced(j) = r.offer(item, ratio, &mut rng) {
                        hits[j] += 1;
                    }
                }
                for &item in r.entries() {
                    if item < capacity {
                        kept[item] += 1;
                    }
                }
            }
            (kept, hits)
        })
        .collect();
    let mut kept = vec![0u64; capacity];
    let mut slot_hits = vec![0u64; capacity];
    for (k, h) in partial {
        kept.iter_mut().zip(k).for_each(|(a, b)| *a += b);
        slot_hits.iter_mut().zip(h).for_each(|(a, b)| *a += b);
    }
    ReservoirTrial {
        retention: kept.iter().map(|&k| k as f64 / trials as f64).collect(),
        slot_hits,
    }
}

/// Pearson statistic of `counts` against a uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

pub fn scer_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    const B: usize = 20;
    const K: usize = 200;
    let mut checks = Vec::new();

    let plain = reservoir_trials(B, K, 0.0, 0.75, trials, seed);
    let target = B as f64 / K as f64;
    let worst = max_deviation(&plain.retention, target);
    checks.push(check(
        "rho=0 retention",
        worst <= 0.01,
        format!("target {target:.4}, worst deviation {worst:.4}"),
    ));

    let damped = reservoir_trials(B, K, 0.5, 0.75, trials, seed.wrapping_add(1));
    let target = retention_probability(B, K, &vec![0.5; K - B], 0.75)?;
    let worst = max_deviation(&damped.retention, target);
    checks.push(check(
        "rho=0.5 alpha=0.75 retention",
        worst <= 0.01,
        format!("target {target:.4}, worst deviation {worst:.4}"),
    ));

    let dof = (B - 1) as f64;
    let limit = dof + 4.0 * (2.0 * dof).sqrt();
    let chi2 = chi_square_uniform(&plain.slot_hits);
    checks.push(check(
        "eviction slot uniformity",
        chi2 < limit,
        format!("chi2 {chi2:.2} < {limit:.2} ({dof} dof)"),
    ));
    Ok(SuiteReport::new("scer", checks))
}

fn max_deviation(values: &[f64], target: f64) -> f64 {
    values
        .iter()
        .map(|v| (v - target).abs())
        .fold(0.0, f64::max)
}

/// Worst relative error between the tape gradient and central differences
/// over every parameter. `loss` records a scalar on a tape over the network.
pub fn finite_difference_error<F>(net: &Network, h: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(net);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let eval = |n: &Network| -> Result<f64> {
        let mut tape = Tape::new(n);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l))
    };
    let analytic = grads.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut index = 0;
    for l in 0..net.layers().len() {
        let count = net.layers()[l].weights.data().len() + net.layers()[l].bias.len();
        for p in 0..count {
            let original = param(&probe, l, p);
            *param_mut(&mut probe, l, p) = original + h;
            let up = eval(&probe)?;
            *param_mut(&mut probe, l, p) = original - h;
            let down = eval(&probe)?;
            *param_mut(&mut probe, l, p) = original;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[index], numeric));
            index += 1;
        }
    }
    Ok(worst)
}

/// |a − b| / max(|a|, |b|, 1e-6); the floor keeps gradients that vanish
/// analytically from amplifying finite-difference noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// Parameters in `Gradients::flatten` order: each layer's weights, then its bias.
fn param(net: &Network, l: usize, p: usize) -> f64 {
    let layer = &net.layers()[l];
    let w = layer.weights.data().len();
    if p < w {
        layer.weights.data()[p]
    } else {
        layer.bias[p - w]
    }
}

fn param_mut(net: &mut Network, l: usize, p: usize) -> &mut f64 {
    let layer = &mut net.layers_mut()[l];
    let w = layer.weights.data().len();
    if p < w {
        &mut layer.weights.data_mut()[p]
    } else {
        &mut layer.bias[p - w]
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 4;
    let net = Network::new(8, &[16, 16], classes, 4, seed)?;
    let x = random_matrix(6, 8, 1.0, &mut rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..classes)).collect();

    let mut teacher = net.clone();
    for layer in teacher.layers_mut() {
        for w in layer.weights.data_mut() {
            *w += rng.random_range(-0.1..0.1);
        }
    }
    let arch = ArchConfig::new(vec![2, 3]);

    let replay = Minibatch {
        inputs: random_matrix(5, 8, 1.0, &mut rng),
        labels: (0..5).map(|_| rng.random_range(0..classes)).collect(),
        logits: random_matrix(5, classes, 2.0, &mut rng),
    };
    let replay_cfg = ReplayConfig::default();

    let ce = finite_difference_error(&net, H, |t| {
        let xv = t.constant(x.clone());
        let z = t.forward(xv)?;
        t.cross_entropy(z, &labels)
    })?;
    let rnd = finite_difference_error(&net, H, |t| {
        let xv = t.constant(x.clone());
        rnd_loss_on(t, &teacher, &arch, xv)
    })?;
    let rep = finite_difference_error(&net, H, |t| {
        ScerReservoir::replay_loss_on(t, &replay, &replay_cfg)?
            .ok_or_else(|| Error::State("replay loss has no terms".into()))
    })?;

    let checks = [
        ("cross-entropy", ce),
        ("distillation", rnd),
        ("replay", rep),
    ]
    .into_iter()
    .map(|(name, err)| {
        check(
            name,
            err < TOL,
            format!(
                "max relative error {err:.2e} over {} parameters",
                net.num_params()
            ),
        )
    })
    .collect();
    Ok(SuiteReport::new("gradients", checks))
}

/// Logits of the subnet `arch` computed on the full network by zeroing every
/// hidden unit outside the active prefix.
pub fn masked_logits(net: &Network, arch: &ArchConfig, x: &Matrix) -> Matrix {
    let layers = net.layers();
    let g = net.groups();
    let mut h = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        let hidden = l + 1 < layers.len();
        let keep = if hidden {
            (layer.weights.rows() * arch.groups()[l]).div_ceil(g)
        } else {
            layer.weights.rows()
        };
        let mut out = Matrix::zeros(h.rows(), layer.weights.rows());
        for r in 0..h.rows() {
            for u in 0..keep {
                let mut acc = 0.0;
                for k in 0..h.cols() {
                    acc += h[(r, k)] * layer.weights[(u, k)];
                }
                acc += layer.bias[u];
                out[(r, u)] = if hidden { acc.max(0.0) } else { acc };
            }
        }
        h = out;
    }
    h
}

/// Parameters touched by `arch`, counted from layer shapes.
fn counted_params(net: &Network, arch: &ArchConfig) -> usize {
    let g = net.groups();
    let mut fan_in = net.input_dim();
    let mut total = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        let width = layer.weights.rows();
        let active = if l < arch.groups().len() {
            (width * arch.groups()[l]).div_ceil(g)
        } else {
            width
        };
        total += active * fan_in + active;
        fan_in = active;
    }
    total
}

/// Brute-force minimizer of the selection score over all `{1..=g_t}^L`
/// configurations (minus the full network when it is not the only one).
pub fn brute_force_selection(net: &Network, g_t: usize, x: &Matrix) -> (ArchConfig, f64) {
    let full_logits = masked_logits(net, &ArchConfig::full(net), x);
    let layers = net.num_hidden();
    let total = net.num_params() as f64;
    let mut all: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..layers {
        all = all
            .into_iter()
            .flat_map(|p| {
                (1..=g_t).map(move |g| {
                    let mut q = p.clone();
                    q.push(g);
                    q
                })
            })
            .collect();
    }
    if all.len() > 1 {
        all.retain(|a| a.iter().any(|&g| g != net.groups()));
    }
    let mut best: Option<(f64, usize, ArchConfig)> = None;
    for groups in all {
        let arch = ArchConfig::new(groups);
        let z = masked_logits(net, &arch, x);
        let mut dist = 0.0;
        for r in 0..x.rows() {
            for c in 0..z.cols() {
                dist += (full_logits[(r, c)] - z[(r, c)]).powi(2);
            }
        }
        dist /= x.rows() as f64;
        let params = counted_params(net, &arch);
        let score = (params as f64 / total).exp() * dist;
        let better = match &best {
            None => true,
            Some((s, p, a)) => score
                .total_cmp(s)
                .then(params.cmp(p))
                .then_with(|| arch.cmp(a))
                .is_lt(),
        };
        if better {
            best = Some((score, params, arch));
        }
    }
    let (score, _, arch) = best.expect("at least one configuration");
    (arch, score)
}

/// A network whose hidden units beyond the first group carry no weight, so
/// every subnet reproduces the full logits.
pub fn first_group_only(mut net: Network) -> Network {
    let g = net.groups();
    let hidden = net.num_hidden();
    for l in 0..=hidden {
        let layer = &mut net.layers_mut()[l];
        let (rows, cols) = layer.weights.shape();
        let keep_rows = if l < hidden { rows.div_ceil(g) } else { rows };
        let keep_cols = if l > 0 { cols.div_ceil(g) } else { cols };
        for r in 0..rows {
            for c in 0..cols {
                if r >= keep_rows || c >= keep_cols {
                    layer.weights[(r, c)] = 0.0;
                }
            }
            if r >= keep_rows {
                layer.bias[r] = 0.0;
            }
        }
    }
    net
}

pub fn cns_suite(nets: usize, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..nets {
        let mut net = Network::new(6, &[8, 8], 3, 4, seed.wrapping_add(i as u64))?;
        if i % 5 == 4 {
            net = first_group_only(net);
        }
        let g_t = rng.random_range(1..=4);
        let x = random_matrix(16, 6, 1.0, &mut rng);
        let chosen = select_representative(
            &net,
            g_t,
            &SelectionSet::new(x.clone())?,
            CandidateSearch::Exhaustive,
            &mut rng,
        )?;
        let (expected, score) = brute_force_selection(&net, g_t, &x);
        checks.push(check(
            format!("net {i} (g_t={g_t})"),
            chosen.arch == expected,
            format!(
                "selected {} score {:.6e}, oracle {} score {:.6e}",
                chosen.arch, chosen.score, expected, score
            ),
        ));
    }
    Ok(SuiteReport::new("cns", checks))
}

/// Two-task stream used by the equivalence checks.
pub fn small_streams(seed: u64) -> Result<(TaskStream, TaskStream)> {
    let data = make_synthetic(&SyntheticSpec {
        num_classes: 4,
        samples_per_class: 50,
        input_dim: 8,
        spread: 0.3,
        seed,
    })?;
    let (train, test) = data.split_holdout(10)?;
    Ok((split_tasks(&train, 2)?, split_tasks(&test, 2)?))
}

/// Compact configuration for the equivalence checks: 2 tasks × 2 epochs.
pub fn small_config(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        tasks: 2,
        groups: 4,
        hidden: vec![16, 16],
        epochs: 2,
        batch_size: 8,
        lr: 0.05,
        buffer_capacity: 24,
        selection_size: 32,
        candidate_search: CandidateSearch::Sampled(8),
        eval_mode: EvalMode::ClassIl,
        seed,
        ..TrainConfig::default()
    }
}

fn train(config: TrainConfig, train: &TaskStream, test: &TaskStream) -> Result<Trainer> {
    let mut t = Trainer::new(config, train.input_dim, train.total_classes)?;
    t.run(train, test)?;
    Ok(t)
}

fn same_run(a: &Trainer, b: &Trainer, compare_buffer: bool) -> (bool, String) {
    let net = a.network() == b.network();
    let acc = a.class_il() == b.class_il() && a.task_il() == b.task_il();
    let buf = !compare_buffer || a.buffer().entries() == b.buffer().entries();
    (
        net && acc && buf,
        format!("network equal={net}, accuracies equal={acc}, buffer equal={buf}"),
    )
}

pub fn equivalence_suite(seed: u64) -> Result<SuiteReport> {
    let (tr, te) = small_streams(seed)?;
    let mut checks = Vec::new();

    let mut e2 = small_config(Method::E2net, seed);
    e2.rnd = RndConfig {
        lambda: 0.0,
        ..RndConfig::default()
    };
    e2.alpha = 0.0;
    e2.full_mask = true;
    let derpp = small_config(Method::Derpp, seed);
    let (ok, detail) = same_run(
        &train(e2, &tr, &te)?,
        &train(derpp.clone(), &tr, &te)?,
        true,
    );
    checks.push(check(
        "e2net(lambda=0, alpha=0, full mask) = derpp",
        ok,
        detail,
    ));

    let mut derpp_ce = derpp;
    derpp_ce.replay = ReplayConfig {
        beta1: 1.0,
        beta2: 0.0,
        ..ReplayConfig::default()
    };
    let er = small_config(Method::Er, seed);
    let (ok, detail) = same_run(
        &train(derpp_ce, &tr, &te)?,
        &train(er.clone(), &tr, &te)?,
        true,
    );
    checks.push(check("derpp(beta1=1, beta2=0) = er", ok, detail));

    let mut er_empty = er;
    er_empty.buffer_capacity = 0;
    let sgd = small_config(Method::Sgd, seed);
    let (ok, detail) = same_run(&train(er_empty, &tr, &te)?, &train(sgd, &tr, &te)?, false);
    checks.push(check("er(buffer=0) = sgd", ok, detail));

    Ok(SuiteReport::new("equivalence", checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::EACH.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn chi_square_of_uniform_counts_is_zero() {
        assert_eq!(chi_square_uniform(&[5, 5, 5, 5]), 0.0);
        assert!((chi_square_uniform(&[6, 4]) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn masked_logits_of_full_arch_match_forward() {
        let net = Network::new(3, &[4, 4], 2, 2, 7).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, -0.4, 0.9], vec![1.0, 0.2, -0.3]]).unwrap();
        let a = masked_logits(&net, &ArchConfig::full(&net), &x);
        let b = net.forward(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn counted_params_of_small_net() {
        let net = Network::new(3, &[4], 2, 2, 0).unwrap();
        // hidden 2 units: 2*3+2, classifier 2*2+2
        assert_eq!(counted_params(&net, &ArchConfig::new(vec![1])), 14);
    }
}
