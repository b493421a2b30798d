//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use e2net::autodiff::Tape;
use e2net::cns::{select_representative, CandidateSearch, SelectionSet};
use e2net::data::TaskStream;
use e2net::harness::run::execute;
use e2net::harness::verify::{small_config, small_streams};
use e2net::harness::{load_checkpoint, save_checkpoint, ExperimentConfig, RunReport};
use e2net::loss::{cross_entropy, mse_logits};
use e2net::matrix::Matrix;
use e2net::metrics::{average_accuracy, forgetting, AccuracyMatrix};
use e2net::network::Network;
use e2net::rnd::{rnd_loss_on, RndConfig};
use e2net::scer::{
    minibatch_loss, retention_probability, Minibatch, Placement, RehearsalFrequency, ReplayConfig,
    ScerReservoir,
};
use e2net::schedule::build_schedule;
use e2net::subnet::{slice_forward, ArchConfig};
use e2net::trainer::{Method, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn ac1_schedule() -> Outcome {
    let mut worst: f64 = 0.0;
    for (n, g) in [(1usize, 8usize), (2, 8), (5, 10), (10, 64), (20, 64)] {
        let s = ok(build_schedule(n, g))?;
        ensure(
            s.g_groups.len() == n,
            format!("N={n}: {} entries", s.g_groups.len()),
        )?;
        ensure(
            s.g_groups[n - 1] == g,
            format!("N={n} G={g}: g_N = {}", s.g_groups[n - 1]),
        )?;
        ensure(
            s.g_groups.windows(2).all(|w| w[0] <= w[1]),
            format!("N={n} G={g}: not non-decreasing {:?}", s.g_groups),
        )?;
        // Cosine-annealed sizes straight from their definition.
        let nf = n as f64;
        let denom: f64 = (0..n)
            .map(|t| 1.0 + (t as f64 * std::f64::consts::PI / nf).cos())
            .sum();
        let r = 2.0 * g as f64 / denom;
        let oracle: f64 = (1..=n)
            .map(|t| 0.5 * r * (1.0 + ((t - 1) as f64 * std::f64::consts::PI / nf).cos()))
            .sum();
        let lib: f64 = s.s_raw.iter().sum();
        ensure(
            (oracle - g as f64).abs() <= 1e-9,
            format!("oracle sum {oracle}"),
        )?;
        ensure(
            (lib - g as f64).abs() <= 1e-9,
            format!("N={n} G={g}: sum s = {lib}"),
        )?;
        worst = worst.max((lib - g as f64).abs());
    }
    Ok(format!(
        "5 (N,G) pairs exact, max |sum s - G| = {worst:.1e}"
    ))
}

fn ac2_scer() -> Outcome {
    const B: usize = 20;
    const K: usize = 200;
    const TRIALS: usize = 200_000;
    let run = |ratio: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = [0u64; B];
        let mut slots = [0u64; B];
        for _ in 0..TRIALS {
            let mut r = ScerReservoir::new(B, 0.75);
            for item in 0..K {
                if let Placement::Replaced(j) = r.offer(item, ratio, &mut rng) {
                    slots[j] += 1;
                }
            }
            for &item in r.entries() {
                if item < B {
                    kept[item] += 1;
                }
            }
        }
        (kept.map(|k| k as f64 / TRIALS as f64), slots)
    };

    let (plain, slots) = run(0.0, 1);
    let target = B as f64 / K as f64;
    let dev_a = plain.iter().map(|p| (p - target).abs()).fold(0.0, f64::max);
    ensure(
        dev_a <= 0.01,
        format!("(a) deviation {dev_a:.4} from {target}"),
    )?;

    // Survival of an initial item: at step n it is evicted with probability
    // (1/n)·exp(−αρ).
    let closed: f64 = (B + 1..=K)
        .map(|n| 1.0 - (-0.75f64 * 0.5).exp() / n as f64)
        .product();
    let lib = ok(retention_probability(B, K, &[0.5; K - B], 0.75))?;
    ensure(
        (closed - lib).abs() < 1e-12,
        format!("retention_probability {lib} vs {closed}"),
    )?;
    let (damped, _) = run(0.5, 2);
    let dev_b = damped.iter().map(|p| (p - lib).abs()).fold(0.0, f64::max);
    ensure(
        dev_b <= 0.01,
        format!("(b) deviation {dev_b:.4} from {lib:.4}"),
    )?;

    let total: u64 = slots.iter().sum();
    let expected = total as f64 / B as f64;
    let chi2: f64 = slots
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dof = (B - 1) as f64;
    let limit = dof + 4.0 * (2.0 * dof).sqrt();
    ensure(chi2 < limit, format!("(c) chi2 {chi2:.2} >= {limit:.2}"))?;
    Ok(format!(
        "(a) dev {dev_a:.4}, (b) dev {dev_b:.4} from {lib:.4}, (c) chi2 {chi2:.1} < {limit:.1}"
    ))
}

fn cell(net: &mut Network, l: usize, r: usize, c: usize) -> &mut f64 {
    let layer = &mut net.layers_mut()[l];
    if c < layer.weights.cols() {
        &mut layer.weights[(r, c)]
    } else {
        &mut layer.bias[r]
    }
}

/// Largest relative gap between `grads` and central differences of `value`.
fn fd_gap(
    net: &Network,
    grads: &e2net::autodiff::Gradients,
    value: &dyn Fn(&Network) -> f64,
) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.shape();
        for r in 0..rows {
            for c in 0..=cols {
                let analytic = if c < cols {
                    grads.layers[l].weights[(r, c)]
                } else {
                    grads.layers[l].bias[r]
                };
                let original = *cell(&mut probe, l, r, c);
                *cell(&mut probe, l, r, c) = original + H;
                let up = value(&probe);
                *cell(&mut probe, l, r, c) = original - H;
                let down = value(&probe);
                *cell(&mut probe, l, r, c) = original;
                let numeric = (up - down) / (2.0 * H);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn ac3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = Network::new(10, &[16, 16], 5, 4, 3).unwrap();
    let x = random_matrix(7, 10, &mut rng);
    let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..5)).collect();
    let mut teacher = net.clone();
    for layer in teacher.layers_mut() {
        for w in layer.weights.data_mut() {
            *w += rng.random_range(-0.2..0.2);
        }
    }
    let arch = ArchConfig::new(vec![3, 2]);
    let mem = Minibatch {
        inputs: random_matrix(6, 10, &mut rng),
        labels: (0..6).map(|_| rng.random_range(0..5)).collect(),
        logits: random_matrix(6, 5, &mut rng),
    };
    let cfg = ReplayConfig::default();

    let mut tape = Tape::new(&net);
    let xv = tape.constant(x.clone());
    let z = ok(tape.forward(xv))?;
    let ce = ok(tape.cross_entropy(z, &labels))?;
    let g_ce = ok(tape.backward(ce))?;
    let e_ce = fd_gap(&net, &g_ce, &|n| {
        cross_entropy(&n.forward(&x).unwrap(), &labels).unwrap()
    });

    let mut tape = Tape::new(&net);
    let xv = tape.constant(x.clone());
    let rnd = ok(rnd_loss_on(&mut tape, &teacher, &arch, xv))?;
    let g_rnd = ok(tape.backward(rnd))?;
    let target = slice_forward(&teacher, &arch, &x).unwrap();
    let e_rnd = fd_gap(&net, &g_rnd, &|n| {
        mse_logits(&slice_forward(n, &arch, &x).unwrap(), &target).unwrap()
    });

    let mut tape = Tape::new(&net);
    let rep = ok(ScerReservoir::replay_loss_on(&mut tape, &mem, &cfg))?.ok_or("no replay term")?;
    let g_rep = ok(tape.backward(rep))?;
    let e_rep = fd_gap(&net, &g_rep, &|n| minibatch_loss(n, &mem, &cfg).unwrap());

    let worst = e_ce.max(e_rnd).max(e_rep);
    let msg = format!("max rel err CE {e_ce:.1e}, RND {e_rnd:.1e}, replay {e_rep:.1e}");
    ensure(worst < 1e-4, msg.clone())?;
    Ok(msg)
}

fn ac4_slicing_and_freeze() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Network::new(12, &[64, 64], 10, 8, 2).unwrap();
    let x = random_matrix(33, 12, &mut rng);
    let full = ok(slice_forward(&net, &ArchConfig::full(&net), &x))?;
    let plain = ok(net.forward(&x))?;
    let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(
        bits(&full) == bits(&plain),
        "full-width slice differs from forward",
    )?;

    let streams = small_streams(8).unwrap();
    let mut cfg = small_config(Method::E2net, 8);
    cfg.epochs = 12;
    let mut t = ok(Trainer::new(
        cfg,
        streams.0.input_dim,
        streams.0.total_classes,
    ))?;
    let g1 = t.schedule().g_groups[0];
    ensure(
        g1 < t.config().groups,
        format!("first search space {g1} is already full"),
    )?;
    let before = t.network().clone();
    for _ in 0..100 {
        ok(t.step(&streams.0, &streams.1))?;
    }
    ensure(
        t.current_task() == 0,
        "left the first task before 100 steps",
    )?;
    let after = t.network();
    let g = t.config().groups;
    let mut frozen = 0usize;
    let mut moved = false;
    for l in 0..before.num_hidden() {
        let (a, b) = (&before.layers()[l], &after.layers()[l]);
        let rows = a.weights.rows();
        let active = (rows * g1).div_ceil(g);
        for r in 0..rows {
            let same = a
                .weights
                .row(r)
                .iter()
                .zip(b.weights.row(r))
                .all(|(p, q)| p.to_bits() == q.to_bits())
                && a.bias[r].to_bits() == b.bias[r].to_bits();
            if r >= active {
                ensure(same, format!("frozen row {r} of layer {l} changed"))?;
                frozen += a.weights.cols() + 1;
            } else {
                moved |= !same;
            }
        }
    }
    ensure(moved, "no trainable parameter moved")?;
    Ok(format!("slice bitwise equal; {frozen} frozen parameters unchanged over 100 steps (g_1 = {g1} of {g})"))
}

/// Subnet logits computed on the full network with inactive hidden units
/// zeroed after the nonlinearity.
fn masked(net: &Network, arch: &[usize], x: &Matrix) -> Matrix {
    let g = net.groups();
    let n = net.layers().len();
    let mut h = x.clone();
    for (l, layer) in net.layers().iter().enumerate() {
        let out = layer.weights.rows();
        let keep = if l + 1 < n {
            (out * arch[l]).div_ceil(g)
        } else {
            out
        };
        let mut next = Matrix::zeros(h.rows(), out);
        for i in 0..h.rows() {
            for u in 0..out {
                let mut v = layer.bias[u];
                for k in 0..h.cols() {
                    v += layer.weights[(u, k)] * h[(i, k)];
                }
                next[(i, u)] = if u >= keep {
                    0.0
                } else if l + 1 < n {
                    v.max(0.0)
                } else {
                    v
                };
            }
        }
        h = next;
    }
    h
}

fn oracle_pick(net: &Network, g_t: usize, x: &Matrix) -> Vec<usize> {
    let g = net.groups();
    let full = masked(net, &[g, g], x);
    let mut scored = Vec::new();
    for a in 1..=g_t {
        for b in 1..=g_t {
            if a == g && b == g && g_t > 1 {
                continue;
            }
            let z = masked(net, &[a, b], x);
            let d = full
                .data()
                .iter()
                .zip(z.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / x.rows() as f64;
            // Active parameters, layer by layer: rows × (fan-in + bias).
            let widths = net.hidden_widths();
            let h1 = (widths[0] * a).div_ceil(g);
            let h2 = (widths[1] * b).div_ceil(g);
            let params = h1 * (net.input_dim() + 1) + h2 * (h1 + 1) + net.num_classes() * (h2 + 1);
            let score = (params as f64 / net.num_params() as f64).exp() * d;
            scored.push((score, params, vec![a, b]));
        }
    }
    scored.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    scored.swap_remove(0).2
}

fn ac5_cns() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ties = 0;
    for i in 0..24u64 {
        let mut net = Network::new(5, &[8, 12], 3, 4, 100 + i).unwrap();
        if i >= 20 {
            // Only the first group carries signal: every subnet ties at zero.
            ties += 1;
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                let (rows, cols) = layer.weights.shape();
                for r in 0..rows {
                    for c in 0..cols {
                        if (l < 2 && r >= rows / 4) || (l > 0 && c >= cols / 4) {
                            layer.weights[(r, c)] = 0.0;
                        }
                    }
                    if l < 2 && r >= rows / 4 {
                        layer.bias[r] = 0.0;
                    }
                }
            }
        }
        let g_t = if i < 20 { 4 - (i as usize % 4) } else { 4 };
        let x = random_matrix(20, 5, &mut rng);
        let sel = ok(SelectionSet::new(x.clone()))?;
        let chosen = ok(select_representative(
            &net,
            g_t,
            &sel,
            CandidateSearch::Exhaustive,
            &mut rng,
        ))?;
        let expected = oracle_pick(&net, g_t, &x);
        ensure(
            chosen.arch.groups() == expected.as_slice(),
            format!(
                "net {i} g_t={g_t}: picked {} but oracle {:?}",
                chosen.arch, expected
            ),
        )?;
        if i >= 20 {
            ensure(
                expected == vec![1, 1],
                format!("tie-break picked {expected:?}"),
            )?;
        }
    }
    Ok(format!(
        "20 random nets and {ties} all-tied nets match the brute-force argmin"
    ))
}

fn trained(cfg: TrainConfig, s: &(TaskStream, TaskStream)) -> Result<Trainer, String> {
    let mut t = ok(Trainer::new(cfg, s.0.input_dim, s.0.total_classes))?;
    ok(t.run(&s.0, &s.1))?;
    Ok(t)
}

fn identical(a: &Trainer, b: &Trainer, what: &str) -> Result<(), String> {
    ensure(
        a.network() == b.network(),
        format!("{what}: networks differ"),
    )?;
    ensure(
        a.class_il() == b.class_il() && a.task_il() == b.task_il(),
        format!("{what}: accuracy matrices differ"),
    )
}

fn ac6_degeneracy() -> Outcome {
    let s = small_streams(13).unwrap();
    let base = |method| {
        let mut c = small_config(method, 13);
        c.tasks = 2;
        c.epochs = 2;
        c
    };
    let mut e2 = base(Method::E2net);
    e2.rnd = RndConfig {
        lambda: 0.0,
        enabled: true,
    };
    e2.alpha = 0.0;
    e2.full_mask = true;
    let derpp = trained(base(Method::Derpp), &s)?;
    let e2 = trained(e2, &s)?;
    identical(&e2, &derpp, "e2net vs derpp")?;
    ensure(
        e2.buffer().entries() == derpp.buffer().entries()
            && e2.buffer().seen() == derpp.buffer().seen(),
        "e2net vs derpp: buffer contents differ",
    )?;

    let mut d = base(Method::Derpp);
    d.replay.beta1 = 1.0;
    d.replay.beta2 = 0.0;
    let d = trained(d, &s)?;
    let er = trained(base(Method::Er), &s)?;
    identical(&d, &er, "derpp vs er")?;

    let mut er0 = base(Method::Er);
    er0.buffer_capacity = 0;
    let er0 = trained(er0, &s)?;
    let sgd = trained(base(Method::Sgd), &s)?;
    identical(&er0, &sgd, "er(0) vs sgd")?;
    Ok("e2net→derpp→er→sgd reproduced bitwise over 2 tasks × 2 epochs".into())
}

fn experiment(method: Method, rf: u32) -> Result<RunReport, String> {
    let mut cfg = ok(ExperimentConfig::from_toml(""))?;
    cfg.train.method = method;
    cfg.scer.rehearsal_frequency = ok(RehearsalFrequency::every(rf))?;
    ok(execute(&cfg)).map(|(r, _)| r)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn ac7_desk_scale(cache: &mut Vec<(Method, u32, RunReport)>) -> Outcome {
    for m in [Method::Sgd, Method::Er, Method::Derpp, Method::E2net] {
        let r = experiment(m, 1)?;
        ensure(r.seeds.len() == 10, "expected 10 seeds")?;
        cache.push((m, 1, r));
    }
    let acc = |m| {
        cache
            .iter()
            .find(|c| c.0 == m && c.1 == 1)
            .unwrap()
            .2
            .acc_class_il
            .mean
    };
    let fgt = |m| {
        cache
            .iter()
            .find(|c| c.0 == m && c.1 == 1)
            .unwrap()
            .2
            .forgetting
            .mean
    };
    let gain = acc(Method::E2net) - acc(Method::Sgd);
    let less = fgt(Method::Sgd) - fgt(Method::E2net);
    let msg = format!(
        "ACC5 e2net {} sgd {} er {} derpp {}; F5 e2net {} sgd {}",
        pct(acc(Method::E2net)),
        pct(acc(Method::Sgd)),
        pct(acc(Method::Er)),
        pct(acc(Method::Derpp)),
        pct(fgt(Method::E2net)),
        pct(fgt(Method::Sgd))
    );
    ensure(
        gain >= 0.15,
        format!("gain over sgd {} < 15 points; {msg}", pct(gain)),
    )?;
    ensure(
        less >= 0.15,
        format!("forgetting reduction {} < 15 points; {msg}", pct(less)),
    )?;
    ensure(
        acc(Method::E2net) >= acc(Method::Er),
        format!("e2net below er; {msg}"),
    )?;
    Ok(msg)
}

fn ac8_rehearsal_frequency(cache: &mut Vec<(Method, u32, RunReport)>) -> Outcome {
    for m in [Method::Derpp, Method::E2net] {
        if !cache.iter().any(|c| c.0 == m && c.1 == 1) {
            cache.push((m, 1, experiment(m, 1)?));
        }
        for rf in [2, 4] {
            cache.push((m, rf, experiment(m, rf)?));
        }
    }
    let acc = |m, rf| {
        cache
            .iter()
            .find(|c| c.0 == m && c.1 == rf)
            .unwrap()
            .2
            .acc_class_il
            .mean
    };
    let drop = |m| acc(m, 1) - acc(m, 4);
    let msg = format!(
        "e2net ACC5 {}/{}/{} drop {}; derpp {}/{}/{} drop {}",
        pct(acc(Method::E2net, 1)),
        pct(acc(Method::E2net, 2)),
        pct(acc(Method::E2net, 4)),
        pct(drop(Method::E2net)),
        pct(acc(Method::Derpp, 1)),
        pct(acc(Method::Derpp, 2)),
        pct(acc(Method::Derpp, 4)),
        pct(drop(Method::Derpp))
    );
    ensure(
        drop(Method::E2net) <= 0.10,
        format!("e2net drop above 10 points; {msg}"),
    )?;
    ensure(
        drop(Method::E2net) <= drop(Method::Derpp),
        format!("e2net drops more than derpp; {msg}"),
    )?;
    Ok(msg)
}

fn ac9_metrics() -> Outcome {
    let r = ok(AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.7, 0.8]]))?;
    let acc = ok(average_accuracy(&r, 2))?;
    let f = ok(forgetting(&r, 2))?;
    ensure(acc == 0.75, format!("ACC2 = {acc}"))?;
    ensure(
        f == 0.9 - 0.7 && (f - 0.2).abs() <= f64::EPSILON,
        format!("F2 = {f}"),
    )?;
    Ok(format!("ACC2 = {acc}, F2 = {f:.15}"))
}

fn ac10_checkpoint() -> Outcome {
    let s = small_streams(2).unwrap();
    let cfg = small_config(Method::E2net, 29);
    let mut straight = ok(Trainer::new(cfg.clone(), s.0.input_dim, s.0.total_classes))?;
    ok(straight.run(&s.0, &s.1))?;

    let mut first = ok(Trainer::new(cfg, s.0.input_dim, s.0.total_classes))?;
    while first.steps() < 26 {
        ok(first.step(&s.0, &s.1))?;
    }
    ensure(
        !first.pool().is_empty(),
        "checkpoint taken before the first boundary",
    )?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("mid.ckpt");
    ok(save_checkpoint(&first, &path))?;
    let mut resumed = ok(load_checkpoint(&path))?;
    while ok(resumed.step(&s.0, &s.1))? {}
    identical(&straight, &resumed, "resumed vs uninterrupted")?;
    ensure(straight.buffer() == resumed.buffer(), "buffers differ")?;
    ensure(straight.pool() == resumed.pool(), "pools differ")?;
    Ok(format!(
        "resumed at step 26 of {}, final state bitwise equal",
        straight.steps()
    ))
}

fn main() -> ExitCode {
    let mut cache = Vec::new();
    type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;
    let cache_ref = std::cell::RefCell::new(&mut cache);
    let criteria: Vec<(&str, Duration, Check)> = vec![
        (
            "AC1 schedule exactness",
            Duration::from_secs(1),
            Box::new(ac1_schedule),
        ),
        (
            "AC2 SCER retention theorem",
            Duration::from_secs(60),
            Box::new(ac2_scer),
        ),
        (
            "AC3 gradient fidelity",
            Duration::from_secs(30),
            Box::new(ac3_gradients),
        ),
        (
            "AC4 slicing and freeze",
            Duration::from_secs(5),
            Box::new(ac4_slicing_and_freeze),
        ),
        ("AC5 CNS oracle", Duration::from_secs(10), Box::new(ac5_cns)),
        (
            "AC6 degeneracy chain",
            Duration::from_secs(60),
            Box::new(ac6_degeneracy),
        ),
        (
            "AC7 desk-scale continual learning",
            Duration::from_secs(600),
            Box::new(|| ac7_desk_scale(&mut cache_ref.borrow_mut())),
        ),
        (
            "AC8 rehearsal-frequency robustness",
            Duration::from_secs(1200),
            Box::new(|| ac8_rehearsal_frequency(&mut cache_ref.borrow_mut())),
        ),
        (
            "AC9 metrics arithmetic",
            Duration::from_secs(1),
            Box::new(ac9_metrics),
        ),
        (
            "AC10 checkpoint fidelity",
            Duration::from_secs(30),
            Box::new(ac10_checkpoint),
        ),
    ];
    let mut failed = 0;
    for (name, budget, mut check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(&mut check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let took = start.elapsed();
        let result = result.and_then(|m| {
            if took <= budget {
                Ok(m)
            } else {
                Err(format!("{m}; took {took:.1?} over budget {budget:?}"))
            }
        });
        match result {
            Ok(m) => println!("PASS {name} ({took:.1?}): {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL {name} ({took:.1?}): {m}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
