use e2net::autodiff::Tape;
use e2net::cns::{CandidatePool, CandidateSearch, SelectionSet};
use e2net::data::{make_synthetic, SyntheticSpec};
use e2net::harness::{self, ExperimentConfig};
use e2net::matrix::Matrix;
use e2net::network::Network;
use e2net::rnd::rnd_loss_on;
use e2net::subnet::{active_units, ArchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_experiment(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        r#"
[experiment]
seeds = [0, 1]
record_wall_clock = false

[data]
num_classes = 4
train_per_class = 40
test_per_class = 10
input_dim = 8

[network]
hidden = [16, 16]
groups = 4

[train]
tasks = 2
epochs = 1
batch_size = 8

[scer]
capacity = 16

[cns]
selection_size = 16
candidates = 4
"#,
    )
    .unwrap();
    cfg.experiment.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn same_config_gives_identical_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    harness::run(&tiny_experiment(&a)).unwrap();
    harness::run(&tiny_experiment(&b)).unwrap();
    for file in [
        "report.csv",
        "summary.json",
        "schedule.csv",
        "metrics/seed-1.jsonl",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,seed,task,acc_class_il,acc_task_il,forgetting,wall_ms"
    );
    assert_eq!(lines.count(), 4);
}

#[test]
fn single_seed_single_task_sgd_has_zero_forgetting() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.experiment.seeds = vec![5];
    cfg.train.method = e2net::trainer::Method::Sgd;
    cfg.train.tasks = 1;
    let report = harness::run(&cfg).unwrap();
    assert_eq!(report.seeds.len(), 1);
    assert_eq!(report.forgetting.mean, 0.0);
    assert!(report.acc_class_il.std.is_none());
    let tables = harness::report::load_reports(dir.path()).unwrap();
    assert_eq!(tables.len(), 1);
    assert!(harness::render_table(&tables).contains("sgd"));
}

#[test]
fn invalid_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.train.tasks = 3;
    assert!(harness::run(&cfg).is_err());
    assert!(!dir.path().join("report.csv").exists());
}

// Multinomial logistic regression trained jointly by full-batch gradient
// descent, independent of the crate's network code.
#[allow(clippy::needless_range_loop)]
fn linear_probe_accuracy(x: &Matrix, y: &[usize], classes: usize) -> f64 {
    let (n, d) = x.shape();
    let mut w = vec![vec![0.0; d + 1]; classes];
    for _ in 0..300 {
        let mut grad = vec![vec![0.0; d + 1]; classes];
        for i in 0..n {
            let row = x.row(i);
            let z: Vec<f64> = w
                .iter()
                .map(|wc| wc[d] + row.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / s - f64::from(u8::from(c == y[i]));
                for k in 0..d {
                    grad[c][k] += g * row[k];
                }
                grad[c][d] += g;
            }
        }
        for c in 0..classes {
            for k in 0..=d {
                w[c][k] -= 0.5 * grad[c][k] / n as f64;
            }
        }
    }
    let correct = (0..n)
        .filter(|&i| {
            let row = x.row(i);
            let best = (0..classes)
                .max_by(|&a, &b| {
                    let za = w[a][d] + row.iter().zip(&w[a]).map(|(p, q)| p * q).sum::<f64>();
                    let zb = w[b][d] + row.iter().zip(&w[b]).map(|(p, q)| p * q).sum::<f64>();
                    za.total_cmp(&zb)
                })
                .unwrap();
            best == y[i]
        })
        .count();
    correct as f64 / n as f64
}

#[test]
fn synthetic_blobs_are_linearly_separable() {
    let data = make_synthetic(&SyntheticSpec {
        num_classes: 10,
        samples_per_class: 100,
        input_dim: 16,
        spread: 0.1,
        seed: 4,
    })
    .unwrap();
    let acc = linear_probe_accuracy(&data.inputs, &data.labels, 10);
    assert!(acc > 0.95, "linear probe accuracy {acc}");
}

fn pool_with(archs: usize) -> (Network, CandidatePool) {
    let net = Network::new(4, &[8, 8], 3, 4, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pool = CandidatePool::new();
    for b in 1..=archs {
        let x =
            Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        pool.boundary_update(
            b,
            &net,
            4,
            &SelectionSet::new(x).unwrap(),
            CandidateSearch::Sampled(4),
            &mut rng,
        )
        .unwrap();
    }
    (net, pool)
}

#[test]
fn pool_sampling_is_uniform() {
    let (_, pool) = pool_with(5);
    let m = pool.archs().len();
    let draws = 10_000;
    let mut counts = vec![0usize; m];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..draws {
        let a = pool.sample(&mut rng).unwrap();
        let i = pool
            .archs()
            .iter()
            .position(|p| std::ptr::eq(p, a))
            .unwrap();
        counts[i] += 1;
    }
    let p = 1.0 / m as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!(
            (c as f64 - draws as f64 * p).abs() <= 4.0 * sigma,
            "count {c}"
        );
    }
}

#[test]
fn distillation_gradient_stays_inside_the_slice() {
    let (net, _) = pool_with(0);
    let mut teacher = net.clone();
    for layer in teacher.layers_mut() {
        for (i, w) in layer.weights.data_mut().iter_mut().enumerate() {
            *w += 0.05 * (i as f64).cos();
        }
    }
    let arch = ArchConfig::new(vec![2, 3]);
    let x = Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let mut tape = Tape::new(&net);
    let xv = tape.constant(x);
    let loss = rnd_loss_on(&mut tape, &teacher, &arch, xv).unwrap();
    assert!(tape.scalar(loss) > 0.0);
    let grads = tape.backward(loss).unwrap();

    let rows = [active_units(8, 2, 4), active_units(8, 3, 4), 3];
    let cols = [4, rows[0], rows[1]];
    for (l, g) in grads.layers.iter().enumerate() {
        for r in 0..g.weights.rows() {
            for c in 0..g.weights.cols() {
                if r >= rows[l] || c >= cols[l] {
                    assert_eq!(g.weights[(r, c)], 0.0, "layer {l} ({r},{c})");
                }
            }
            if r >= rows[l] {
                assert_eq!(g.bias[r], 0.0);
            }
        }
    }
    assert!(grads.layers[1].weights[(0, 0)] != 0.0 || grads.layers[2].weights[(0, 0)] != 0.0);
}
