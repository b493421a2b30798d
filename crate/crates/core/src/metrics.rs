//! Accuracy bookkeeping for sequential evaluation.

use serde::{Deserialize, Serialize};

use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Argmax over every class logit.
    ClassIl,
    /// Argmax restricted to the true task's classes.
    TaskIl,
}

/// `R[t][τ]`: accuracy on task τ after training task t (both 0-based here).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must cover every task so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::State(format!(
                "row {} needs {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Parameter("accuracies must lie in [0, 1]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Completed tasks.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// ACC_t = (1/t) Σ_{τ≤t} R[t][τ], with `t` counted from 1.
pub fn average_accuracy(r: &AccuracyMatrix, t: usize) -> Result<f64> {
    if t == 0 || t > r.rows.len() {
        return Err(Error::State(format!(
            "accuracy row {t} not available ({} tasks evaluated)",
            r.rows.len()
        )));
    }
    let row = &r.rows[t - 1];
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// F_t = (1/(t−1)) Σ_{j<t} (best earlier accuracy on j − current accuracy on j),
/// each gap floored at zero. `t = 1` reports 0.
pub fn forgetting(r: &AccuracyMatrix, t: usize) -> Result<f64> {
    if t == 0 || t > r.rows.len() {
        return Err(Error::State(format!(
            "accuracy row {t} not available ({} tasks evaluated)",
            r.rows.len()
        )));
    }
    if t == 1 {
        return Ok(0.0);
    }
    let current = &r.rows[t - 1];
    let total: f64 = (0..t - 1)
        .map(|j| {
            let best = (j..t - 1)
                .map(|i| r.rows[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            (best - current[j]).max(0.0)
        })
        .sum();
    Ok(total / (t - 1) as f64)
}

/// Accuracy on each of the first `upto` tasks of `tasks`.
pub fn evaluate(
    net: &Network,
    tasks: &TaskStream,
    upto: usize,
    mode: EvalMode,
) -> Result<Vec<f64>> {
    tasks.tasks[..upto.min(tasks.tasks.len())]
        .iter()
        .map(|task| {
            if task.is_empty() {
                return Ok(0.0);
            }
            let logits = net.forward(&task.inputs)?;
            let range = match mode {
                EvalMode::ClassIl => 0..logits.cols(),
                EvalMode::TaskIl => task.classes.clone(),
            };
            let correct = task
                .labels
                .iter()
                .enumerate()
                .filter(|&(i, &y)| logits.argmax_in(i, range.clone()) == y)
                .count();
            Ok(correct as f64 / task.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split_tasks, SyntheticSpec};
    use crate::matrix::Matrix;
    use crate::network::{Activation, DenseLayer};

    #[test]
    fn average_accuracy_examples() {
        let r = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.7, 0.8]]).unwrap();
        assert_eq!(average_accuracy(&r, 2).unwrap(), 0.75);
        assert_eq!(average_accuracy(&r, 1).unwrap(), 0.9);
        let z = AccuracyMatrix::from_rows(vec![vec![0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(average_accuracy(&z, 2).unwrap(), 0.0);
        assert!(matches!(average_accuracy(&r, 3), Err(Error::State(_))));
    }

    #[test]
    fn forgetting_examples() {
        let r = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.7, 0.8]]).unwrap();
        assert!((forgetting(&r, 2).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(forgetting(&r, 1).unwrap(), 0.0);
        let rising =
            AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.6, 0.7], vec![0.9, 0.8, 0.4]])
                .unwrap();
        assert_eq!(forgetting(&rising, 3).unwrap(), 0.0);
    }

    #[test]
    fn rows_must_grow_by_one() {
        let mut r = AccuracyMatrix::new();
        assert!(r.push_row(vec![0.5, 0.5]).is_err());
        r.push_row(vec![0.5]).unwrap();
        assert!(r.push_row(vec![1.5, 0.2]).is_err());
    }

    /// Linear classifier that reads the label off a one-hot input.
    fn oracle_net(classes: usize) -> Network {
        let layer = DenseLayer::new(
            Matrix::identity(classes),
            vec![0.0; classes],
            Activation::Identity,
        )
        .unwrap();
        Network::from_layers(vec![layer], 1, 0).unwrap()
    }

    #[test]
    fn perfect_net_scores_one() {
        let n = 10;
        let inputs = Matrix::from_vec(
            n * 2,
            n,
            (0..n * 2)
                .flat_map(|i| (0..n).map(move |c| if c == i % n { 1.0 } else { 0.0 }))
                .collect(),
        )
        .unwrap();
        let labels = (0..n * 2).map(|i| i % n).collect();
        let ds = crate::data::Dataset::new(inputs, labels, n).unwrap();
        let stream = split_tasks(&ds, 5).unwrap();
        let net = oracle_net(n);
        for mode in [EvalMode::ClassIl, EvalMode::TaskIl] {
            assert_eq!(evaluate(&net, &stream, 5, mode).unwrap(), vec![1.0; 5]);
        }
    }

    #[test]
    fn task_il_dominates_class_il() {
        let ds = make_synthetic(&SyntheticSpec {
            samples_per_class: 50,
            ..Default::default()
        })
        .unwrap();
        let stream = split_tasks(&ds, 5).unwrap();
        for seed in 0..5 {
            let net = Network::new(16, &[16], 10, 4, seed).unwrap();
            let c = evaluate(&net, &stream, 5, EvalMode::ClassIl).unwrap();
            let t = evaluate(&net, &stream, 5, EvalMode::TaskIl).unwrap();
            assert!(c.iter().zip(&t).all(|(a, b)| a <= b));
        }
    }
}
