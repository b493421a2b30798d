//! Batch-mean losses. Empty batches contribute zero.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    cross_entropy_with_probs(logits, labels).map(|(loss, _)| loss)
}

/// Cross-entropy together with the row-wise softmax, which the backward pass reuses.
pub(crate) fn cross_entropy_with_probs(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!("label {bad} with {classes} classes")));
    }
    let mut probs = Matrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &z) in probs.row_mut(n).iter_mut().zip(row) {
            *p = (z - max).exp();
            sum += *p;
        }
        for p in probs.row_mut(n) {
            *p /= sum;
        }
        total += sum.ln() + max - row[y];
    }
    let loss = if labels.is_empty() {
        0.0
    } else {
        total / labels.len() as f64
    };
    Ok((loss, probs))
}

/// Mean over rows of the squared Euclidean distance between `a` and `b`.
pub fn mse_logits(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Matrix::from_rows(&[[0.3; 10], [-2.0; 10]]).unwrap();
        let loss = cross_entropy(&logits, &[0, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_beat_uniform() {
        let logits = Matrix::from_rows(&[[0.0, 4.0, 0.0]]).unwrap();
        assert!(cross_entropy(&logits, &[1]).unwrap() < 3f64.ln());
    }

    #[test]
    fn two_class_scalar_case() {
        let logits = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let loss = cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_is_index_error() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(cross_entropy(&logits, &[3]), Err(Error::Index(_))));
    }

    #[test]
    fn mse_examples() {
        let z = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(mse_logits(&a, &z).unwrap(), 5.0);
        assert_eq!(mse_logits(&a, &a).unwrap(), 0.0);
        let a2 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(mse_logits(&a2, &Matrix::zeros(2, 2)).unwrap(), 2.5);
        assert!(matches!(
            mse_logits(&a2, &Matrix::zeros(2, 3)),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn mse_is_symmetric_and_zero_on_diagonal(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let a = Matrix::from_vec(3, 4, a).unwrap();
            let b = Matrix::from_vec(3, 4, b).unwrap();
            prop_assert_eq!(mse_logits(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(mse_logits(&a, &b).unwrap(), mse_logits(&b, &a).unwrap());
        }

        #[test]
        fn cross_entropy_is_nonnegative(
            z in proptest::collection::vec(-30.0f64..30.0, 8),
            y in 0usize..4,
        ) {
            let z = Matrix::from_vec(2, 4, z).unwrap();
            prop_assert!(cross_entropy(&z, &[y, 3 - y]).unwrap() >= 0.0);
        }
    }
}
