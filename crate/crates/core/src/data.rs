//! Labeled datasets and their split into sequential class-disjoint tasks.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Moves the last `per_class` examples of every class into a held-out set.
    /// Returns `(train, test)`.
    pub fn split_holdout(&self, per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_classes {
            let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            if idx.len() <= per_class {
                return Err(Error::Parameter(format!(
                    "class {c} has {} examples, cannot hold out {per_class}",
                    idx.len()
                )));
            }
            let cut = idx.len() - per_class;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select(&train), self.select(&test)))
    }
}

/// Per-feature affine normalization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(inputs: &Matrix) -> Self {
        let (n, d) = inputs.shape();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(inputs.row(i)) {
                *m += v;
            }
        }
        let denom = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= denom);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(inputs.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / denom).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, inputs: &mut Matrix) {
        for i in 0..inputs.rows() {
            for ((v, m), s) in inputs
                .row_mut(i)
                .iter_mut()
                .zip(&self.mean)
                .zip(&self.scale)
            {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            samples_per_class: 300,
            input_dim: 16,
            spread: 0.1,
            seed: 0,
        }
    }
}

/// Class `c` is N(μ_c, σ²I) with μ_c a seeded random direction scaled to norm 2.
/// Examples are grouped by class.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::Parameter("need at least two classes".into()));
    }
    if spec.input_dim == 0 {
        return Err(Error::Parameter("input dimension must be positive".into()));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(Error::Parameter(format!(
            "spread must be positive, got {}",
            spec.spread
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break v.into_iter().map(|x| 2.0 * x / norm).collect();
            }
        })
        .collect();
    let n = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spec.spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, spec.num_classes)
}

/// One task of the stream: the examples of a contiguous class range.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub classes: Range<usize>,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub total_classes: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Task `t` receives classes `[t·C/T, (t+1)·C/T)`, keeping dataset order.
pub fn split_tasks(dataset: &Dataset, tasks: usize) -> Result<TaskStream> {
    let classes = dataset.num_classes;
    if tasks == 0 || !classes.is_multiple_of(tasks) {
        return Err(Error::Parameter(format!(
            "{classes} classes cannot be split evenly into {tasks} tasks"
        )));
    }
    let per = classes / tasks;
    let tasks = (0..tasks)
        .map(|t| {
            let range = t * per..(t + 1) * per;
            let idx: Vec<usize> = (0..dataset.len())
                .filter(|&i| range.contains(&dataset.labels[i]))
                .collect();
            TaskData {
                classes: range,
                inputs: dataset.inputs.select_rows(&idx),
                labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        classes_per_task: per,
        input_dim: dataset.input_dim(),
        total_classes: classes,
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Parses an IDX3 unsigned-byte image file; pixels are scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    check_magic(bytes, IDX_IMAGES)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * dim {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("expected {} pixel bytes, found {}", n * dim, body.len()),
        });
    }
    let data = body[..n * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Matrix::from_vec(n, dim, data)
}

/// Parses an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("expected {n} label bytes, found {}", body.len()),
        });
    }
    Ok(body[..n].iter().map(|&b| usize::from(b)).collect())
}

pub fn read_idx(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let inputs = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if inputs.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    Dataset::new(inputs, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGES.to_be_bytes().to_vec();
        for x in [n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn tiny_spread_collapses_to_means() {
        let spec = SyntheticSpec {
            spread: 1e-300,
            samples_per_class: 4,
            ..Default::default()
        };
        let ds = make_synthetic(&spec).unwrap();
        for c in 0..10 {
            let rows: Vec<&[f64]> = (0..ds.len())
                .filter(|&i| ds.labels[i] == c)
                .map(|i| ds.inputs.row(i))
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
            let norm: f64 = rows[0].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec::default();
        assert_eq!(
            make_synthetic(&spec).unwrap(),
            make_synthetic(&spec).unwrap()
        );
        let other = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(
            make_synthetic(&other).unwrap(),
            make_synthetic(&SyntheticSpec::default()).unwrap()
        );
    }

    #[test]
    fn split_pairs_and_errors() {
        let ds = make_synthetic(&SyntheticSpec {
            samples_per_class: 3,
            ..Default::default()
        })
        .unwrap();
        let stream = split_tasks(&ds, 5).unwrap();
        for (t, task) in stream.tasks.iter().enumerate() {
            assert_eq!(task.classes, 2 * t..2 * t + 2);
            assert_eq!(task.len(), 6);
            assert!(task.labels.iter().all(|y| task.classes.contains(y)));
        }
        let joint = split_tasks(&ds, 1).unwrap();
        assert_eq!(joint.tasks[0].len(), ds.len());
        assert!(matches!(split_tasks(&ds, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn holdout_per_class() {
        let ds = make_synthetic(&SyntheticSpec {
            samples_per_class: 5,
            ..Default::default()
        })
        .unwrap();
        let (train, test) = ds.split_holdout(2).unwrap();
        assert_eq!((train.len(), test.len()), (30, 20));
        assert!(ds.split_holdout(5).is_err());
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let mut m = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&m);
        s.apply(&mut m);
        let col0: Vec<f64> = (0..3).map(|i| m[(i, 0)]).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        let var: f64 = col0.iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert!((0..3).all(|i| m[(i, 1)] == 0.0));
    }

    #[test]
    fn idx_parse() {
        let img = idx_images(2, 2, 2, &[0, 255, 51, 0, 1, 2, 3, 4]);
        let m = parse_idx_images(&img).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m[(0, 1)], 1.0);
        assert!((m[(0, 2)] - 0.2).abs() < 1e-15);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 7])).unwrap(), vec![3, 7]);
    }

    #[test]
    fn idx_errors() {
        let err = parse_idx_images(&idx_labels(&[1])).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        let truncated = idx_images(3, 2, 2, &[0; 5]);
        assert!(matches!(
            parse_idx_images(&truncated),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0]),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&idx_labels(&[1])[..9 - 1]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn read_idx_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, idx_images(2, 1, 2, &[0, 1, 2, 3])).unwrap();
        std::fs::write(&lp, idx_labels(&[0, 9])).unwrap();
        let ds = read_idx(&ip, &lp, 10).unwrap();
        assert_eq!((ds.len(), ds.input_dim()), (2, 2));
        assert!(matches!(read_idx(&ip, &lp, 5), Err(Error::Consistency(_))));
        std::fs::write(&lp, idx_labels(&[0, 1, 2])).unwrap();
        assert!(matches!(read_idx(&ip, &lp, 10), Err(Error::Consistency(_))));
    }
}
