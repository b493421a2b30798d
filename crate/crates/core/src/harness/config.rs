//! TOML experiment configuration. Every key is optional; an empty file
//! describes the reference desk-scale experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cns::CandidateSearch;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::EvalMode;
use crate::rnd::RndConfig;
use crate::scer::{RehearsalFrequency, ReplayConfig};
use crate::trainer::{Method, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub rnd: RndSection,
    pub scer: ScerSection,
    pub cns: CnsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// When false, `wall_ms` is written as 0 so reports are byte-reproducible.
    pub record_wall_clock: bool,
    /// Verification suites to run before any training.
    pub verify: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            out_dir: PathBuf::from("runs/default"),
            seeds: (0..10).collect(),
            record_wall_clock: true,
            verify: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub seed: u64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            num_classes: 10,
            train_per_class: 5000,
            test_per_class: 1000,
            input_dim: 16,
            spread: 0.1,
            seed: 0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            standardize: true,
        }
    }
}

impl DataSection {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            samples_per_class: self.train_per_class + self.test_per_class,
            input_dim: self.input_dim,
            spread: self.spread,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub groups: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![64, 64],
            groups: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub tasks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_mode: EvalMode,
    pub full_mask: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            method: d.method,
            tasks: d.tasks,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            eval_mode: d.eval_mode,
            full_mask: d.full_mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RndSection {
    pub lambda: f64,
    pub enabled: bool,
}

impl Default for RndSection {
    fn default() -> Self {
        let d = RndConfig::default();
        RndSection {
            lambda: d.lambda,
            enabled: d.enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScerSection {
    pub capacity: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rehearsal_frequency: RehearsalFrequency,
}

impl Default for ScerSection {
    fn default() -> Self {
        let d = ReplayConfig::default();
        ScerSection {
            capacity: 200,
            alpha: 0.75,
            beta1: d.beta1,
            beta2: d.beta2,
            rehearsal_frequency: d.rehearsal_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnsSection {
    pub selection_size: usize,
    pub candidates: usize,
    pub exhaustive: bool,
}

impl Default for CnsSection {
    fn default() -> Self {
        CnsSection {
            selection_size: 256,
            candidates: 64,
            exhaustive: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: self.train.method,
            tasks: self.train.tasks,
            groups: self.network.groups,
            hidden: self.network.hidden.clone(),
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            rnd: RndConfig {
                lambda: self.rnd.lambda,
                enabled: self.rnd.enabled,
            },
            alpha: self.scer.alpha,
            replay: ReplayConfig {
                beta1: self.scer.beta1,
                beta2: self.scer.beta2,
                rehearsal_frequency: self.scer.rehearsal_frequency,
            },
            buffer_capacity: self.scer.capacity,
            selection_size: self.cns.selection_size,
            candidate_search: if self.cns.exhaustive {
                CandidateSearch::Exhaustive
            } else {
                CandidateSearch::Sampled(self.cns.candidates)
            },
            full_mask: self.train.full_mask,
            eval_mode: self.train.eval_mode,
            seed,
        }
    }

    /// Checks every parameter range before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.experiment.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {dup} listed twice")));
        }
        for suite in &self.experiment.verify {
            suite.parse::<super::verify::Suite>()?;
        }
        let d = &self.data;
        if d.num_classes < 2 {
            return Err(Error::Config("data.num_classes must be at least 2".into()));
        }
        if self.train.tasks == 0 || !d.num_classes.is_multiple_of(self.train.tasks) {
            return Err(Error::Config(format!(
                "{} classes cannot be split into {} tasks",
                d.num_classes, self.train.tasks
            )));
        }
        match d.source {
            DataSource::Synthetic => {
                if d.train_per_class == 0 || d.test_per_class == 0 {
                    return Err(Error::Config(
                        "data.train_per_class and data.test_per_class must be positive".into(),
                    ));
                }
                if !(d.spread > 0.0 && d.spread.is_finite()) || d.input_dim == 0 {
                    return Err(Error::Config(
                        "data.spread and data.input_dim must be positive".into(),
                    ));
                }
            }
            DataSource::Idx => {
                if d.train_images.is_none()
                    || d.train_labels.is_none()
                    || d.test_images.is_none()
                    || d.test_labels.is_none()
                {
                    return Err(Error::Config(
                        "idx data needs train_images, train_labels, test_images and test_labels"
                            .into(),
                    ));
                }
            }
        }
        if self.cns.candidates == 0 && !self.cns.exhaustive {
            log::warn!("cns.candidates = 0: only uniform-width subnets are considered");
        }
        self.train_config(self.experiment.seeds[0]).validate()
    }
}
