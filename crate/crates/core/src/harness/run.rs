//! Multi-seed experiment execution.

use std::path::Path;

use rayon::prelude::*;

use crate::data::{make_synthetic, read_idx, split_tasks, Dataset, Standardizer, TaskStream};
use crate::error::{Error, Result};
use crate::schedule::build_schedule;
use crate::trainer::{MetricsEvent, Trainer};

use super::config::{DataSource, ExperimentConfig};
use super::report::{RunReport, SeedResult};
use super::verify::{verify, Suite};
use super::write_atomic;

/// Training and test streams described by the data section.
pub fn prepare_streams(cfg: &ExperimentConfig) -> Result<(TaskStream, TaskStream)> {
    let d = &cfg.data;
    let (mut train, mut test): (Dataset, Dataset) = match d.source {
        DataSource::Synthetic => {
            make_synthetic(&d.synthetic_spec())?.split_holdout(d.test_per_class)?
        }
        DataSource::Idx => {
            let need = |p: &Option<std::path::PathBuf>, what: &str| {
                p.clone()
                    .ok_or_else(|| Error::Config(format!("data.{what} is required for idx input")))
            };
            (
                read_idx(
                    &need(&d.train_images, "train_images")?,
                    &need(&d.train_labels, "train_labels")?,
                    d.num_classes,
                )?,
                read_idx(
                    &need(&d.test_images, "test_images")?,
                    &need(&d.test_labels, "test_labels")?,
                    d.num_classes,
                )?,
            )
        }
    };
    if d.standardize {
        let s = Standardizer::fit(&train.inputs);
        s.apply(&mut train.inputs);
        s.apply(&mut test.inputs);
    }
    Ok((
        split_tasks(&train, cfg.train.tasks)?,
        split_tasks(&test, cfg.train.tasks)?,
    ))
}

/// One seed, start to finish, without touching the filesystem.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &TaskStream,
    test: &TaskStream,
) -> Result<(SeedResult, Vec<MetricsEvent>)> {
    let mut trainer = Trainer::new(cfg.train_config(seed), train.input_dim, train.total_classes)?;
    let outcome = trainer.run(train, test)?;
    Ok((
        SeedResult {
            seed,
            class_il: outcome.class_il,
            task_il: outcome.task_il,
            wall_ms: outcome.wall_ms,
            boundaries: outcome.boundaries,
        },
        trainer.take_events(),
    ))
}

/// Runs every seed in memory and aggregates the results.
pub fn execute(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<Vec<MetricsEvent>>)> {
    cfg.validate()?;
    let (train, test) = prepare_streams(cfg)?;
    let results = cfg
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, &train, &test))
        .collect::<Result<Vec<_>>>()?;
    let (seeds, events): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = RunReport::new(
        cfg.train.method,
        cfg.scer.capacity,
        cfg.scer.rehearsal_frequency,
        cfg.train.eval_mode,
        seeds,
        build_schedule(cfg.train.tasks, cfg.network.groups)?,
    )?;
    Ok((report, events))
}

/// Runs the experiment and writes `report.csv`, `summary.json`,
/// `schedule.csv`, `config.toml` and per-seed `metrics/seed-<s>.jsonl` under
/// the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    for name in &cfg.experiment.verify {
        let suite: Suite = name.parse()?;
        for report in verify(suite)? {
            if !report.passed {
                return Err(Error::State(format!(
                    "verification suite {} failed",
                    report.name
                )));
            }
        }
    }
    let (report, events) = execute(cfg)?;
    let out = &cfg.experiment.out_dir;
    write_outputs(out, cfg, &report, &events)?;
    Ok(report)
}

fn write_outputs(
    out: &Path,
    cfg: &ExperimentConfig,
    report: &RunReport,
    events: &[Vec<MetricsEvent>],
) -> Result<()> {
    write_atomic(
        &out.join("report.csv"),
        report.to_csv(cfg.experiment.record_wall_clock)?.as_bytes(),
    )?;
    write_atomic(&out.join("summary.json"), report.to_json()?.as_bytes())?;
    write_atomic(
        &out.join("schedule.csv"),
        report.schedule.to_csv().as_bytes(),
    )?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    for (seed, evs) in cfg.experiment.seeds.iter().zip(events) {
        let mut lines = String::new();
        for e in evs {
            lines.push_str(&serde_json::to_string(e).map_err(|e| Error::Config(e.to_string()))?);
            lines.push('\n');
        }
        write_atomic(
            &out.join("metrics").join(format!("seed-{seed}.jsonl")),
            lines.as_bytes(),
        )?;
    }
    Ok(())
}
