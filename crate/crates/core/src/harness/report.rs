use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cns::BoundaryRecord;
use crate::error::{Error, Result};
use crate::metrics::{average_accuracy, forgetting, AccuracyMatrix, EvalMode};
use crate::scer::RehearsalFrequency;
use crate::schedule::ScheduleState;
use crate::trainer::Method;

/// Mean with the sample standard deviation (present only for two or more values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        let mean = if n == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        let std = (n >= 2).then(|| {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Stat { mean, std }
    }

    fn percent(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * s),
            None => format!("{:.2}", 100.0 * self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub class_il: AccuracyMatrix,
    pub task_il: AccuracyMatrix,
    pub wall_ms: Vec<u64>,
    pub boundaries: Vec<BoundaryRecord>,
}

impl SeedResult {
    fn tasks(&self) -> usize {
        self.class_il.len()
    }

    fn reference(&self, mode: EvalMode) -> &AccuracyMatrix {
        match mode {
            EvalMode::ClassIl => &self.class_il,
            EvalMode::TaskIl => &self.task_il,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub buffer: usize,
    pub rehearsal_frequency: RehearsalFrequency,
    pub eval_mode: EvalMode,
    pub seeds: Vec<SeedResult>,
    /// Final-task ACC over seeds.
    pub acc_class_il: Stat,
    pub acc_task_il: Stat,
    /// Final-task forgetting under `eval_mode`.
    pub forgetting: Stat,
    pub schedule: ScheduleState,
}

impl RunReport {
    pub fn new(
        method: Method,
        buffer: usize,
        rehearsal_frequency: RehearsalFrequency,
        eval_mode: EvalMode,
        seeds: Vec<SeedResult>,
        schedule: ScheduleState,
    ) -> Result<Self> {
        let mut cil = Vec::new();
        let mut til = Vec::new();
        let mut fgt = Vec::new();
        for s in &seeds {
            let t = s.tasks();
            cil.push(average_accuracy(&s.class_il, t)?);
            til.push(average_accuracy(&s.task_il, t)?);
            fgt.push(forgetting(s.reference(eval_mode), t)?);
        }
        Ok(RunReport {
            method,
            buffer,
            rehearsal_frequency,
            eval_mode,
            acc_class_il: Stat::of(&cil),
            acc_task_il: Stat::of(&til),
            forgetting: Stat::of(&fgt),
            seeds,
            schedule,
        })
    }

    /// Per-seed, per-task rows:
    /// `method,seed,task,acc_class_il,acc_task_il,forgetting,wall_ms`.
    pub fn to_csv(&self, record_wall_clock: bool) -> Result<String> {
        let mut out =
            String::from("method,seed,task,acc_class_il,acc_task_il,forgetting,wall_ms\n");
        for s in &self.seeds {
            for t in 1..=s.tasks() {
                let wall = if record_wall_clock {
                    s.wall_ms.get(t - 1).copied().unwrap_or(0)
                } else {
                    0
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6},{:.6},{}",
                    self.method,
                    s.seed,
                    t,
                    average_accuracy(&s.class_il, t)?,
                    average_accuracy(&s.task_il, t)?,
                    forgetting(s.reference(self.eval_mode), t)?,
                    wall
                );
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Collects every `summary.json` under `dir`, sorted by path.
pub fn load_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut found = Vec::new();
    collect(dir, 0, &mut found)?;
    found.sort();
    found
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn collect(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() && depth < 4 {
            collect(&path, depth + 1, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Side-by-side comparison of runs, accuracies in percent.
pub fn render_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:>5} {:>5} {:>14} {:>14} {:>14}",
        "method", "buffer", "rf", "seeds", "class-il acc", "task-il acc", "forgetting"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>5} {:>5} {:>14} {:>14} {:>14}",
            r.method.name(),
            if r.method == Method::Sgd {
                "-".to_string()
            } else {
                r.buffer.to_string()
            },
            r.rehearsal_frequency.to_string(),
            r.seeds.len(),
            r.acc_class_il.percent(),
            r.acc_task_il.percent(),
            r.forgetting.percent()
        );
    }
    out
}
