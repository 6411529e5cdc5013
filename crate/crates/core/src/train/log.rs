//! Training log, persisted one JSON object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskId;

/// One task's loss and weight at one optimizer step. `loss` is absent when
/// the task had no samples in the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub task: TaskId,
    pub loss: Option<f64>,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub epoch: usize,
    pub domain: String,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Summary {
    steps: u64,
    wall_clock_secs: f64,
    checkpoint: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Step(StepRecord),
    Eval(EvalRecord),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Number of optimizer steps taken.
    pub num_steps: u64,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainLog {
    /// `(step, task, loss)` for every logged loss.
    pub fn loss_curve(&self) -> Vec<(u64, TaskId, f64)> {
        self.steps.iter().filter_map(|r| r.loss.map(|l| (r.step, r.task, l))).collect()
    }

    /// Test accuracy of `domain` after the last evaluated epoch.
    pub fn final_accuracy(&self, domain: &str) -> Option<f64> {
        self.evals.iter().rev().find(|e| e.domain == domain).map(|e| e.test_acc)
    }

    /// Step records of epoch `e`, then that epoch's evaluations, then a
    /// summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("serializable"));
            out.push('\n');
        };
        let mut evals = self.evals.iter().peekable();
        for r in &self.steps {
            while let Some(e) = evals.next_if(|e| e.epoch < r.epoch) {
                push(&Line::Eval(e.clone()));
            }
            push(&Line::Step(r.clone()));
        }
        for e in evals {
            push(&Line::Eval(e.clone()));
        }
        push(&Line::Summary(Summary {
            steps: self.num_steps,
            wall_clock_secs: self.wall_clock_secs,
            checkpoint: self.checkpoint.clone(),
        }));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = TrainLog::default();
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line =
                serde_json::from_str(l).map_err(|e| Error::format("training log", format!("line {}: {e}", i + 1)))?;
            match line {
                Line::Step(r) => log.steps.push(r),
                Line::Eval(e) => log.evals.push(e),
                Line::Summary(s) => {
                    log.num_steps = s.steps;
                    log.wall_clock_secs = s.wall_clock_secs;
                    log.checkpoint = s.checkpoint;
                }
            }
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::model::checkpoint::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_and_field_names() {
        let log = TrainLog {
            steps: vec![
                StepRecord { step: 0, epoch: 0, task: 0, loss: Some(2.5), lambda: 1.0, lr: 0.1 },
                StepRecord { step: 0, epoch: 0, task: 1, loss: None, lambda: 1.0, lr: 0.1 },
                StepRecord { step: 1, epoch: 1, task: 0, loss: Some(2.0), lambda: 1.0, lr: 0.1 },
            ],
            evals: vec![
                EvalRecord { epoch: 0, domain: "a".into(), test_acc: 12.5 },
                EvalRecord { epoch: 1, domain: "a".into(), test_acc: 20.0 },
            ],
            num_steps: 2,
            wall_clock_secs: 0.5,
            checkpoint: Some("x.ckpt".into()),
        };
        let text = log.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"step":0,"epoch":0,"task":0,"loss":2.5,"lambda":1.0,"lr":0.1}"#);
        assert_eq!(lines[2], r#"{"epoch":0,"domain":"a","test_acc":12.5}"#);
        assert_eq!(TrainLog::from_jsonl(&text).unwrap(), log);
        assert_eq!(log.final_accuracy("a"), Some(20.0));
        assert_eq!(log.loss_curve().len(), 2);
    }

    #[test]
    fn losses_survive_the_text_roundtrip_bit_for_bit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let steps: Vec<StepRecord> = (0..5000)
            .map(|i| StepRecord { step: i, epoch: 0, task: 0, loss: Some(rng.random::<f64>() * 3.0), lambda: rng.random(), lr: 0.1 })
            .collect();
        let log = TrainLog { steps, ..Default::default() };
        assert_eq!(TrainLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }
}
