//! Sample-wise PerfGain, Interference and Transfer.
//!
//! A baseline (single-domain) model splits a test set into the samples it
//! gets right (`D_correct`) and wrong (`D_incorrect`). With `k` the MDL
//! model's correct answers inside `D_correct` and `k'` inside `D_incorrect`:
//!
//! * PerfGain     = 100 (k + k' − |D_correct|) / |D_test|
//! * Interference = 100 (|D_correct| − k) / |D_correct|
//! * Transfer     = 100 k' / |D_incorrect|

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Domain, Sample};
use crate::error::{Error, Result};
use crate::model::{MdlModel, TaskId};
use crate::nn::argmax;

/// Largest batch used for inference.
pub const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    #[serde(rename = "true")]
    pub true_label: u32,
    #[serde(rename = "pred")]
    pub pred_label: u32,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.pred_label
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    model_id: String,
    domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionLog {
    pub model_id: String,
    pub domain: String,
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    /// Rejects duplicate sample ids.
    pub fn new(model_id: impl Into<String>, domain: impl Into<String>, records: Vec<PredictionRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::format("prediction log", format!("duplicate sample id {}", r.sample_id)));
            }
        }
        Ok(Self { model_id: model_id.into(), domain: domain.into(), records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_correct(&self) -> usize {
        self.records.iter().filter(|r| r.is_correct()).count()
    }

    /// Percent correct; 0 for an empty log.
    pub fn accuracy(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            100.0 * self.num_correct() as f64 / self.records.len() as f64
        }
    }

    /// Header object line, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let header = LogHeader { model_id: self.model_id.clone(), domain: self.domain.clone() };
        let mut out = serde_json::to_string(&header).expect("serializable");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: LogHeader = match lines.next() {
            Some(l) => serde_json::from_str(l).map_err(|e| Error::format("prediction log header", e.to_string()))?,
            None => return Err(Error::format("prediction log", "empty file")),
        };
        let records = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::format("prediction log", format!("record {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<PredictionRecord>>>()?;
        Self::new(header.model_id, header.domain, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::model::checkpoint::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Predictions of head `task` on `samples`: argmax of that head's logits,
/// ties to the lowest class.
pub fn predict(
    model: &MdlModel<f32>,
    samples: &[Sample],
    task: TaskId,
    model_id: &str,
    domain: &str,
) -> Result<PredictionLog> {
    if !model.has_head(task) {
        return Err(Error::UnknownTask(task));
    }
    let mut records = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = Batch::from_samples(chunk.iter().map(|s| (s, task)), model.image_size);
        let out = model.forward(&batch.images)?;
        for (i, s) in chunk.iter().enumerate() {
            let row = out.logit_row(task, i).ok_or(Error::UnknownTask(task))?;
            records.push(PredictionRecord { sample_id: s.id.clone(), true_label: s.label, pred_label: argmax(row) as u32 });
        }
    }
    PredictionLog::new(model_id, domain, records)
}

/// Test-split predictions through the domain's own head.
pub fn predict_domain(model: &MdlModel<f32>, domain: &Domain, model_id: &str) -> Result<PredictionLog> {
    predict(model, &domain.test, domain.task_label, model_id, domain.name())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationPartition {
    pub correct_ids: BTreeSet<String>,
    pub incorrect_ids: BTreeSet<String>,
    pub total: usize,
}

pub fn partition(baseline: &PredictionLog) -> Result<EvaluationPartition> {
    if baseline.is_empty() {
        return Err(Error::invalid(format!("baseline log {} is empty", baseline.model_id)));
    }
    let (mut correct_ids, mut incorrect_ids) = (BTreeSet::new(), BTreeSet::new());
    for r in &baseline.records {
        let set = if r.is_correct() { &mut correct_ids } else { &mut incorrect_ids };
        set.insert(r.sample_id.clone());
    }
    Ok(EvaluationPartition { correct_ids, incorrect_ids, total: baseline.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub perfgain: f64,
    pub interference: f64,
    pub transfer: f64,
    pub k: usize,
    pub k_prime: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_total: usize,
    pub transfer_undefined: bool,
    pub interference_undefined: bool,
}

impl MetricReport {
    /// Builds the scores from counts; empty denominators give 0 with the
    /// matching flag set.
    pub fn from_counts(k: usize, k_prime: usize, n_correct: usize, n_incorrect: usize) -> Self {
        let n_total = n_correct + n_incorrect;
        let pct = |num: i64, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        MetricReport {
            perfgain: pct(k as i64 + k_prime as i64 - n_correct as i64, n_total),
            interference: pct(n_correct as i64 - k as i64, n_correct),
            transfer: pct(k_prime as i64, n_incorrect),
            k,
            k_prime,
            n_correct,
            n_incorrect,
            n_total,
            transfer_undefined: n_incorrect == 0,
            interference_undefined: n_correct == 0,
        }
    }

    /// `(PerfGain·n, Transfer·n_incorrect, Interference·n_correct)` as exact
    /// integers (percent units).
    pub fn scaled_numerators(&self) -> (i64, i64, i64) {
        (
            100 * (self.k as i64 + self.k_prime as i64 - self.n_correct as i64),
            100 * self.k_prime as i64,
            100 * (self.n_correct as i64 - self.k as i64),
        )
    }

    pub const CSV_HEADER: &'static str = "model_id,domain,perfgain,interference,transfer,k,k_prime,n_correct,n_incorrect,n_total,transfer_undefined,interference_undefined";

    pub fn csv_row(&self, model_id: &str, domain: &str) -> String {
        format!(
            "{model_id},{domain},{},{},{},{},{},{},{},{},{},{}",
            self.perfgain,
            self.interference,
            self.transfer,
            self.k,
            self.k_prime,
            self.n_correct,
            self.n_incorrect,
            self.n_total,
            self.transfer_undefined,
            self.interference_undefined
        )
    }
}

pub fn mdl_scores(part: &EvaluationPartition, mdl: &PredictionLog) -> Result<MetricReport> {
    if mdl.len() != part.total {
        return Err(Error::SampleMismatch(format!("baseline has {} samples, {} has {}", part.total, mdl.model_id, mdl.len())));
    }
    let (mut k, mut k_prime) = (0, 0);
    for r in &mdl.records {
        let in_correct = part.correct_ids.contains(&r.sample_id);
        if !in_correct && !part.incorrect_ids.contains(&r.sample_id) {
            return Err(Error::SampleMismatch(format!("{} not in baseline log", r.sample_id)));
        }
        if r.is_correct() {
            if in_correct {
                k += 1;
            } else {
                k_prime += 1;
            }
        }
    }
    Ok(MetricReport::from_counts(k, k_prime, part.correct_ids.len(), part.incorrect_ids.len()))
}

/// Mean and standard error of one metric over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStat {
    /// `None` when every value was excluded.
    pub mean: Option<f64>,
    /// `None` (not applicable) below two values.
    pub stderr: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

impl AggregateStat {
    pub fn from_values(values: &[f64], excluded: usize) -> Self {
        let mut v = values.to_vec();
        // sorted so that the result does not depend on input order
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
        let stderr = match mean {
            Some(m) if n >= 2 => {
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
                Some((var / n as f64).sqrt())
            }
            _ => None,
        };
        AggregateStat { mean, stderr, n, excluded }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub perfgain: AggregateStat,
    pub interference: AggregateStat,
    pub transfer: AggregateStat,
    pub trials: usize,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty group"));
    }
    let pick = |f: fn(&MetricReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        AggregateStat::from_values(&vals, reports.len() - vals.len())
    };
    Ok(AggregateReport {
        perfgain: pick(|r| Some(r.perfgain)),
        interference: pick(|r| (!r.interference_undefined).then_some(r.interference)),
        transfer: pick(|r| (!r.transfer_undefined).then_some(r.transfer)),
        trials: reports.len(),
    })
}

/// One CSV row per `(model_id, domain, report)`.
pub fn reports_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a MetricReport)>) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for (m, d, r) in rows {
        let _ = writeln!(out, "{}", r.csv_row(m, d));
    }
    out
}
