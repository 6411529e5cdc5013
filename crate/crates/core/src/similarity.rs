//! Penultimate-layer representations on the probe set and linear CKA.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ProbeSet;
use crate::error::{Error, Result};
use crate::metrics::EVAL_BATCH;
use crate::model::{MdlModel, WidthConfig};

/// `N × d` features; row `i` belongs to `sample_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    pub model_id: String,
    pub width: Option<WidthConfig>,
    pub sample_ids: Vec<String>,
    pub dim: usize,
    /// Row-major.
    pub features: Vec<f64>,
}

impl RepresentationMatrix {
    pub fn new(model_id: impl Into<String>, sample_ids: Vec<String>, dim: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != sample_ids.len() * dim {
            return Err(Error::Shape(format!("{} values for {} rows of width {dim}", features.len(), sample_ids.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("representation contains non-finite values"));
        }
        Ok(Self { model_id: model_id.into(), width: None, sample_ids, dim, features })
    }

    pub fn rows(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Header `sample_id,f0,…`; values rounded to 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id");
        for j in 0..self.dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for (i, id) in self.sample_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                let _ = write!(out, ",{}", round_sig9(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(model_id: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::format("representation csv", "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"sample_id") || cols[1..].iter().enumerate().any(|(j, c)| *c != format!("f{j}")) {
            return Err(Error::format("representation csv", "header must be sample_id,f0,f1,…"));
        }
        let dim = cols.len() - 1;
        let (mut ids, mut features) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != dim + 1 {
                return Err(Error::format("representation csv", format!("row {} has {} columns", n + 1, parts.len())));
            }
            ids.push(parts[0].to_string());
            for p in &parts[1..] {
                features.push(p.parse::<f64>().map_err(|e| Error::format("representation csv", format!("row {}: {e}", n + 1)))?);
            }
        }
        Self::new(model_id, ids, dim, features)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::model::checkpoint::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read(model_id: impl Into<String>, path: &Path) -> Result<Self> {
        Self::from_csv(model_id, &std::fs::read_to_string(path)?)
    }
}

fn round_sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Pooled features of every probe image, in probe order.
pub fn extract_representations(model: &MdlModel<f32>, probe: &ProbeSet, model_id: &str) -> Result<RepresentationMatrix> {
    extract_in_batches(model, probe, model_id, EVAL_BATCH)
}

/// As [`extract_representations`] with an explicit batch size (capped at 512).
pub fn extract_in_batches(
    model: &MdlModel<f32>,
    probe: &ProbeSet,
    model_id: &str,
    batch_size: usize,
) -> Result<RepresentationMatrix> {
    if probe.is_empty() {
        return Err(Error::invalid("probe set is empty"));
    }
    if probe.image_size != model.image_size {
        return Err(Error::Shape(format!("probe images are {}px, model expects {}px", probe.image_size, model.image_size)));
    }
    let mut features = Vec::with_capacity(probe.len() * model.feature_dim());
    for batch in probe.batches(batch_size.clamp(1, EVAL_BATCH)) {
        let out = model.forward(&batch.images)?;
        features.extend(out.features.iter().map(|&v| f64::from(v)));
    }
    let mut m = RepresentationMatrix::new(model_id, probe.sample_ids(), model.feature_dim(), features)?;
    m.width = Some(model.width);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub model_pair: (String, String),
    pub width: Option<WidthConfig>,
}

/// Column-centred copy.
fn centered(m: &RepresentationMatrix) -> Vec<f64> {
    let (n, d) = (m.rows(), m.dim);
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (a, v) in mean.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut out = m.features.clone();
    for row in out.chunks_mut(d) {
        for (v, mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    out
}

/// `‖AᵀB‖²_F` for row-major `n × da` and `n × db`.
fn cross_norm_sq(a: &[f64], da: usize, b: &[f64], db: usize) -> f64 {
    let n = if da == 0 { 0 } else { a.len() / da };
    let mut prod = vec![0.0; da * db];
    for i in 0..n {
        let (ra, rb) = (&a[i * da..(i + 1) * da], &b[i * db..(i + 1) * db]);
        for (p, &x) in ra.iter().enumerate() {
            let dst = &mut prod[p * db..(p + 1) * db];
            for (q, &y) in rb.iter().enumerate() {
                dst[q] += x * y;
            }
        }
    }
    prod.iter().map(|v| v * v).sum()
}

/// Linear CKA `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centred features.
pub fn linear_cka(x: &RepresentationMatrix, y: &RepresentationMatrix) -> Result<SimilarityScore> {
    if x.sample_ids != y.sample_ids {
        return Err(Error::SampleMismatch(format!("{} and {} rows are not in the same order", x.model_id, y.model_id)));
    }
    if x.rows() < 2 {
        return Err(Error::invalid("linear CKA needs at least two samples"));
    }
    // A fixed operand order makes the score exactly symmetric.
    let (a, b) = if (x.dim, &x.features) <= (y.dim, &y.features) { (x, y) } else { (y, x) };
    let (ca, cb) = (centered(a), centered(b));
    let saa = cross_norm_sq(&ca, a.dim, &ca, a.dim);
    let sbb = cross_norm_sq(&cb, b.dim, &cb, b.dim);
    if saa == 0.0 || sbb == 0.0 {
        let which = if saa == 0.0 { &a.model_id } else { &b.model_id };
        return Err(Error::Undefined(format!("{which} has zero variance; CKA is undefined")));
    }
    let sab = cross_norm_sq(&ca, a.dim, &cb, b.dim);
    Ok(SimilarityScore {
        value: sab / (saa.sqrt() * sbb.sqrt()),
        model_pair: (x.model_id.clone(), y.model_id.clone()),
        width: x.width,
    })
}

/// Symmetric per-width table over domains, mean and sample std over
/// matched trials (trial `i` of one domain against trial `i` of another).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub domains: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub trials: usize,
}

impl SimilarityTable {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.domains.iter().position(|d| d == a)?;
        let j = self.domains.iter().position(|d| d == b)?;
        Some(self.mean[i][j])
    }

    fn matrix_csv(&self, m: &[Vec<f64>]) -> String {
        let mut out = String::from("domain");
        for d in &self.domains {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (d, row) in self.domains.iter().zip(m) {
            out.push_str(d);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn mean_csv(&self) -> String {
        self.matrix_csv(&self.mean)
    }

    pub fn std_csv(&self) -> String {
        self.matrix_csv(&self.std)
    }
}

/// `reps` holds, per domain, one representation matrix per trial.
pub fn similarity_table(reps: &[(String, Vec<RepresentationMatrix>)]) -> Result<SimilarityTable> {
    if reps.len() < 2 {
        return Err(Error::invalid("similarity table needs at least two models"));
    }
    let trials = reps[0].1.len();
    if trials == 0 || reps.iter().any(|(_, r)| r.len() != trials) {
        return Err(Error::invalid("every domain needs the same non-zero number of trials"));
    }
    let k = reps.len();
    let mut mean = vec![vec![1.0; k]; k];
    let mut std = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let vals = (0..trials)
                .map(|t| linear_cka(&reps[i].1[t], &reps[j].1[t]).map(|s| s.value))
                .collect::<Result<Vec<f64>>>()?;
            let m = vals.iter().sum::<f64>() / trials as f64;
            let s = if trials > 1 {
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (trials - 1) as f64).sqrt()
            } else {
                0.0
            };
            mean[i][j] = m;
            mean[j][i] = m;
            std[i][j] = s;
            std[j][i] = s;
        }
    }
    Ok(SimilarityTable { domains: reps.iter().map(|(d, _)| d.clone()).collect(), mean, std, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(id: &str, n: usize, d: usize, seed: u64) -> RepresentationMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        RepresentationMatrix::new(id, (0..n).map(|i| format!("s{i}")).collect(), d, f).unwrap()
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let x = random("x", 50, 6, 1);
        let y = random("y", 50, 4, 2);
        assert!((linear_cka(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(linear_cka(&x, &y).unwrap().value, linear_cka(&y, &x).unwrap().value);
    }

    #[test]
    fn errors() {
        let x = random("x", 10, 3, 1);
        let mut y = random("y", 10, 3, 2);
        y.sample_ids.swap(0, 1);
        assert!(matches!(linear_cka(&x, &y), Err(Error::SampleMismatch(_))));
        let c = RepresentationMatrix::new("c", x.sample_ids.clone(), 3, vec![0.5; 30]).unwrap();
        assert!(matches!(linear_cka(&x, &c), Err(Error::Undefined(_))));
        let one = random("o", 1, 3, 1);
        assert!(linear_cka(&one, &one).is_err());
    }

    #[test]
    fn csv_roundtrip_keeps_nine_digits() {
        let x = random("x", 5, 3, 4);
        let csv = x.to_csv();
        assert!(csv.starts_with("sample_id,f0,f1,f2\n"));
        let back = RepresentationMatrix::from_csv("x", &csv).unwrap();
        for (a, b) in x.features.iter().zip(&back.features) {
            assert!((a - b).abs() <= 5e-9 * a.abs().max(1e-300));
        }
        assert_eq!(back.to_csv(), csv);
    }

    #[test]
    fn table_is_symmetric_with_unit_diagonal() {
        let reps = vec![
            ("a".to_string(), vec![random("a0", 30, 4, 1), random("a1", 30, 4, 2)]),
            ("b".to_string(), vec![random("b0", 30, 4, 3), random("b1", 30, 4, 4)]),
            ("c".to_string(), vec![random("c0", 30, 4, 5), random("c1", 30, 4, 6)]),
        ];
        let t = similarity_table(&reps).unwrap();
        for i in 0..3 {
            assert_eq!(t.mean[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(t.mean[i][j], t.mean[j][i]);
            }
        }
        assert!(t.mean_csv().starts_with("domain,a,b,c\n"));
        assert!(similarity_table(&reps[..1]).is_err());
    }
}
