//! Task relationships, similarity-ordered differences and report emission
//! (CSV tables, SVG line plots, a plain-text summary).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mdl_scores, partition, AggregateStat, MetricReport, PredictionLog};
use crate::model::WidthConfig;
use crate::weighting::Weighting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "transfer-learning")]
    TransferLearning,
    #[serde(rename = "mdl")]
    Mdl,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::TransferLearning => "transfer-learning",
            Setting::Mdl => "mdl",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transfer-learning" => Ok(Setting::TransferLearning),
            "mdl" => Ok(Setting::Mdl),
            _ => Err(Error::invalid(format!("unknown setting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    PerfGain,
    Transfer,
    Interference,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::PerfGain, Metric::Transfer, Metric::Interference];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::PerfGain => "perfgain",
            Metric::Transfer => "transfer",
            Metric::Interference => "interference",
        }
    }

    /// The report's value, `None` when its denominator was empty.
    pub fn of(self, r: &MetricReport) -> Option<f64> {
        match self {
            Metric::PerfGain => Some(r.perfgain),
            Metric::Transfer => (!r.transfer_undefined).then_some(r.transfer),
            Metric::Interference => (!r.interference_undefined).then_some(r.interference),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

/// Effect of `source` on performance on `target`, through pretraining
/// (transfer learning) or joint training (MDL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipValue {
    pub source: String,
    pub target: String,
    pub setting: Setting,
    pub metric: Metric,
    pub value: f64,
    pub width: WidthConfig,
    pub trial: u32,
    /// Loss weighting of the joint model; `None` for transfer learning.
    pub weighting: Option<Weighting>,
}

/// Identifies a measurement: who was trained on what, at which capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipKey<'a> {
    pub source: &'a str,
    pub target: &'a str,
    pub setting: Setting,
    pub width: WidthConfig,
    pub trial: u32,
    pub weighting: Option<Weighting>,
}

/// `baseline` and `treated` are test predictions on the target domain. The
/// perfgain value is the accuracy difference in percentage points; transfer
/// and interference come from the sample-wise report.
pub fn directed_relationship(
    key: &RelationshipKey<'_>,
    metric: Metric,
    baseline: &PredictionLog,
    treated: &PredictionLog,
) -> Result<RelationshipValue> {
    if key.source == key.target {
        return Err(Error::invalid(format!("directed relationship needs two domains, got {} twice", key.source)));
    }
    let report = mdl_scores(&partition(baseline)?, treated)?;
    let value = match metric {
        Metric::PerfGain => treated.accuracy() - baseline.accuracy(),
        m => m
            .of(&report)
            .ok_or_else(|| Error::Undefined(format!("{m} of {} on {} has an empty denominator", treated.model_id, key.target)))?,
    };
    Ok(RelationshipValue {
        source: key.source.to_owned(),
        target: key.target.to_owned(),
        setting: key.setting,
        metric,
        value,
        width: key.width,
        trial: key.trial,
        weighting: key.weighting,
    })
}

/// Average of both directions.
pub fn undirected(a_to_b: f64, b_to_a: f64) -> f64 {
    (a_to_b + b_to_a) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndirectedValue {
    /// Lexicographically ordered pair.
    pub domains: (String, String),
    pub setting: Setting,
    pub metric: Metric,
    pub value: f64,
    pub width: WidthConfig,
    pub trial: u32,
    pub weighting: Option<Weighting>,
}

type GroupKey = (Setting, Option<Weighting>, u64, u32, Metric);

fn group_key(v: &RelationshipValue) -> GroupKey {
    (v.setting, v.weighting, v.width.multiplier.to_bits(), v.trial, v.metric)
}

/// Pairs every directed value with its reverse; values lacking a reverse are
/// skipped.
pub fn undirected_relationships(values: &[RelationshipValue]) -> Vec<UndirectedValue> {
    let mut index: BTreeMap<(GroupKey, &str, &str), &RelationshipValue> = BTreeMap::new();
    for v in values {
        index.insert((group_key(v), &v.source, &v.target), v);
    }
    let mut out = Vec::new();
    for (&(g, s, t), v) in &index {
        if s < t {
            if let Some(rev) = index.get(&(g, t, s)) {
                out.push(UndirectedValue {
                    domains: (s.to_owned(), t.to_owned()),
                    setting: v.setting,
                    metric: v.metric,
                    value: undirected(rev.value, v.value),
                    width: v.width,
                    trial: v.trial,
                    weighting: v.weighting,
                });
            }
        }
    }
    out
}

/// A domain's metric when paired with `partner`, whose similarity to the
/// domain is `similarity`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingValue {
    pub domain: String,
    pub partner: String,
    pub similarity: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDifference {
    pub domain: String,
    pub more_similar: String,
    pub less_similar: String,
    /// More-similar value minus less-similar value.
    pub difference: f64,
}

/// Per domain: value with its most similar partner minus value with its
/// least similar one. Similarity ties break on partner name.
pub fn similarity_difference_table(values: &[PairingValue]) -> Result<Vec<SimilarityDifference>> {
    let mut by_domain: BTreeMap<&str, Vec<&PairingValue>> = BTreeMap::new();
    for v in values {
        by_domain.entry(&v.domain).or_default().push(v);
    }
    let mut out = Vec::new();
    for (domain, mut vs) in by_domain {
        vs.sort_by(|a, b| a.similarity.total_cmp(&b.similarity).then_with(|| a.partner.cmp(&b.partner)));
        vs.dedup_by(|a, b| a.partner == b.partner);
        if vs.len() < 2 {
            return Err(Error::MissingRuns(vec![format!("{domain}: needs values for two distinct pairings")]));
        }
        let (less, more) = (vs[0], vs[vs.len() - 1]);
        out.push(SimilarityDifference {
            domain: domain.to_owned(),
            more_similar: more.partner.clone(),
            less_similar: less.partner.clone(),
            difference: more.value - less.value,
        });
    }
    Ok(out)
}

/// Floats print in shortest round-trip form, so parsing a table back gives
/// the exact values used to compute it.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub width_params: usize,
    pub pairing: String,
    pub weighting: String,
    pub domain: String,
    pub metric: String,
    pub stat: AggregateStat,
}

pub const TABLE_HEADER: &str = "width_params,pairing,weighting,domain,metric,mean,stderr,n";

/// Rows keep their given order; empty groups print as `NA` with `n = 0`.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.width_params,
            r.pairing,
            r.weighting,
            r.domain,
            r.metric,
            fmt_opt(r.stat.mean),
            fmt_opt(r.stat.stderr),
            r.stat.n
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6b4e9b", "#444444"];

impl LinePlot {
    /// A plain SVG document; coordinates are rounded to 0.01 px.
    pub fn to_svg(&self) -> String {
        let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 40.0, 60.0);
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 1.0, y1 + 1.0);
        }
        let pad = (y1 - y0) * 0.08;
        let (y0, y1) = (y0 - pad, y1 + pad);
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&self.title));
        let (ax0, ax1, ay0, ay1) = (left, w - right, top, h - bottom);
        let _ = writeln!(s, r#"<path d="M{ax0:.2} {ay0:.2} L{ax0:.2} {ay1:.2} L{ax1:.2} {ay1:.2}" stroke="black" fill="none"/>"#);
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.2}</text>"#, px(fx), ay1 + 18.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.2}</text>"#, ax0 - 6.0, py(fy) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, h - 16.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (ay0 + ay1) / 2.0,
            (ay0 + ay1) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let finite: Vec<_> = series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            let path: Vec<String> = finite.iter().map(|&&(x, y)| format!("{:.2} {:.2}", px(x), py(y))).collect();
            if !path.is_empty() {
                let _ = writeln!(s, r#"<path d="M{}" stroke="{color}" stroke-width="2" fill="none"/>"#, path.join(" L"));
            }
            for &&(x, y) in &finite {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, px(x), py(y));
            }
            let ly = top + 10.0 + 18.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#, ax1 + 14.0, ly - 10.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, ax1 + 32.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Files of a report keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub files: BTreeMap<String, String>,
}

impl Report {
    pub fn add(&mut self, rel_path: impl Into<String>, content: String) {
        self.files.insert(rel_path.into(), content);
    }

    pub fn get(&self, rel_path: &str) -> Option<&str> {
        self.files.get(rel_path).map(String::as_str)
    }
}

/// Writes every file of `report` under `out_dir`, each atomically.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.files.is_empty() {
        return Err(Error::invalid("report has no files"));
    }
    let mut written = Vec::with_capacity(report.files.len());
    for (rel, content) in &report.files {
        let path = out_dir.join(rel);
        crate::model::checkpoint::write_atomic(&path, content.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
