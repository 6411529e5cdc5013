//! From a completed catalog to tables, figures and a summary:
//! predictions → partitions → scores → aggregates → statistics → report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::catalog::{baseline_run_id, plan, RunCatalog, RunKind, RunRow};
use super::config::ExperimentConfig;
use crate::analysis::{
    directed_relationship, emit_report, fmt_f64, fmt_opt, similarity_difference_table, table_csv, undirected_relationships,
    LinePlot, Metric, PairingValue, RelationshipKey, RelationshipValue, Report, Series, Setting, TableRow,
};
use crate::error::{Error, Result};
use crate::metrics::{mdl_scores, partition, AggregateStat, MetricReport, PredictionLog};
use crate::model::backbone_param_count;
use crate::similarity::{similarity_table, RepresentationMatrix, SimilarityTable};
use crate::stats::{delta_by_capacity, linear_fit, mean_abs, paired_ttest, pearson, StatResult};
use crate::weighting::Weighting;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutcome {
    pub report: Report,
    pub written: Vec<PathBuf>,
    /// Planned runs that are not completed; the report covers the rest.
    pub missing: Vec<String>,
}

/// One joint model scored on one of its domains.
#[derive(Debug, Clone, PartialEq)]
pub struct MdlCell {
    pub run_id: String,
    pub baseline_run_id: String,
    pub pairing: String,
    pub width: f64,
    pub weighting: Weighting,
    pub trial: u32,
    pub domain: String,
    pub report: MetricReport,
}

struct Loader<'a> {
    root: &'a Path,
    catalog: RunCatalog,
    planned: RunCatalog,
    logs: BTreeMap<PathBuf, PredictionLog>,
}

impl Loader<'_> {
    /// The catalog row of a planned, completed run.
    fn done(&self, run_id: &str) -> Option<&RunRow> {
        let p = self.planned.get(run_id)?;
        self.catalog.get(run_id).filter(|r| r.is_completed() && r.config_digest == p.config_digest)
    }

    fn predictions(&mut self, row_id: &str, domain: &str) -> Result<Option<PredictionLog>> {
        let Some(row) = self.done(row_id) else { return Ok(None) };
        let rel = row.predictions(domain);
        if !self.logs.contains_key(&rel) {
            let log = PredictionLog::read(&self.root.join(&rel))?;
            self.logs.insert(rel.clone(), log);
        }
        Ok(self.logs.get(&rel).cloned())
    }
}

fn pairing_label(p: &[String]) -> String {
    p.join("+")
}

fn stat_row(width_params: usize, pairing: &str, weighting: &str, domain: &str, metric: &str, values: &[f64], excluded: usize) -> TableRow {
    TableRow {
        width_params,
        pairing: pairing.into(),
        weighting: weighting.into(),
        domain: domain.into(),
        metric: metric.into(),
        stat: AggregateStat::from_values(values, excluded),
    }
}

fn stat_cells(s: &Option<StatResult>) -> String {
    match s {
        Some(s) => format!("{},{},{},{}", fmt_f64(s.statistic), fmt_f64(s.p_value), s.dof, s.significant_at_95),
        None => "NA,NA,NA,NA".into(),
    }
}

/// Writes the report for `cfg`'s grid under `out_dir`. Missing runs do not
/// stop the pipeline; they are listed in the outcome and in the summary.
pub fn analyze(cfg: &ExperimentConfig, root: &Path, out_dir: &Path) -> Result<AnalysisOutcome> {
    let (report, missing) = build_report(cfg, root)?;
    let written = emit_report(&report, out_dir)?;
    Ok(AnalysisOutcome { report, written, missing })
}

/// Builds every report file in memory. Fails only when not a single
/// baseline is available.
pub fn build_report(cfg: &ExperimentConfig, root: &Path) -> Result<(Report, Vec<String>)> {
    let planned = plan(cfg)?;
    let all_ids = || planned.rows.iter().map(|r| r.run_id.clone()).collect::<Vec<_>>();
    let catalog = RunCatalog::load(root)?.ok_or_else(|| Error::MissingRuns(all_ids()))?;
    let mut ld = Loader { root, catalog, planned: planned.clone(), logs: BTreeMap::new() };
    let missing: Vec<String> = planned.rows.iter().filter(|r| ld.done(&r.run_id).is_none()).map(|r| r.run_id.clone()).collect();
    if !planned.rows.iter().any(|r| r.kind == RunKind::Single && ld.done(&r.run_id).is_some()) {
        return Err(Error::MissingRuns(missing));
    }

    let params: BTreeMap<u64, usize> = cfg.widths.iter().map(|&w| (w.to_bits(), backbone_param_count(&cfg.width(w)))).collect();
    let wp = |w: f64| params[&w.to_bits()];
    let mut report = Report::default();
    let mut gaps: Vec<String> = Vec::new();
    let mut sources = String::from("table,width_params,pairing,weighting,domain,metric,run_ids\n");
    let mut summary = String::new();
    let _ = writeln!(summary, "runs planned: {}", planned.rows.len());
    let _ = writeln!(summary, "runs completed: {}", planned.rows.len() - missing.len());
    let _ = writeln!(summary, "runs missing: {}", missing.len());
    for id in &missing {
        let _ = writeln!(summary, "  missing {id}");
    }

    // baseline accuracy
    let mut base_rows = Vec::new();
    let mut base_acc: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for &w in &cfg.widths {
        for d in &cfg.domains {
            let mut vals = Vec::new();
            let mut ids = Vec::new();
            for t in 0..cfg.trials {
                let id = super::catalog::run_id(RunKind::Single, std::slice::from_ref(&d.name), w, None, t);
                if let Some(log) = ld.predictions(&id, &d.name)? {
                    vals.push(log.accuracy());
                    ids.push(id);
                }
            }
            if vals.is_empty() {
                gaps.push(format!("baseline accuracy: no completed runs for {} at {}x", d.name, w));
            }
            let _ = writeln!(sources, "baseline_accuracy,{},{},-,{},accuracy,{}", wp(w), d.name, d.name, ids.join(";"));
            base_rows.push(stat_row(wp(w), &d.name, "-", &d.name, "accuracy", &vals, 0));
            base_acc.insert((w.to_bits(), d.name.clone()), vals);
        }
    }
    report.add("tables/baseline_accuracy.csv", table_csv(&base_rows));
    let _ = writeln!(summary, "\nbaseline accuracy (mean over trials):");
    for r in &base_rows {
        let _ = writeln!(summary, "  {} params {}: {} (n={})", r.width_params, r.domain, fmt_opt(r.stat.mean), r.stat.n);
    }

    // similarity among baselines
    let mut sims: BTreeMap<u64, SimilarityTable> = BTreeMap::new();
    if cfg.domains.len() >= 2 {
        for &w in &cfg.widths {
            let trials: Vec<u32> = (0..cfg.trials)
                .filter(|&t| {
                    cfg.domains.iter().all(|d| {
                        ld.done(&super::catalog::run_id(RunKind::Single, std::slice::from_ref(&d.name), w, None, t)).is_some()
                    })
                })
                .collect();
            if trials.is_empty() {
                gaps.push(format!("similarity: no trial with every baseline completed at {w}x"));
                continue;
            }
            let mut reps: Vec<(String, Vec<RepresentationMatrix>)> = Vec::new();
            for d in &cfg.domains {
                let mut per = Vec::new();
                for &t in &trials {
                    let id = super::catalog::run_id(RunKind::Single, std::slice::from_ref(&d.name), w, None, t);
                    let row = ld.done(&id).expect("checked above");
                    per.push(RepresentationMatrix::read(&id, &root.join(row.representations()))?);
                }
                reps.push((d.name.clone(), per));
            }
            match similarity_table(&reps) {
                Ok(table) => {
                    report.add(format!("tables/similarity_{}_mean.csv", wp(w)), table.mean_csv());
                    report.add(format!("tables/similarity_{}_std.csv", wp(w)), table.std_csv());
                    sims.insert(w.to_bits(), table);
                }
                Err(e) => gaps.push(format!("similarity at {w}x: {e}")),
            }
        }
    }

    let joint_planned = planned.rows.iter().any(|r| r.kind == RunKind::Joint);
    let tl_planned = planned.rows.iter().any(|r| r.kind == RunKind::Finetune);
    if !joint_planned && !tl_planned {
        finish(&mut report, summary, gaps, sources);
        return Ok((report, missing));
    }

    // MDL cells
    let mut cells: Vec<MdlCell> = Vec::new();
    let mut mdl_rel: Vec<(RelationshipValue, String)> = Vec::new();
    for row in planned.rows.iter().filter(|r| r.kind == RunKind::Joint) {
        for d in &row.pairing {
            let base_id = baseline_run_id(row, d);
            let (Some(base), Some(treated)) = (ld.predictions(&base_id, d)?, ld.predictions(&row.run_id, d)?) else {
                continue;
            };
            let report_ = mdl_scores(&partition(&base)?, &treated)?;
            let weighting = row.weighting.expect("joint rows carry a weighting");
            cells.push(MdlCell {
                run_id: row.run_id.clone(),
                baseline_run_id: base_id.clone(),
                pairing: pairing_label(&row.pairing),
                width: row.width,
                weighting,
                trial: row.trial,
                domain: d.clone(),
                report: report_,
            });
            if row.pairing.len() == 2 {
                let source = row.pairing.iter().find(|p| *p != d).expect("two domains");
                let key = RelationshipKey {
                    source,
                    target: d,
                    setting: Setting::Mdl,
                    width: cfg.width(row.width),
                    trial: row.trial,
                    weighting: Some(weighting),
                };
                for m in Metric::ALL {
                    match directed_relationship(&key, m, &base, &treated) {
                        Ok(v) => mdl_rel.push((v, row.run_id.clone())),
                        Err(e) => gaps.push(format!("relationship {m} {source}->{d} ({}): {e}", row.run_id)),
                    }
                }
            }
        }
    }

    if joint_planned {
        mdl_tables(cfg, &cells, &sims, &wp, &mut report, &mut summary, &mut gaps, &mut sources);
    }

    if tl_planned {
        let mut tl_rel: Vec<(RelationshipValue, String)> = Vec::new();
        for row in planned.rows.iter().filter(|r| r.kind == RunKind::Finetune) {
            let (source, target) = (&row.pairing[0], &row.pairing[1]);
            let base_id = baseline_run_id(row, target);
            let (Some(base), Some(treated)) = (ld.predictions(&base_id, target)?, ld.predictions(&row.run_id, target)?) else {
                continue;
            };
            let key = RelationshipKey {
                source,
                target,
                setting: Setting::TransferLearning,
                width: cfg.width(row.width),
                trial: row.trial,
                weighting: None,
            };
            for m in Metric::ALL {
                match directed_relationship(&key, m, &base, &treated) {
                    Ok(v) => tl_rel.push((v, row.run_id.clone())),
                    Err(e) => gaps.push(format!("relationship {m} {source}->{target} ({}): {e}", row.run_id)),
                }
            }
        }
        relationship_tables(cfg, &tl_rel, &mdl_rel, &wp, &mut report, &mut summary, &mut gaps);
    }

    finish(&mut report, summary, gaps, sources);
    Ok((report, missing))
}

fn finish(report: &mut Report, mut summary: String, gaps: Vec<String>, sources: String) {
    let _ = writeln!(summary, "\ngaps: {}", gaps.len());
    for g in &gaps {
        let _ = writeln!(summary, "  {g}");
    }
    report.add("tables/sources.csv", sources);
    report.add("summary.txt", summary);
}

#[allow(clippy::too_many_arguments)]
fn mdl_tables(
    cfg: &ExperimentConfig,
    cells: &[MdlCell],
    sims: &BTreeMap<u64, SimilarityTable>,
    wp: &dyn Fn(f64) -> usize,
    report: &mut Report,
    summary: &mut String,
    gaps: &mut Vec<String>,
    sources: &mut String,
) {
    // raw per-cell reports
    let mut raw = String::from("run_id,baseline_run_id,width_params,pairing,weighting,trial,domain,perfgain,interference,transfer,k,k_prime,n_correct,n_incorrect,n_total,transfer_undefined,interference_undefined\n");
    for c in cells {
        let r = &c.report;
        let _ = writeln!(
            raw,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.run_id,
            c.baseline_run_id,
            wp(c.width),
            c.pairing,
            c.weighting,
            c.trial,
            c.domain,
            fmt_f64(r.perfgain),
            fmt_f64(r.interference),
            fmt_f64(r.transfer),
            r.k,
            r.k_prime,
            r.n_correct,
            r.n_incorrect,
            r.n_total,
            r.transfer_undefined,
            r.interference_undefined
        );
    }
    report.add("tables/mdl_reports.csv", raw);

    let values = |pred: &dyn Fn(&MdlCell) -> bool, m: Metric| -> (Vec<f64>, usize, Vec<String>) {
        let sel: Vec<&MdlCell> = cells.iter().filter(|c| pred(c)).collect();
        let vals: Vec<f64> = sel.iter().filter_map(|c| m.of(&c.report)).collect();
        let ids = sel.iter().map(|c| c.run_id.clone()).collect();
        (vals.clone(), sel.len() - vals.len(), ids)
    };

    // per (width, pairing, weighting, domain, metric) over trials
    let mut rows = Vec::new();
    for &w in &cfg.widths {
        for p in cfg.joint_pairings() {
            let pl = pairing_label(&p);
            for &wt in &cfg.weightings {
                for d in &p {
                    for m in Metric::ALL {
                        let (vals, excl, ids) =
                            values(&|c: &MdlCell| c.width == w && c.pairing == pl && c.weighting == wt && &c.domain == d, m);
                        if vals.is_empty() {
                            gaps.push(format!("mdl_metrics: no {m} values for {pl} {wt} {d} at {w}x"));
                        }
                        let _ = writeln!(sources, "mdl_metrics,{},{pl},{wt},{d},{m},{}", wp(w), ids.join(";"));
                        rows.push(stat_row(wp(w), &pl, wt.as_str(), d, m.as_str(), &vals, excl));
                    }
                }
            }
        }
    }
    report.add("tables/mdl_metrics.csv", table_csv(&rows));

    // per (width, weighting, metric), pooled over pairings, domains and trials
    let mut rows = Vec::new();
    let mut curves: BTreeMap<(Metric, String), Vec<(f64, f64)>> = BTreeMap::new();
    let wlabels: Vec<(String, Option<Weighting>)> =
        cfg.weightings.iter().map(|w| (w.to_string(), Some(*w))).chain([("all".to_string(), None)]).collect();
    for &w in &cfg.widths {
        for (label, wt) in &wlabels {
            for m in Metric::ALL {
                let (vals, excl, _) = values(&|c: &MdlCell| c.width == w && wt.is_none_or(|x| c.weighting == x), m);
                let row = stat_row(wp(w), "*", label, "*", m.as_str(), &vals, excl);
                if let Some(mean) = row.stat.mean {
                    curves.entry((m, label.clone())).or_default().push(((wp(w) as f64).log10(), mean));
                }
                rows.push(row);
            }
        }
    }
    report.add("tables/mdl_by_capacity.csv", table_csv(&rows));
    for m in Metric::ALL {
        let mut series: Vec<Series> = Vec::new();
        for (label, _) in &wlabels {
            if let Some(points) = curves.get(&(m, label.clone())) {
                let mut points = points.clone();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                series.push(Series { label: label.clone(), points });
            }
        }
        let plot = LinePlot {
            title: format!("{m} vs capacity"),
            x_label: "log10(backbone parameters)".into(),
            y_label: format!("{m} (%)"),
            series,
        };
        report.add(format!("figures/mdl_{m}.svg"), plot.to_svg());
    }

    // paired t-tests between weightings, paired on (trial, pairing, domain)
    let mut tt = String::from("width_params,metric,weighting_a,weighting_b,n,t,p_value,dof,significant\n");
    let _ = writeln!(summary, "\nsignificant weighting t-tests (p < 0.05):");
    let mut any_sig = false;
    for &w in &cfg.widths {
        for m in Metric::ALL {
            for (i, &a) in cfg.weightings.iter().enumerate() {
                for &b in &cfg.weightings[i + 1..] {
                    let keyed = |wt: Weighting| -> BTreeMap<(u32, String, String), f64> {
                        cells
                            .iter()
                            .filter(|c| c.width == w && c.weighting == wt)
                            .filter_map(|c| m.of(&c.report).map(|v| ((c.trial, c.pairing.clone(), c.domain.clone()), v)))
                            .collect()
                    };
                    let (ka, kb) = (keyed(a), keyed(b));
                    let common: Vec<_> = ka.keys().filter(|k| kb.contains_key(*k)).collect();
                    let xa: Vec<f64> = common.iter().map(|k| ka[*k]).collect();
                    let xb: Vec<f64> = common.iter().map(|k| kb[*k]).collect();
                    let res = paired_ttest(&xa, &xb).ok();
                    if res.is_none() {
                        gaps.push(format!("t-test {m} {a} vs {b} at {w}x: {} matched values", common.len()));
                    }
                    if let Some(r) = &res {
                        if r.significant_at_95 {
                            any_sig = true;
                            let _ = writeln!(
                                summary,
                                "  {} params {m}: {a} vs {b} t={} p={} (n={})",
                                wp(w),
                                fmt_f64(r.statistic),
                                fmt_f64(r.p_value),
                                r.n
                            );
                        }
                    }
                    let _ = writeln!(tt, "{},{m},{a},{b},{},{}", wp(w), common.len(), stat_cells(&res));
                }
            }
        }
    }
    if !any_sig {
        let _ = writeln!(summary, "  none");
    }
    report.add("tables/weighting_ttests.csv", tt);

    // transfer as a function of interference
    let mut fits = String::from("width_params,weighting,n,slope,intercept,r_squared\n");
    let _ = writeln!(summary, "\ntransfer vs interference best fit:");
    let wsel: Vec<(String, Option<f64>)> =
        cfg.widths.iter().map(|&w| (wp(w).to_string(), Some(w))).chain([("all".to_string(), None)]).collect();
    for (wlabel, w) in &wsel {
        for (label, wt) in &wlabels {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| w.is_none_or(|x| c.width == x) && wt.is_none_or(|x| c.weighting == x))
                .filter_map(|c| Some((Metric::Interference.of(&c.report)?, Metric::Transfer.of(&c.report)?)))
                .collect();
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            match linear_fit(&x, &y) {
                Ok(f) => {
                    let _ = writeln!(fits, "{wlabel},{label},{},{},{},{}", x.len(), fmt_f64(f.slope), fmt_f64(f.intercept), fmt_f64(f.r_squared));
                    if w.is_none() {
                        let _ = writeln!(summary, "  {label}: slope {} R^2 {} (n={})", fmt_f64(f.slope), fmt_f64(f.r_squared), x.len());
                    }
                }
                Err(e) => {
                    let _ = writeln!(fits, "{wlabel},{label},{},NA,NA,NA", x.len());
                    gaps.push(format!("fit {wlabel} {label}: {e}"));
                }
            }
        }
    }
    report.add("tables/transfer_interference_fit.csv", fits);

    // change per capacity increment
    let mut widths: Vec<f64> = cfg.widths.clone();
    widths.sort_by(f64::total_cmp);
    let mut deltas = String::from("pairing,weighting,domain,metric,from_params,to_params,delta\n");
    let mut per_step: BTreeMap<(Metric, usize), Vec<f64>> = BTreeMap::new();
    if widths.len() >= 2 {
        for p in cfg.joint_pairings() {
            let pl = pairing_label(&p);
            for &wt in &cfg.weightings {
                for d in &p {
                    for m in Metric::ALL {
                        let series: Vec<(f64, f64)> = widths
                            .iter()
                            .filter_map(|&w| {
                                let (vals, _, _) =
                                    values(&|c: &MdlCell| c.width == w && c.pairing == pl && c.weighting == wt && &c.domain == d, m);
                                AggregateStat::from_values(&vals, 0).mean.map(|v| (w, v))
                            })
                            .collect();
                        if series.len() != widths.len() {
                            gaps.push(format!("capacity deltas: {pl} {wt} {d} {m} lacks some widths"));
                            continue;
                        }
                        let ds = delta_by_capacity(&series).expect("sorted widths");
                        for (i, dv) in ds.iter().enumerate() {
                            let _ = writeln!(deltas, "{pl},{wt},{d},{m},{},{},{}", wp(widths[i]), wp(widths[i + 1]), fmt_f64(*dv));
                            per_step.entry((m, i)).or_default().push(*dv);
                        }
                    }
                }
            }
        }
    }
    report.add("tables/capacity_deltas.csv", deltas);
    let mut dm = String::from("metric,from_params,to_params,mean_delta,n\n");
    let _ = writeln!(summary, "\nmean change per capacity increment:");
    for ((m, i), v) in &per_step {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(dm, "{m},{},{},{},{}", wp(widths[*i]), wp(widths[i + 1]), fmt_f64(mean), v.len());
        let _ = writeln!(summary, "  {m} {} -> {}: {}", wp(widths[*i]), wp(widths[i + 1]), fmt_f64(mean));
    }
    report.add("tables/capacity_delta_means.csv", dm);

    // more-similar minus less-similar partner, per domain
    let mut sd = String::from("width_params,weighting,metric,domain,more_similar,less_similar,difference\n");
    let mut sda = String::from("width_params,weighting,metric,mean_abs,n\n");
    for &w in &cfg.widths {
        let Some(table) = sims.get(&w.to_bits()) else { continue };
        for &wt in &cfg.weightings {
            for m in Metric::ALL {
                let mut pv = Vec::new();
                for p in cfg.joint_pairings().into_iter().filter(|p| p.len() == 2) {
                    let pl = pairing_label(&p);
                    for d in &p {
                        let partner = p.iter().find(|x| *x != d).expect("two domains");
                        let (vals, _, _) = values(&|c: &MdlCell| c.width == w && c.pairing == pl && c.weighting == wt && &c.domain == d, m);
                        if let (Some(mean), Some(sim)) = (AggregateStat::from_values(&vals, 0).mean, table.get(d, partner)) {
                            pv.push(PairingValue { domain: d.clone(), partner: partner.clone(), similarity: sim, value: mean });
                        }
                    }
                }
                let counts: BTreeMap<&str, usize> = pv.iter().fold(BTreeMap::new(), |mut acc, v| {
                    *acc.entry(v.domain.as_str()).or_insert(0) += 1;
                    acc
                });
                let eligible: BTreeSet<String> = counts.iter().filter(|(_, &n)| n >= 2).map(|(d, _)| d.to_string()).collect();
                let pv: Vec<PairingValue> = pv.into_iter().filter(|v| eligible.contains(&v.domain)).collect();
                if pv.is_empty() {
                    continue;
                }
                let diffs = similarity_difference_table(&pv).expect("every domain has two partners");
                for s in &diffs {
                    let _ = writeln!(sd, "{},{wt},{m},{},{},{},{}", wp(w), s.domain, s.more_similar, s.less_similar, fmt_f64(s.difference));
                }
                let abs: Vec<f64> = diffs.iter().map(|s| s.difference).collect();
                let _ = writeln!(sda, "{},{wt},{m},{},{}", wp(w), fmt_opt(mean_abs(&abs)), abs.len());
            }
        }
    }
    report.add("tables/similarity_differences.csv", sd);
    report.add("tables/similarity_differences_mean_abs.csv", sda);
}

pub const RELATIONSHIP_HEADER: &str = "setting,weighting,width_params,trial,source,target,metric,value,run_id";
pub const CORRELATION_HEADER: &str = "width_params,metric,weighting,n,r,p_value,dof,significant";

fn relationship_tables(
    cfg: &ExperimentConfig,
    tl: &[(RelationshipValue, String)],
    mdl: &[(RelationshipValue, String)],
    wp: &dyn Fn(f64) -> usize,
    report: &mut Report,
    summary: &mut String,
    gaps: &mut Vec<String>,
) {
    let mut rel = format!("{RELATIONSHIP_HEADER}\n");
    for (v, id) in tl.iter().chain(mdl) {
        let _ = writeln!(
            rel,
            "{},{},{},{},{},{},{},{},{id}",
            v.setting,
            v.weighting.map_or("-".to_string(), |w| w.to_string()),
            wp(v.width.multiplier),
            v.trial,
            v.source,
            v.target,
            v.metric,
            fmt_f64(v.value)
        );
    }
    report.add("tables/relationships.csv", rel);

    let all: Vec<RelationshipValue> = tl.iter().chain(mdl).map(|(v, _)| v.clone()).collect();
    let mut und = String::from("setting,weighting,width_params,trial,domain_a,domain_b,metric,value\n");
    for u in undirected_relationships(&all) {
        let _ = writeln!(
            und,
            "{},{},{},{},{},{},{},{}",
            u.setting,
            u.weighting.map_or("-".to_string(), |w| w.to_string()),
            wp(u.width.multiplier),
            u.trial,
            u.domains.0,
            u.domains.1,
            u.metric,
            fmt_f64(u.value)
        );
    }
    report.add("tables/undirected_relationships.csv", und);

    // transfer learning against MDL, matched on (width, trial, source, target)
    let mut corr = format!("{CORRELATION_HEADER}\n");
    let _ = writeln!(summary, "\ntransfer-learning vs MDL correlation:");
    type Key = (u32, String, String);
    for &w in &cfg.widths {
        for m in Metric::ALL {
            let tl_map: BTreeMap<Key, f64> = tl
                .iter()
                .map(|(v, _)| v)
                .filter(|v| v.width.multiplier == w && v.metric == m)
                .map(|v| ((v.trial, v.source.clone(), v.target.clone()), v.value))
                .collect();
            for &wt in &cfg.weightings {
                let pairs: Vec<(f64, f64)> = mdl
                    .iter()
                    .map(|(v, _)| v)
                    .filter(|v| v.width.multiplier == w && v.metric == m && v.weighting == Some(wt))
                    .filter_map(|v| tl_map.get(&(v.trial, v.source.clone(), v.target.clone())).map(|&x| (x, v.value)))
                    .collect();
                let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let res = match pearson(&x, &y) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        gaps.push(format!("correlation {m} {wt} at {w}x: {e} (n={})", x.len()));
                        None
                    }
                };
                if let Some(r) = &res {
                    let _ = writeln!(summary, "  {} params {m} {wt}: r={} p={} (n={})", wp(w), fmt_f64(r.statistic), fmt_f64(r.p_value), r.n);
                }
                let _ = writeln!(corr, "{},{m},{wt},{},{}", wp(w), x.len(), stat_cells(&res));
            }
        }
    }
    report.add("tables/tl_mdl_correlation.csv", corr);
}
