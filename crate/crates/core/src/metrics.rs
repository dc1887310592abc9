//! Decision logs and their scores: precision/recall/F1, the ERDE family
//! (absolute sigmoid, linear and percentage sigmoid latency costs) and
//! latency-weighted F1.
//!
//! ERDE values are returned in percent. Every cost function here is pure,
//! so reports built from the same log are identical.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// The final decision for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub user_id: String,
    pub truth: Label,
    pub verdict: Label,
    /// Messages read when the verdict was issued.
    pub k: usize,
    /// Messages available for the user.
    pub n_d: usize,
}

impl DecisionRecord {
    pub fn outcome(&self) -> Outcome {
        match (self.truth.is_positive(), self.verdict.is_positive()) {
            (true, true) => Outcome::TruePositive,
            (false, true) => Outcome::FalsePositive,
            (true, false) => Outcome::FalseNegative,
            (false, false) => Outcome::TrueNegative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

/// One validated decision per user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct DecisionLog {
    records: Vec<DecisionRecord>,
}

impl DecisionLog {
    pub fn new(records: Vec<DecisionRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.k < 1 || r.k > r.n_d {
                return Err(Error::Validation(format!(
                    "user {}: messages read k = {} must lie in 1..={}",
                    r.user_id, r.k, r.n_d
                )));
            }
            if !seen.insert(r.user_id.as_str()) {
                return Err(Error::Validation(format!(
                    "user {} has more than one decision",
                    r.user_id
                )));
            }
        }
        Ok(DecisionLog { records })
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for r in &self.records {
            match r.outcome() {
                Outcome::TruePositive => c.n_tp += 1,
                Outcome::FalsePositive => c.n_fp += 1,
                Outcome::FalseNegative => c.n_fn += 1,
                Outcome::TrueNegative => c.n_tn += 1,
            }
        }
        c.n_u = self.records.len();
        c
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<DecisionRecord>, _>>()?;
        DecisionLog::new(records)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["user_id", "truth", "verdict", "k", "n_d"])?;
        }
        w.flush().map_err(|e| Error::io("<decision log>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    pub n_tn: usize,
    pub n_u: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErdeVariant {
    /// Sigmoid centered at `o` messages read.
    SigmoidAbsolute,
    /// Fraction of the user's messages read; `o` is unused.
    Linear,
    /// Sigmoid centered at `o` percent of the user's messages read.
    SigmoidPercentage,
}

impl ErdeVariant {
    pub fn column_name(self, o: f64) -> String {
        match self {
            ErdeVariant::SigmoidAbsolute => format!("ERDE_{o}"),
            ErdeVariant::Linear => "ERDE_linear".to_string(),
            ErdeVariant::SigmoidPercentage => format!("ERDE%_{o}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErdeParams {
    pub o: f64,
    pub c_fn: f64,
    pub c_tp: f64,
    /// `None` uses the share of positive users in the log.
    pub c_fp: Option<f64>,
}

impl ErdeParams {
    pub fn new(o: f64) -> Self {
        ErdeParams {
            o,
            c_fn: 1.0,
            c_tp: 1.0,
            c_fp: None,
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fraction of `c_tp` charged for a true positive issued after reading
/// `k` of `n_d` messages. `1 − 1/(1+e^{x−o})` equals the logistic of `x − o`.
pub fn latency_cost(variant: ErdeVariant, o: f64, k: usize, n_d: usize) -> f64 {
    match variant {
        ErdeVariant::SigmoidAbsolute => logistic(k as f64 - o),
        ErdeVariant::Linear => k as f64 / n_d as f64,
        ErdeVariant::SigmoidPercentage => logistic(100.0 * k as f64 / n_d as f64 - o),
    }
}

/// Default false-positive cost: positives over all users.
pub fn default_false_positive_cost(log: &DecisionLog) -> f64 {
    let pos = log.records.iter().filter(|r| r.truth.is_positive()).count();
    if log.is_empty() {
        0.0
    } else {
        pos as f64 / log.len() as f64
    }
}

pub fn erde(log: &DecisionLog, params: &ErdeParams, variant: ErdeVariant) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Validation("ERDE of an empty decision log".into()));
    }
    let c_fp = params
        .c_fp
        .unwrap_or_else(|| default_false_positive_cost(log));
    for (name, c) in [("c_fn", params.c_fn), ("c_tp", params.c_tp), ("c_fp", c_fp)] {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Argument(format!(
                "{name} must be a finite non-negative cost, got {c}"
            )));
        }
    }
    match variant {
        ErdeVariant::SigmoidAbsolute if !(params.o.is_finite() && params.o > 0.0) => {
            return Err(Error::Argument(format!(
                "o must be positive, got {}",
                params.o
            )));
        }
        ErdeVariant::SigmoidPercentage if !(0.0..=100.0).contains(&params.o) => {
            return Err(Error::Argument(format!(
                "percentage o must lie in [0, 100], got {}",
                params.o
            )));
        }
        _ => {}
    }
    let total: f64 = log
        .records
        .iter()
        .map(|r| match r.outcome() {
            Outcome::FalsePositive => c_fp,
            Outcome::FalseNegative => params.c_fn,
            Outcome::TrueNegative => 0.0,
            Outcome::TruePositive => latency_cost(variant, params.o, r.k, r.n_d) * params.c_tp,
        })
        .sum();
    Ok(100.0 * total / log.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores for the positive (risk) class. Zero denominators give zero.
pub fn prf(log: &DecisionLog) -> Prf {
    let c = log.counts();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.n_tp, c.n_tp + c.n_fp);
    let recall = ratio(c.n_tp, c.n_tp + c.n_fn);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyScore {
    pub score: f64,
    /// Median messages read over true positives.
    pub latency: Option<f64>,
    pub penalty: Option<f64>,
    pub warning: Option<String>,
}

/// Penalty rising from 0 at one message to 1 in the limit, reaching 0.5 at
/// `median_posts`.
pub fn latency_penalty(k: f64, median_posts: usize) -> Result<f64> {
    if median_posts < 2 {
        return Err(Error::Argument(format!(
            "dataset median posts must be at least 2, got {median_posts}"
        )));
    }
    let q = 3f64.ln() / (median_posts as f64 - 1.0);
    Ok(-1.0 + 2.0 / (1.0 + (-q * (k - 1.0)).exp()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn f_latency(log: &DecisionLog, median_posts: usize) -> Result<LatencyScore> {
    latency_penalty(1.0, median_posts)?;
    let mut ks: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.outcome() == Outcome::TruePositive)
        .map(|r| r.k as f64)
        .collect();
    if ks.is_empty() {
        return Ok(LatencyScore {
            score: 0.0,
            latency: None,
            penalty: None,
            warning: Some("no true positives; latency-weighted F1 set to 0".into()),
        });
    }
    let latency = median(&mut ks);
    let penalty = latency_penalty(latency, median_posts)?;
    Ok(LatencyScore {
        score: prf(log).f1 * (1.0 - penalty),
        latency: Some(latency),
        penalty: Some(penalty),
        warning: None,
    })
}

/// Median message count over the users in the log, rounded half up.
pub fn median_posts(log: &DecisionLog) -> Option<usize> {
    if log.is_empty() {
        return None;
    }
    let mut n: Vec<f64> = log.records.iter().map(|r| r.n_d as f64).collect();
    Some(median(&mut n).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErdeSpec {
    pub variant: ErdeVariant,
    pub o: f64,
}

/// Which scores a report contains and the cost settings used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub erde: Vec<ErdeSpec>,
    pub c_fn: f64,
    pub c_tp: f64,
    pub c_fp: Option<f64>,
    /// Defaults to the median message count of the log's users.
    pub median_posts: Option<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig::with_cutoffs(&[5.0, 50.0], &[20.0, 50.0])
    }
}

impl ReportConfig {
    pub fn with_cutoffs(absolute: &[f64], percentage: &[f64]) -> Self {
        let erde = absolute
            .iter()
            .map(|&o| ErdeSpec {
                variant: ErdeVariant::SigmoidAbsolute,
                o,
            })
            .chain(percentage.iter().map(|&o| ErdeSpec {
                variant: ErdeVariant::SigmoidPercentage,
                o,
            }))
            .collect();
        ReportConfig {
            erde,
            c_fn: 1.0,
            c_tp: 1.0,
            c_fp: None,
            median_posts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErdeValue {
    pub variant: ErdeVariant,
    pub o: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub erde: Vec<ErdeValue>,
    pub c_fp: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_latency: LatencyScore,
    pub median_posts: usize,
    pub counts: Counts,
}

pub fn metric_report(log: &DecisionLog, cfg: &ReportConfig) -> Result<MetricReport> {
    if log.is_empty() {
        return Err(Error::Validation(
            "cannot score an empty decision log".into(),
        ));
    }
    let c_fp = cfg.c_fp.unwrap_or_else(|| default_false_positive_cost(log));
    let erde_values = cfg
        .erde
        .iter()
        .map(|s| {
            let params = ErdeParams {
                o: s.o,
                c_fn: cfg.c_fn,
                c_tp: cfg.c_tp,
                c_fp: Some(c_fp),
            };
            erde(log, &params, s.variant).map(|value| ErdeValue {
                variant: s.variant,
                o: s.o,
                value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = prf(log);
    let median = match cfg.median_posts {
        Some(m) => m,
        None => median_posts(log).unwrap_or(0).max(2),
    };
    let report = MetricReport {
        erde: erde_values,
        c_fp,
        f1: scores.f1,
        precision: scores.precision,
        recall: scores.recall,
        f_latency: f_latency(log, median)?,
        median_posts: median,
        counts: log.counts(),
    };
    let finite = report.erde.iter().all(|e| e.value.is_finite())
        && [
            report.f1,
            report.precision,
            report.recall,
            report.f_latency.score,
        ]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("metric report".into()));
    }
    Ok(report)
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Column headers and two-decimal cells; ERDE columns are in percent.
    pub fn table_cells(&self) -> (Vec<String>, Vec<String>) {
        let mut head = Vec::new();
        let mut cells = Vec::new();
        for e in &self.erde {
            head.push(e.variant.column_name(e.o));
            cells.push(format!("{:.2}", e.value));
        }
        for (name, v) in [
            ("F1", self.f1),
            ("P", self.precision),
            ("R", self.recall),
            ("F_latency", self.f_latency.score),
        ] {
            head.push(name.to_string());
            cells.push(format!("{v:.2}"));
        }
        (head, cells)
    }

    pub fn to_text(&self) -> String {
        let (head, cells) = self.table_cells();
        let width = head.iter().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (h, c) in head.iter().zip(&cells) {
            out.push_str(&format!("{h:<width$}  {c}\n"));
        }
        let c = self.counts;
        out.push_str(&format!(
            "{:<width$}  tp={} fp={} fn={} tn={} users={}\n",
            "counts", c.n_tp, c.n_fp, c.n_fn, c.n_tn, c.n_u
        ));
        if let Some(w) = &self.f_latency.warning {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// One comparison-table row: model name, decision threshold and report.
pub struct TableRow<'a> {
    pub model: &'a str,
    pub threshold: Option<f64>,
    pub report: &'a MetricReport,
}

/// Writes a model comparison table: model, threshold, ERDE columns, F1,
/// P, R and F_latency, all to two decimals.
pub fn write_comparison_csv<W: Write>(writer: W, rows: &[TableRow<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = rows.first() else {
        w.flush().map_err(|e| Error::io("<comparison table>", e))?;
        return Ok(());
    };
    let (head, _) = first.report.table_cells();
    let mut header = vec!["model".to_string(), "p >".to_string()];
    header.extend(head.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        let (h, cells) = row.report.table_cells();
        if h != head {
            return Err(Error::Validation(
                "reports in one table must share their columns".into(),
            ));
        }
        let mut rec = vec![
            row.model.to_string(),
            row.threshold.map(|t| format!("{t}")).unwrap_or_default(),
        ];
        rec.extend(cells);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<comparison table>", e))?;
    Ok(())
}
