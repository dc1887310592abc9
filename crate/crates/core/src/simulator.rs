//! Sequential chunk-release simulation.
//!
//! Chunks are released one at a time. After each release every undecided
//! user is re-scored on everything released so far; a positive verdict is
//! final. At the last chunk every remaining user receives a verdict.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{PredictionSource, Predictor};
use crate::corpus::{chunk_boundaries, Label, Message, UserRecord};
use crate::error::{Error, Result};
use crate::metrics::{metric_report, DecisionLog, DecisionRecord, MetricReport, ReportConfig};

pub const DEFAULT_CHUNKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Decide positive as soon as the probability exceeds the threshold.
    Threshold,
    /// Withhold every verdict until the last chunk.
    Wait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold: f64,
    pub mode: PolicyMode,
    pub n_chunks: usize,
}

impl DecisionPolicy {
    pub fn new(threshold: f64, mode: PolicyMode) -> Result<Self> {
        let p = DecisionPolicy {
            threshold,
            mode,
            n_chunks: DEFAULT_CHUNKS,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Argument(format!(
                "threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        if self.n_chunks < 1 {
            return Err(Error::Argument("at least one chunk is required".into()));
        }
        Ok(())
    }
}

/// One line of the per-chunk trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub chunk: usize,
    pub user_id: String,
    pub probability: Option<f64>,
    pub decided: bool,
    pub verdict: Option<Label>,
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserState {
    pub decided: bool,
    pub verdict: Option<Label>,
    pub chunk: Option<usize>,
    pub k: Option<usize>,
}

impl UserState {
    const OPEN: UserState = UserState {
        decided: false,
        verdict: None,
        chunk: None,
        k: None,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub log: DecisionLog,
    pub states: Vec<UserState>,
    pub trace: Vec<TraceRow>,
}

fn has_content(prefix: &[Message]) -> bool {
    prefix.iter().any(|m| !m.is_empty())
}

pub fn run_simulation<P: Predictor + ?Sized>(
    users: &[UserRecord],
    predictor: &P,
    policy: &DecisionPolicy,
) -> Result<SimulationResult> {
    policy.validate()?;
    let truths = users
        .iter()
        .map(UserRecord::require_label)
        .collect::<Result<Vec<_>>>()?;
    let bounds = users
        .iter()
        .map(|u| {
            if u.messages.is_empty() {
                return Err(Error::Validation(format!(
                    "user {} has no messages",
                    u.user_id
                )));
            }
            chunk_boundaries(u.messages.len(), policy.n_chunks)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut states = vec![UserState::OPEN; users.len()];
    let mut trace = Vec::new();
    for chunk in 1..=policy.n_chunks {
        let last = chunk == policy.n_chunks;
        if policy.mode == PolicyMode::Wait && !last {
            continue;
        }
        let open: Vec<usize> = (0..users.len()).filter(|&i| !states[i].decided).collect();
        let scores = open
            .par_iter()
            .map(|&i| {
                let user = &users[i];
                let prefix = &user.messages[..bounds[i][chunk - 1]];
                if !has_content(prefix) {
                    return Ok(None);
                }
                let wrap = |source: Error| Error::Predictor {
                    user_id: user.user_id.clone(),
                    chunk,
                    source: Box::new(source),
                };
                match predictor.predict(user, prefix) {
                    Ok(Some(p)) if !(0.0..=1.0).contains(&p) => Err(wrap(Error::Validation(
                        format!("probability {p} outside [0, 1]"),
                    ))),
                    Ok(p) => Ok(p),
                    Err(e) => Err(wrap(e)),
                }
            })
            .collect::<Result<Vec<Option<f64>>>>()?;

        for (&i, probability) in open.iter().zip(scores) {
            let user = &users[i];
            let read = bounds[i][chunk - 1];
            let mut note = None;
            let decision = match probability {
                Some(p) if p > policy.threshold => Some((Label::Positive, read)),
                Some(_) if last => Some((Label::Negative, user.messages.len())),
                None if last => {
                    note = Some("no content in any released message; decided negative".to_string());
                    Some((Label::Negative, user.messages.len()))
                }
                None => {
                    note = Some("no content yet".to_string());
                    None
                }
                Some(_) => None,
            };
            if let Some((verdict, k)) = decision {
                states[i] = UserState {
                    decided: true,
                    verdict: Some(verdict),
                    chunk: Some(chunk),
                    k: Some(k),
                };
            }
            trace.push(TraceRow {
                chunk,
                user_id: user.user_id.clone(),
                probability,
                decided: states[i].decided,
                verdict: states[i].verdict,
                k: states[i].k,
                note,
            });
        }
    }

    let records = users
        .iter()
        .zip(&states)
        .zip(truths)
        .map(|((u, s), truth)| DecisionRecord {
            user_id: u.user_id.clone(),
            truth,
            verdict: s.verdict.expect("every user is decided at the last chunk"),
            k: s.k.expect("every user is decided at the last chunk"),
            n_d: u.messages.len(),
        })
        .collect();
    Ok(SimulationResult {
        log: DecisionLog::new(records)?,
        states,
        trace,
    })
}

/// Writes one JSON object per trace row.
pub fn write_trace_jsonl<W: Write>(mut writer: W, trace: &[TraceRow]) -> Result<()> {
    for row in trace {
        serde_json::to_writer(&mut writer, row)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<trace>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<trace>", e))
}

/// Remembers scores by user and prefix length so that repeated runs over
/// the same users score each prefix once.
pub struct CachedPredictor<P> {
    inner: P,
    cache: Mutex<HashMap<(String, usize), Option<f64>>>,
}

impl<P: Predictor> CachedPredictor<P> {
    pub fn new(inner: P) -> Self {
        CachedPredictor {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl<P: Predictor> Predictor for CachedPredictor<P> {
    fn predict(&self, user: &UserRecord, prefix: &[Message]) -> Result<Option<f64>> {
        let key = (user.user_id.clone(), prefix.len());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let p = self.inner.predict(user, prefix)?;
        self.cache.lock().expect("cache lock").insert(key, p);
        Ok(p)
    }

    fn source(&self) -> PredictionSource {
        self.inner.source()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub report: MetricReport,
    /// Metrics for which this row is the best (lowest ERDE, highest
    /// F1/P/R/F_latency). Ties go to the lowest threshold.
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: PolicyMode,
    pub rows: Vec<SweepRow>,
}

/// One full simulation per threshold, sorted by threshold.
pub fn sweep_thresholds<P: Predictor>(
    users: &[UserRecord],
    predictor: &P,
    thresholds: &[f64],
    mode: PolicyMode,
    n_chunks: usize,
    report: &ReportConfig,
) -> Result<SweepTable> {
    if thresholds.is_empty() {
        return Err(Error::Argument("threshold list is empty".into()));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let cached = CachedPredictor::new(predictor);
    let mut rows = Vec::with_capacity(sorted.len());
    for &threshold in &sorted {
        let policy = DecisionPolicy {
            threshold,
            mode,
            n_chunks,
        };
        let result = run_simulation(users, &cached, &policy)?;
        rows.push(SweepRow {
            threshold,
            report: metric_report(&result.log, report)?,
            best: Vec::new(),
        });
    }
    flag_best(&mut rows);
    Ok(SweepTable { mode, rows })
}

fn flag_best(rows: &mut [SweepRow]) {
    let Some(first) = rows.first() else { return };
    let (head, _) = first.report.table_cells();
    let n_erde = first.report.erde.len();
    for (col, name) in head.iter().enumerate() {
        let value = |r: &SweepRow| {
            if col < n_erde {
                -r.report.erde[col].value
            } else {
                match col - n_erde {
                    0 => r.report.f1,
                    1 => r.report.precision,
                    2 => r.report.recall,
                    _ => r.report.f_latency.score,
                }
            }
        };
        let mut best = 0;
        for i in 1..rows.len() {
            if value(&rows[i]) > value(&rows[best]) {
                best = i;
            }
        }
        rows[best].best.push(name.clone());
    }
}

/// Correct verdicts for every user, all issued after releasing chunk
/// `after_chunk`. Users with nothing released by then decide at their
/// first non-empty chunk.
pub fn perfect_prediction_log(
    users: &[UserRecord],
    after_chunk: usize,
    n_chunks: usize,
) -> Result<DecisionLog> {
    if after_chunk < 1 || after_chunk > n_chunks {
        return Err(Error::Argument(format!(
            "chunk {after_chunk} not in 1..={n_chunks}"
        )));
    }
    let records = users
        .iter()
        .map(|u| {
            let truth = u.require_label()?;
            let bounds = chunk_boundaries(u.messages.len(), n_chunks)?;
            let k = bounds[after_chunk - 1..]
                .iter()
                .copied()
                .find(|&k| k > 0)
                .ok_or_else(|| Error::Validation(format!("user {} has no messages", u.user_id)))?;
            Ok(DecisionRecord {
                user_id: u.user_id.clone(),
                truth,
                verdict: truth,
                k,
                n_d: u.messages.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DecisionLog::new(records)
}
