//! Churn reports: building, canonical serialization, parsing, diffing and
//! ranking.
//!
//! A report is written as canonical JSON (see [`canonical`]) in a file
//! ending in `.churn.json`. The schema is described in
//! `schema/churn-report.schema.json` at the crate root.

pub mod canonical;
mod diff;
mod wire;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::IgnoredAny;

use crate::aggregation::{merge_threads, span_churn, AggregationError, MarkerChurn};
use crate::cost_model::{validate_cost_model, AllocFnKind, CostModel};
use crate::event_capture::{Anomalies, ThreadId};
use crate::scalar::ChurnScalar;
use crate::session::SealedThread;

use canonical::{quantize, Canon};
use wire::{churn_canon, per_kind, ReportDoc, VersionProbe};

pub use diff::{
    diff_reports, parse_verdict, rank_regressions, rank_with, serialize_verdict, ChurnDelta,
    DeltaStatus, DiffError, RankKey, RankOptions, RegressionVerdict, Thresholds, TieBreak,
};

pub const SCHEMA_VERSION: &str = "1";
pub const REPORT_EXTENSION: &str = ".churn.json";
/// Largest accepted gap between a merged cost and the sum of its parts.
pub const MERGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("syntax error at byte {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at byte {offset}: {message}")]
    Schema { offset: usize, message: String },
    #[error("unsupported schema_version {0}")]
    UnsupportedVersion(String),
    #[error("duplicate phase `{0}`")]
    DuplicatePhase(String),
    #[error("merged record `{phase}` does not match the sum of its per-thread parts: {detail}")]
    MergeInconsistent { phase: String, detail: String },
    #[error("invalid value for {field}: {detail}")]
    InvalidValue { field: String, detail: String },
}

/// Blocks still live when the recording threads were sealed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Outstanding {
    pub blocks: u64,
    pub bytes: u64,
}

/// Identity of a report that does not take part in canonical comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportMeta {
    pub build_id: String,
    pub created_at: DateTime<Utc>,
}

impl ReportMeta {
    pub fn new(build_id: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Self {
            build_id: build_id.into(),
            created_at,
        }
    }

    pub fn at_epoch(build_id: impl Into<String>, epoch_secs: i64) -> Self {
        Self::new(
            build_id,
            DateTime::from_timestamp(epoch_secs, 0).unwrap_or_default(),
        )
    }
}

/// The per-build churn artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnReport {
    pub schema_version: String,
    pub meta: ReportMeta,
    pub cost_model: CostModel<f64>,
    /// Phase name to the sum of all its spans on all threads.
    pub merged: BTreeMap<String, MarkerChurn<f64>>,
    /// One record per (thread, phase), ordered by thread then name.
    pub per_thread: Vec<MarkerChurn<f64>>,
    pub anomalies: Anomalies,
    pub outstanding: Outstanding,
}

impl ChurnReport {
    /// Aggregates sealed threads into a report.
    ///
    /// Spans are summed per (thread, name) in span order, each part's cost is
    /// rounded to six decimals, and merged records sum the rounded parts in
    /// thread order. The result is therefore bit-stable and merged records
    /// agree with their parts exactly.
    pub fn from_threads<T: ChurnScalar>(
        threads: &[SealedThread<T>],
        model: &CostModel<T>,
        meta: ReportMeta,
    ) -> Result<Self, AggregationError> {
        let mut ordered: Vec<&SealedThread<T>> = threads.iter().collect();
        ordered.sort_by_key(|t| t.thread_id);

        let mut per_thread = Vec::new();
        let mut anomalies = Anomalies::default();
        let mut outstanding = Outstanding::default();
        for thread in ordered {
            anomalies.merge(&thread.anomalies);
            outstanding.blocks += thread.live_blocks;
            outstanding.bytes += thread.live_bytes;

            let mut spans: Vec<_> = thread.spans.iter().collect();
            spans.sort_by_key(|s| s.span_id);
            let mut by_name: BTreeMap<&str, MarkerChurn<T>> = BTreeMap::new();
            for span in spans {
                let churn = span_churn(span, model)?;
                by_name
                    .entry(&*span.name)
                    .or_insert_with(|| MarkerChurn::empty(&*span.name, Some(thread.thread_id)))
                    .accumulate(&churn);
            }
            per_thread.extend(
                by_name
                    .into_values()
                    .map(|c| c.map_cost(|cost| quantize(cost.to_f64_lossy()))),
            );
        }

        let merged = merge_parts(&per_thread)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            meta,
            cost_model: model.cast(),
            merged,
            per_thread,
            anomalies,
            outstanding,
        })
    }

    /// Sum of all merged records.
    pub fn totals(&self) -> MarkerChurn<f64> {
        let mut total = MarkerChurn::empty("total", None);
        for record in self.merged.values() {
            total.accumulate(record);
        }
        total.cost = quantize(total.cost);
        total
    }

    /// Copy with build id and timestamp blanked, for canonical comparison.
    pub fn without_metadata(&self) -> Self {
        Self {
            meta: ReportMeta::at_epoch("", 0),
            ..self.clone()
        }
    }

    /// Canonical bytes of [`ChurnReport::without_metadata`].
    pub fn canonical_body(&self) -> String {
        serialize_report(&self.without_metadata())
    }
}

fn merge_parts(
    per_thread: &[MarkerChurn<f64>],
) -> Result<BTreeMap<String, MarkerChurn<f64>>, AggregationError> {
    let mut groups: BTreeMap<&str, Vec<MarkerChurn<f64>>> = BTreeMap::new();
    for part in per_thread {
        groups
            .entry(part.name.as_str())
            .or_default()
            .push(part.clone());
    }
    groups
        .into_iter()
        .map(|(name, parts)| {
            let mut merged = merge_threads(&parts)?;
            merged.cost = quantize(merged.cost);
            Ok((name.to_owned(), merged))
        })
        .collect()
}

fn model_canon(model: &CostModel<f64>) -> Canon {
    let mut weights = [0.0; 4];
    for kind in AllocFnKind::ALL {
        weights[kind.index()] = model.weight(kind).unwrap_or(f64::NAN);
    }
    Canon::object([
        (
            "model_version",
            Canon::Str(model.model_version().to_owned()),
        ),
        ("weights", per_kind(&weights, Canon::Fixed)),
    ])
}

fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn serialize_report(report: &ChurnReport) -> String {
    let mut per_thread: Vec<&MarkerChurn<f64>> = report.per_thread.iter().collect();
    per_thread.sort_by(|a, b| (a.thread_id, &a.name).cmp(&(b.thread_id, &b.name)));
    let a = &report.anomalies;
    Canon::object([
        (
            "anomalies",
            Canon::object([
                ("double_alloc", Canon::UInt(a.double_alloc)),
                ("size_overflow", Canon::UInt(a.size_overflow)),
                ("unknown_free", Canon::UInt(a.unknown_free)),
                ("unknown_realloc", Canon::UInt(a.unknown_realloc)),
            ]),
        ),
        ("build_id", Canon::Str(report.meta.build_id.clone())),
        ("cost_model", model_canon(&report.cost_model)),
        (
            "created_at",
            Canon::Str(format_timestamp(&report.meta.created_at)),
        ),
        (
            "merged",
            Canon::object(
                report
                    .merged
                    .iter()
                    .map(|(name, c)| (name.clone(), churn_canon(c, false))),
            ),
        ),
        (
            "outstanding",
            Canon::object([
                ("blocks", Canon::UInt(report.outstanding.blocks)),
                ("bytes", Canon::UInt(report.outstanding.bytes)),
            ]),
        ),
        (
            "per_thread",
            Canon::Array(
                per_thread
                    .into_iter()
                    .map(|c| churn_canon(c, true))
                    .collect(),
            ),
        ),
        ("schema_version", Canon::Str(report.schema_version.clone())),
    ])
    .to_document()
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(doc: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = doc.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(doc.len())
}

pub(crate) fn json_error(doc: &str, e: serde_json::Error) -> ReportError {
    let offset = byte_offset(doc, e.line(), e.column());
    let message = e.to_string();
    if e.is_data() {
        ReportError::Schema { offset, message }
    } else {
        ReportError::Syntax {
            offset,
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

/// Syntax pass plus version gate shared by reports and verdicts.
pub(crate) fn check_version(doc: &str) -> Result<(), ReportError> {
    serde_json::from_str::<IgnoredAny>(doc).map_err(|e| json_error(doc, e))?;
    let probe: VersionProbe = serde_json::from_str(doc).map_err(|e| json_error(doc, e))?;
    match probe.schema_version {
        Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => Ok(()),
        Some(other) => Err(ReportError::UnsupportedVersion(other.to_string())),
        None => Err(ReportError::UnsupportedVersion("<missing>".into())),
    }
}

pub(crate) fn check_cost(field: impl FnOnce() -> String, cost: f64) -> Result<(), ReportError> {
    if cost.is_finite() && cost >= 0.0 {
        Ok(())
    } else {
        Err(ReportError::InvalidValue {
            field: field(),
            detail: format!("cost must be finite and nonnegative, got {cost}"),
        })
    }
}

pub(crate) fn model_from_doc(doc: wire::ModelDoc) -> Result<CostModel<f64>, ReportError> {
    let w = doc.weights.to_array();
    let model = CostModel::from_weights(
        AllocFnKind::ALL.map(|k| (k, w[k.index()])),
        doc.model_version,
    );
    validate_cost_model(&model).map_err(|v| ReportError::InvalidValue {
        field: "cost_model".into(),
        detail: v
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; "),
    })?;
    Ok(model)
}

/// Parses and validates a report document.
pub fn parse_report(doc: &str) -> Result<ChurnReport, ReportError> {
    check_version(doc)?;
    let raw: ReportDoc = serde_json::from_str(doc).map_err(|e| json_error(doc, e))?;

    let created_at = DateTime::parse_from_rfc3339(&raw.created_at)
        .map_err(|e| ReportError::InvalidValue {
            field: "created_at".into(),
            detail: e.to_string(),
        })?
        .with_timezone(&Utc);
    let cost_model = model_from_doc(raw.cost_model)?;

    let mut merged = BTreeMap::new();
    for (name, rec) in raw.merged.0 {
        if rec.thread_id.is_some() || rec.name.as_ref().is_some_and(|n| *n != name) {
            return Err(ReportError::InvalidValue {
                field: format!("merged.{name}"),
                detail: "merged records carry no thread_id and no differing name".into(),
            });
        }
        check_cost(|| format!("merged.{name}.cost"), rec.cost)?;
        if merged.contains_key(&name) {
            return Err(ReportError::DuplicatePhase(name));
        }
        let churn = rec.into_churn(name.clone());
        merged.insert(name, churn);
    }

    let mut seen = BTreeSet::new();
    let mut per_thread = Vec::with_capacity(raw.per_thread.len());
    for (i, rec) in raw.per_thread.into_iter().enumerate() {
        let (Some(name), Some(t)) = (rec.name.clone(), rec.thread_id) else {
            return Err(ReportError::InvalidValue {
                field: format!("per_thread[{i}]"),
                detail: "per-thread records need name and thread_id".into(),
            });
        };
        check_cost(|| format!("per_thread[{i}].cost"), rec.cost)?;
        if !seen.insert((t, name.clone())) {
            return Err(ReportError::DuplicatePhase(format!(
                "{name} on {}",
                ThreadId(t)
            )));
        }
        per_thread.push(rec.into_churn(name));
    }

    check_merge_consistency(&merged, &per_thread)?;

    Ok(ChurnReport {
        schema_version: raw.schema_version,
        meta: ReportMeta {
            build_id: raw.build_id,
            created_at,
        },
        cost_model,
        merged,
        per_thread,
        anomalies: raw.anomalies.into(),
        outstanding: Outstanding {
            blocks: raw.outstanding.blocks,
            bytes: raw.outstanding.bytes,
        },
    })
}

fn check_merge_consistency(
    merged: &BTreeMap<String, MarkerChurn<f64>>,
    per_thread: &[MarkerChurn<f64>],
) -> Result<(), ReportError> {
    let mut sums: BTreeMap<&str, MarkerChurn<f64>> = BTreeMap::new();
    for part in per_thread {
        sums.entry(part.name.as_str())
            .or_insert_with(|| MarkerChurn::empty(part.name.clone(), None))
            .accumulate(part);
    }
    for name in sums.keys() {
        if !merged.contains_key(*name) {
            return Err(ReportError::MergeInconsistent {
                phase: (*name).to_owned(),
                detail: "per-thread parts have no merged record".into(),
            });
        }
    }
    for (name, m) in merged {
        let sum = sums
            .remove(name.as_str())
            .unwrap_or_else(|| MarkerChurn::empty(name.clone(), None));
        let fail = |detail: String| ReportError::MergeInconsistent {
            phase: name.clone(),
            detail,
        };
        if (m.cost - sum.cost).abs() > MERGE_TOLERANCE {
            return Err(fail(format!("cost {} vs parts {}", m.cost, sum.cost)));
        }
        if m.calls != sum.calls || m.bytes != sum.bytes {
            return Err(fail("per-kind counters differ".into()));
        }
        if m.bytes_allocated != sum.bytes_allocated || m.bytes_freed != sum.bytes_freed {
            return Err(fail("byte totals differ".into()));
        }
        if m.overflow != sum.overflow || m.auto_closed != sum.auto_closed {
            return Err(fail("flags differ".into()));
        }
    }
    Ok(())
}
