//! Baseline-versus-candidate comparison and investigation ranking.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::aggregation::MarkerChurn;

use super::canonical::{quantize, Canon};
use super::wire::{churn_canon, per_kind, VerdictDoc};
use super::{check_cost, check_version, json_error, ChurnReport, ReportError, SCHEMA_VERSION};

/// Default relative threshold: 1%.
pub const DEFAULT_REL_THRESHOLD: f64 = 0.01;
/// Default absolute floor for phases with zero baseline cost.
pub const DEFAULT_ABS_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// A phase regresses when candidate/baseline - 1 exceeds this.
    pub rel: f64,
    /// With a zero baseline, a phase regresses when its candidate cost
    /// exceeds this.
    pub abs_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rel: DEFAULT_REL_THRESHOLD,
            abs_floor: DEFAULT_ABS_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeltaStatus {
    Regression,
    Improvement,
    Neutral,
    NewPhase,
    RemovedPhase,
}

impl DeltaStatus {
    pub const fn as_str(self) -> &'static str {
        match self {
            DeltaStatus::Regression => "regression",
            DeltaStatus::Improvement => "improvement",
            DeltaStatus::Neutral => "neutral",
            DeltaStatus::NewPhase => "new_phase",
            DeltaStatus::RemovedPhase => "removed_phase",
        }
    }

    /// Position of the status group in the ranking.
    fn rank_group(self) -> u8 {
        match self {
            DeltaStatus::Regression => 0,
            DeltaStatus::NewPhase => 1,
            DeltaStatus::Improvement => 2,
            DeltaStatus::Neutral => 3,
            DeltaStatus::RemovedPhase => 4,
        }
    }
}

impl fmt::Display for DeltaStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeltaStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            DeltaStatus::Regression,
            DeltaStatus::Improvement,
            DeltaStatus::Neutral,
            DeltaStatus::NewPhase,
            DeltaStatus::RemovedPhase,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown status `{s}`"))
    }
}

/// Comparison of one phase between two builds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnDelta {
    pub phase: String,
    pub baseline: Option<MarkerChurn<f64>>,
    pub candidate: Option<MarkerChurn<f64>>,
    pub cost_delta_abs: f64,
    /// candidate / baseline - 1, rounded to six decimals. `None` when the
    /// baseline cost is zero and the candidate cost is not.
    pub cost_delta_rel: Option<f64>,
    /// Per kind, indexed by [`crate::AllocFnKind::index`].
    pub call_delta: [i64; 4],
    pub byte_delta: [i64; 4],
    pub status: DeltaStatus,
}

impl ChurnDelta {
    pub fn baseline_cost(&self) -> f64 {
        self.baseline.as_ref().map_or(0.0, |c| c.cost)
    }

    pub fn candidate_cost(&self) -> f64 {
        self.candidate.as_ref().map_or(0.0, |c| c.cost)
    }

    pub fn byte_delta_total(&self) -> i64 {
        self.byte_delta.iter().sum()
    }

    pub fn call_delta_total(&self) -> i64 {
        self.call_delta.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionVerdict {
    pub thresholds: Thresholds,
    pub model_version: String,
    /// Ranked with the default [`RankOptions`].
    pub entries: Vec<ChurnDelta>,
    pub regression: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("cost models differ (baseline `{baseline}`, candidate `{candidate}`); costs are not comparable")]
    ModelMismatch { baseline: String, candidate: String },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

fn relative(from: f64, to: f64) -> Option<f64> {
    if from > 0.0 {
        Some(quantize(to / from - 1.0))
    } else if to == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn signed_delta(base: u64, cand: u64) -> i64 {
    (i128::from(cand) - i128::from(base)).clamp(i64::MIN.into(), i64::MAX.into()) as i64
}

fn classify(
    base: Option<&MarkerChurn<f64>>,
    cand: Option<&MarkerChurn<f64>>,
    rel: Option<f64>,
    t: &Thresholds,
) -> DeltaStatus {
    let (Some(b), Some(c)) = (base, cand) else {
        return if base.is_none() {
            DeltaStatus::NewPhase
        } else {
            DeltaStatus::RemovedPhase
        };
    };
    let regressed = match rel {
        Some(r) => r > t.rel,
        None => c.cost > t.abs_floor,
    };
    if regressed {
        return DeltaStatus::Regression;
    }
    let improved = match relative(c.cost, b.cost) {
        Some(r) => r > t.rel,
        None => b.cost > t.abs_floor,
    };
    if improved {
        DeltaStatus::Improvement
    } else {
        DeltaStatus::Neutral
    }
}

fn delta(
    phase: &str,
    base: Option<&MarkerChurn<f64>>,
    cand: Option<&MarkerChurn<f64>>,
    t: &Thresholds,
) -> ChurnDelta {
    let zero = MarkerChurn::empty(phase, None);
    let (b, c) = (base.unwrap_or(&zero), cand.unwrap_or(&zero));
    let mut call_delta = [0; 4];
    let mut byte_delta = [0; 4];
    for i in 0..4 {
        call_delta[i] = signed_delta(b.calls[i], c.calls[i]);
        byte_delta[i] = signed_delta(b.bytes[i], c.bytes[i]);
    }
    let rel = relative(b.cost, c.cost);
    ChurnDelta {
        phase: phase.to_owned(),
        baseline: base.cloned(),
        candidate: cand.cloned(),
        cost_delta_abs: quantize(c.cost - b.cost),
        cost_delta_rel: rel,
        call_delta,
        byte_delta,
        status: classify(base, cand, rel, t),
    }
}

/// Compares two reports phase by phase on their merged records.
pub fn diff_reports(
    baseline: &ChurnReport,
    candidate: &ChurnReport,
    thresholds: Thresholds,
) -> Result<RegressionVerdict, DiffError> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !ok(thresholds.rel) || !ok(thresholds.abs_floor) {
        return Err(DiffError::InvalidThresholds(format!("{thresholds:?}")));
    }
    if baseline.cost_model != candidate.cost_model {
        return Err(DiffError::ModelMismatch {
            baseline: baseline.cost_model.model_version().to_owned(),
            candidate: candidate.cost_model.model_version().to_owned(),
        });
    }
    let phases: BTreeSet<&String> = baseline
        .merged
        .keys()
        .chain(candidate.merged.keys())
        .collect();
    let entries: Vec<ChurnDelta> = phases
        .into_iter()
        .map(|p| {
            delta(
                p,
                baseline.merged.get(p),
                candidate.merged.get(p),
                &thresholds,
            )
        })
        .collect();
    Ok(RegressionVerdict {
        thresholds,
        model_version: baseline.cost_model.model_version().to_owned(),
        regression: entries.iter().any(|e| e.status == DeltaStatus::Regression),
        entries: rank_with(&entries, RankOptions::default()),
    })
}

/// Primary ordering key inside the regression, improvement and neutral
/// groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RankKey {
    /// Descending relative cost delta; an undefined delta ranks highest.
    #[default]
    Relative,
    /// Descending absolute cost delta.
    Absolute,
}

/// Secondary key, applied when primary keys are equal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Descending magnitude of the total byte delta.
    #[default]
    Bytes,
    /// Descending magnitude of the total call delta.
    Calls,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankOptions {
    pub key: RankKey,
    pub tie_break: TieBreak,
}

/// Default ranking: regressions, then new phases, improvements, neutral
/// phases and removed phases. Regressions, improvements and neutral phases
/// are ordered by descending relative delta, then descending |byte delta
/// total|, then phase name. New phases are ordered by descending candidate
/// cost and removed phases by descending baseline cost, both then by name.
pub fn rank_regressions(verdict: &RegressionVerdict) -> Vec<ChurnDelta> {
    rank_with(&verdict.entries, RankOptions::default())
}

pub fn rank_with(entries: &[ChurnDelta], opts: RankOptions) -> Vec<ChurnDelta> {
    let mut out = entries.to_vec();
    out.sort_by(|a, b| compare(a, b, opts));
    out
}

fn compare(a: &ChurnDelta, b: &ChurnDelta, opts: RankOptions) -> Ordering {
    let group = a.status.rank_group().cmp(&b.status.rank_group());
    if group != Ordering::Equal {
        return group;
    }
    let desc = |x: f64, y: f64| y.total_cmp(&x);
    let keyed = match a.status {
        DeltaStatus::NewPhase => desc(a.candidate_cost(), b.candidate_cost()),
        DeltaStatus::RemovedPhase => desc(a.baseline_cost(), b.baseline_cost()),
        _ => {
            let primary = |d: &ChurnDelta| match opts.key {
                RankKey::Relative => d.cost_delta_rel.unwrap_or(f64::INFINITY),
                RankKey::Absolute => d.cost_delta_abs,
            };
            let tie = |d: &ChurnDelta| match opts.tie_break {
                TieBreak::Bytes => d.byte_delta_total().unsigned_abs(),
                TieBreak::Calls => d.call_delta_total().unsigned_abs(),
            };
            desc(primary(a), primary(b)).then_with(|| tie(b).cmp(&tie(a)))
        }
    };
    keyed.then_with(|| a.phase.cmp(&b.phase))
}

fn delta_canon(d: &ChurnDelta) -> Canon {
    let side =
        |c: &Option<MarkerChurn<f64>>| c.as_ref().map_or(Canon::Null, |c| churn_canon(c, false));
    Canon::object([
        ("baseline", side(&d.baseline)),
        ("byte_delta", per_kind(&d.byte_delta, Canon::Int)),
        ("call_delta", per_kind(&d.call_delta, Canon::Int)),
        ("candidate", side(&d.candidate)),
        ("cost_delta_abs", Canon::Fixed(d.cost_delta_abs)),
        ("cost_delta_rel", Canon::opt_fixed(d.cost_delta_rel)),
        ("phase", Canon::Str(d.phase.clone())),
        ("status", Canon::Str(d.status.as_str().to_owned())),
    ])
}

/// Canonical JSON of a verdict; entries keep their current order.
pub fn serialize_verdict(v: &RegressionVerdict) -> String {
    Canon::object([
        (
            "entries",
            Canon::Array(v.entries.iter().map(delta_canon).collect()),
        ),
        ("model_version", Canon::Str(v.model_version.clone())),
        ("regression", Canon::Bool(v.regression)),
        ("schema_version", Canon::Str(SCHEMA_VERSION.to_owned())),
        (
            "thresholds",
            Canon::object([
                ("abs_floor", Canon::Fixed(v.thresholds.abs_floor)),
                ("rel", Canon::Fixed(v.thresholds.rel)),
            ]),
        ),
    ])
    .to_document()
}

pub fn parse_verdict(doc: &str) -> Result<RegressionVerdict, ReportError> {
    check_version(doc)?;
    let raw: VerdictDoc = serde_json::from_str(doc).map_err(|e| json_error(doc, e))?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    let mut seen = BTreeSet::new();
    for e in raw.entries {
        if !seen.insert(e.phase.clone()) {
            return Err(ReportError::DuplicatePhase(e.phase));
        }
        let status: DeltaStatus = e
            .status
            .parse()
            .map_err(|detail| ReportError::InvalidValue {
                field: format!("entries.{}.status", e.phase),
                detail,
            })?;
        let side = |c: Option<super::wire::ChurnDoc>, which: &str| -> Result<_, ReportError> {
            c.map(|c| {
                check_cost(|| format!("entries.{}.{which}.cost", e.phase), c.cost)?;
                Ok(c.into_churn(e.phase.clone()))
            })
            .transpose()
        };
        entries.push(ChurnDelta {
            baseline: side(e.baseline, "baseline")?,
            candidate: side(e.candidate, "candidate")?,
            cost_delta_abs: e.cost_delta_abs,
            cost_delta_rel: e.cost_delta_rel,
            call_delta: e.call_delta.to_array(),
            byte_delta: e.byte_delta.to_array(),
            status,
            phase: e.phase,
        });
    }
    let regression = entries.iter().any(|e| e.status == DeltaStatus::Regression);
    if regression != raw.regression {
        return Err(ReportError::InvalidValue {
            field: "regression".into(),
            detail: "flag disagrees with entry statuses".into(),
        });
    }
    Ok(RegressionVerdict {
        thresholds: Thresholds {
            rel: raw.thresholds.rel,
            abs_floor: raw.thresholds.abs_floor,
        },
        model_version: raw.model_version,
        entries,
        regression,
    })
}
