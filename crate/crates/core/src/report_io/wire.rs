//! Serde shapes of the on-disk documents. Only used for parsing; writing
//! goes through [`Canon`](super::canonical::Canon).

use std::fmt;
use std::marker::PhantomData;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::aggregation::MarkerChurn;
use crate::cost_model::AllocFnKind;
use crate::event_capture::{Anomalies, ThreadId};

use super::canonical::Canon;

/// Object whose keys are kept in document order, duplicates included.
#[derive(Debug)]
pub(crate) struct Entries<V>(pub Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for Entries<V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V2<V>(PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for V2<V> {
            type Value = Entries<V>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V2(PhantomData))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PerKind<N> {
    pub calloc: N,
    pub free: N,
    pub malloc: N,
    pub realloc: N,
}

impl<N: Copy> PerKind<N> {
    pub fn to_array(&self) -> [N; 4] {
        let mut out = [self.malloc; 4];
        out[AllocFnKind::Calloc.index()] = self.calloc;
        out[AllocFnKind::Realloc.index()] = self.realloc;
        out[AllocFnKind::Free.index()] = self.free;
        out
    }
}

pub(crate) fn per_kind<N: Copy>(values: &[N; 4], wrap: impl Fn(N) -> Canon) -> Canon {
    Canon::object(AllocFnKind::ALL.map(|k| (k.as_str(), wrap(values[k.index()]))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ChurnDoc {
    pub auto_closed: bool,
    pub bytes_allocated: u64,
    pub bytes_by_kind: PerKind<u64>,
    pub bytes_freed: u64,
    pub calls: PerKind<u64>,
    pub cost: f64,
    pub overflow: bool,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub thread_id: Option<u32>,
}

impl ChurnDoc {
    pub fn into_churn(self, name: String) -> MarkerChurn<f64> {
        MarkerChurn {
            name,
            thread_id: self.thread_id.map(ThreadId),
            cost: self.cost,
            calls: self.calls.to_array(),
            bytes: self.bytes_by_kind.to_array(),
            bytes_allocated: self.bytes_allocated,
            bytes_freed: self.bytes_freed,
            overflow: self.overflow,
            auto_closed: self.auto_closed,
        }
    }
}

/// Canonical form of a churn record. `with_name` adds the name field,
/// which merged records carry as their key instead.
pub(crate) fn churn_canon(c: &MarkerChurn<f64>, with_name: bool) -> Canon {
    let mut fields = vec![
        ("auto_closed", Canon::Bool(c.auto_closed)),
        ("bytes_allocated", Canon::UInt(c.bytes_allocated)),
        ("bytes_by_kind", per_kind(&c.bytes, Canon::UInt)),
        ("bytes_freed", Canon::UInt(c.bytes_freed)),
        ("calls", per_kind(&c.calls, Canon::UInt)),
        ("cost", Canon::Fixed(c.cost)),
        ("overflow", Canon::Bool(c.overflow)),
    ];
    if with_name {
        fields.push(("name", Canon::Str(c.name.clone())));
    }
    if let Some(t) = c.thread_id {
        fields.push(("thread_id", Canon::UInt(t.0.into())));
    }
    Canon::object(fields)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ModelDoc {
    pub model_version: String,
    pub weights: PerKind<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct AnomaliesDoc {
    pub double_alloc: u64,
    pub size_overflow: u64,
    pub unknown_free: u64,
    pub unknown_realloc: u64,
}

impl From<AnomaliesDoc> for Anomalies {
    fn from(a: AnomaliesDoc) -> Self {
        Anomalies {
            double_alloc: a.double_alloc,
            unknown_free: a.unknown_free,
            unknown_realloc: a.unknown_realloc,
            size_overflow: a.size_overflow,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct OutstandingDoc {
    pub blocks: u64,
    pub bytes: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ReportDoc {
    pub anomalies: AnomaliesDoc,
    pub build_id: String,
    pub cost_model: ModelDoc,
    pub created_at: String,
    pub merged: Entries<ChurnDoc>,
    pub outstanding: OutstandingDoc,
    pub per_thread: Vec<ChurnDoc>,
    pub schema_version: String,
}

/// First pass over any document: only the version is looked at.
#[derive(Debug, Deserialize)]
pub(crate) struct VersionProbe {
    pub schema_version: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ThresholdsDoc {
    pub abs_floor: f64,
    pub rel: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct DeltaDoc {
    pub baseline: Option<ChurnDoc>,
    pub byte_delta: PerKind<i64>,
    pub call_delta: PerKind<i64>,
    pub candidate: Option<ChurnDoc>,
    pub cost_delta_abs: f64,
    pub cost_delta_rel: Option<f64>,
    pub phase: String,
    pub status: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct VerdictDoc {
    pub entries: Vec<DeltaDoc>,
    pub model_version: String,
    pub regression: bool,
    #[serde(rename = "schema_version")]
    pub _schema_version: String,
    pub thresholds: ThresholdsDoc,
}
