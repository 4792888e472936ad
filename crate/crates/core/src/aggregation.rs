//! Churn of closed spans and merging of per-thread parts.

use crate::cost_model::{AllocFnKind, CostModel};
use crate::event_capture::{CounterSnapshot, ThreadId};
use crate::markers::{MarkerSpan, SpanId};
use crate::scalar::ChurnScalar;

/// Aggregated churn of one span, or of several spans sharing a name.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerChurn<T> {
    pub name: String,
    /// Absent on merged records.
    pub thread_id: Option<ThreadId>,
    pub cost: T,
    /// Calls per kind, indexed by [`AllocFnKind::index`].
    pub calls: [u64; 4],
    /// Effective bytes per kind.
    pub bytes: [u64; 4],
    pub bytes_allocated: u64,
    pub bytes_freed: u64,
    /// The thread's event ring dropped events while the span was open.
    pub overflow: bool,
    pub auto_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("span {0} is still open")]
    SpanOpen(SpanId),
    #[error("span {0} was recorded under a different cost model")]
    ModelMismatch(SpanId),
    #[error("cannot merge `{found}` into phase `{expected}`")]
    NameMismatch { expected: String, found: String },
    #[error("nothing to merge")]
    Empty,
}

impl<T: ChurnScalar> MarkerChurn<T> {
    pub fn empty(name: impl Into<String>, thread_id: Option<ThreadId>) -> Self {
        Self {
            name: name.into(),
            thread_id,
            cost: T::zero(),
            calls: [0; 4],
            bytes: [0; 4],
            bytes_allocated: 0,
            bytes_freed: 0,
            overflow: false,
            auto_closed: false,
        }
    }

    pub fn calls_of(&self, kind: AllocFnKind) -> u64 {
        self.calls[kind.index()]
    }

    pub fn bytes_of(&self, kind: AllocFnKind) -> u64 {
        self.bytes[kind.index()]
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.iter().sum()
    }

    /// Adds counters and cost of `other`; flags are OR-ed. Name and thread
    /// are left untouched.
    pub fn accumulate(&mut self, other: &MarkerChurn<T>) {
        self.cost = self.cost + other.cost;
        for i in 0..4 {
            self.calls[i] += other.calls[i];
            self.bytes[i] += other.bytes[i];
        }
        self.bytes_allocated += other.bytes_allocated;
        self.bytes_freed += other.bytes_freed;
        self.overflow |= other.overflow;
        self.auto_closed |= other.auto_closed;
    }

    pub fn map_cost<U: ChurnScalar>(&self, f: impl FnOnce(T) -> U) -> MarkerChurn<U> {
        MarkerChurn {
            name: self.name.clone(),
            thread_id: self.thread_id,
            cost: f(self.cost),
            calls: self.calls,
            bytes: self.bytes,
            bytes_allocated: self.bytes_allocated,
            bytes_freed: self.bytes_freed,
            overflow: self.overflow,
            auto_closed: self.auto_closed,
        }
    }
}

/// Churn of the events recorded between two snapshots of one recorder.
pub fn churn_between<T: ChurnScalar>(
    name: impl Into<String>,
    thread_id: Option<ThreadId>,
    start: &CounterSnapshot<T>,
    end: &CounterSnapshot<T>,
) -> MarkerChurn<T> {
    let mut calls = [0; 4];
    let mut bytes = [0; 4];
    for i in 0..4 {
        calls[i] = end.calls[i] - start.calls[i];
        bytes[i] = end.bytes[i] - start.bytes[i];
    }
    MarkerChurn {
        name: name.into(),
        thread_id,
        cost: end.cost - start.cost,
        calls,
        bytes,
        bytes_allocated: end.bytes_allocated - start.bytes_allocated,
        bytes_freed: end.bytes_freed - start.bytes_freed,
        overflow: end.overflow_count > start.overflow_count,
        auto_closed: false,
    }
}

/// Churn of a closed span. `model` must be the model the span was
/// recorded under.
pub fn span_churn<T: ChurnScalar>(
    span: &MarkerSpan<T>,
    model: &CostModel<T>,
) -> Result<MarkerChurn<T>, AggregationError> {
    let end = span
        .end
        .as_ref()
        .ok_or(AggregationError::SpanOpen(span.span_id))?;
    if *span.model != *model {
        return Err(AggregationError::ModelMismatch(span.span_id));
    }
    let mut churn = churn_between(&*span.name, Some(span.thread_id), &span.start, end);
    churn.auto_closed = span.auto_closed;
    Ok(churn)
}

/// Sums parts that share a name into one thread-less record, in the order
/// given.
pub fn merge_threads<T: ChurnScalar>(
    parts: &[MarkerChurn<T>],
) -> Result<MarkerChurn<T>, AggregationError> {
    let first = parts.first().ok_or(AggregationError::Empty)?;
    let mut merged = MarkerChurn::empty(first.name.clone(), None);
    for part in parts {
        if part.name != first.name {
            return Err(AggregationError::NameMismatch {
                expected: first.name.clone(),
                found: part.name.clone(),
            });
        }
        merged.accumulate(part);
    }
    Ok(merged)
}
