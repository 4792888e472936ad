//! Named marker spans on one thread's event timeline.
//!
//! Spans on a thread may nest or partially overlap. Each span stores the
//! recorder snapshot taken at open and at close; its churn is the
//! difference of the two.

use std::fmt;
use std::sync::Arc;

use crate::cost_model::CostModel;
use crate::event_capture::{CounterSnapshot, ReentrancyGuard, ThreadId, ThreadRecorder};
use crate::scalar::ChurnScalar;

pub const MAX_NAME_LEN: usize = 128;
/// Names with this prefix are reserved for the toolkit.
pub const RESERVED_PREFIX: &str = "churnscope.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanId {
    pub thread: ThreadId,
    pub index: u32,
}

impl fmt::Display for SpanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.thread, self.index)
    }
}

/// Returned by `begin`, consumed by `end`. Plain data, so it can be sent
/// to another thread; closing it there is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpanHandle(pub(crate) SpanId);

impl SpanHandle {
    pub fn id(&self) -> SpanId {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkerError {
    #[error("span {span} belongs to thread {owner}, not {caller}")]
    ThreadMismatch {
        span: SpanId,
        owner: ThreadId,
        caller: ThreadId,
    },
    #[error("span {0} is already closed")]
    AlreadyClosed(SpanId),
    #[error("span {0} does not exist")]
    UnknownSpan(SpanId),
    #[error("invalid marker name: {0}")]
    InvalidName(String),
}

/// Checks a user-supplied marker name.
pub fn validate_name(name: &str) -> Result<(), MarkerError> {
    if name.is_empty() {
        return Err(MarkerError::InvalidName("name is empty".into()));
    }
    if name.len() > MAX_NAME_LEN {
        return Err(MarkerError::InvalidName(format!(
            "name is {} bytes, limit is {MAX_NAME_LEN}",
            name.len()
        )));
    }
    if name.starts_with(RESERVED_PREFIX) {
        return Err(MarkerError::InvalidName(format!(
            "`{name}` uses the reserved prefix `{RESERVED_PREFIX}`"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MarkerSpan<T> {
    pub span_id: SpanId,
    /// Shared so that clones handed out while a global hook is active do
    /// not allocate.
    pub name: Arc<str>,
    pub thread_id: ThreadId,
    pub start: CounterSnapshot<T>,
    pub end: Option<CounterSnapshot<T>>,
    /// Innermost span open on the same thread when this one opened. Cleared
    /// at close if that span had already closed, so a set parent always
    /// contains this span's interval.
    pub parent: Option<SpanId>,
    /// Closed by sealing rather than by an explicit `end`.
    pub auto_closed: bool,
    pub model: Arc<CostModel<T>>,
}

impl<T: ChurnScalar> MarkerSpan<T> {
    pub fn is_closed(&self) -> bool {
        self.end.is_some()
    }

    pub fn start_seq(&self) -> u64 {
        self.start.next_seq
    }

    /// Exclusive upper bound of the sequence numbers inside the span.
    pub fn end_seq(&self) -> Option<u64> {
        self.end.map(|e| e.next_seq)
    }
}

/// Span bookkeeping for one thread.
#[derive(Debug)]
pub struct MarkerBook<T> {
    thread_id: ThreadId,
    spans: Vec<MarkerSpan<T>>,
    /// Indices of open spans, in open order.
    open: Vec<u32>,
}

impl<T: ChurnScalar> MarkerBook<T> {
    pub fn new(thread_id: ThreadId) -> Self {
        let _g = ReentrancyGuard::enter();
        Self {
            thread_id,
            spans: Vec::with_capacity(64),
            open: Vec::with_capacity(16),
        }
    }

    pub fn thread_id(&self) -> ThreadId {
        self.thread_id
    }

    pub fn begin(
        &mut self,
        recorder: &ThreadRecorder<T>,
        name: &str,
    ) -> Result<SpanHandle, MarkerError> {
        validate_name(name)?;
        self.check_thread(recorder, None)?;
        let _g = ReentrancyGuard::enter();
        let span_id = SpanId {
            thread: self.thread_id,
            index: self.spans.len() as u32,
        };
        let parent = self.open.last().map(|&i| self.spans[i as usize].span_id);
        self.spans.push(MarkerSpan {
            span_id,
            name: Arc::from(name),
            thread_id: self.thread_id,
            start: recorder.snapshot(),
            end: None,
            parent,
            auto_closed: false,
            model: Arc::clone(recorder.model()),
        });
        self.open.push(span_id.index);
        Ok(SpanHandle(span_id))
    }

    pub fn end(
        &mut self,
        recorder: &ThreadRecorder<T>,
        handle: SpanHandle,
    ) -> Result<&MarkerSpan<T>, MarkerError> {
        let id = handle.0;
        if id.thread != self.thread_id {
            return Err(MarkerError::ThreadMismatch {
                span: id,
                owner: id.thread,
                caller: self.thread_id,
            });
        }
        self.check_thread(recorder, Some(id))?;
        let index = id.index as usize;
        let span = self.spans.get(index).ok_or(MarkerError::UnknownSpan(id))?;
        if span.is_closed() {
            return Err(MarkerError::AlreadyClosed(id));
        }
        let _g = ReentrancyGuard::enter();
        self.close(index, recorder.snapshot(), false);
        Ok(&self.spans[index])
    }

    /// Closes every open span at the current snapshot, marking them
    /// auto-closed. Returns how many were closed.
    pub fn close_all(&mut self, recorder: &ThreadRecorder<T>) -> usize {
        let _g = ReentrancyGuard::enter();
        let snap = recorder.snapshot();
        let open = std::mem::take(&mut self.open);
        for &i in open.iter().rev() {
            self.close(i as usize, snap, true);
        }
        open.len()
    }

    pub fn spans(&self) -> &[MarkerSpan<T>] {
        &self.spans
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn into_spans(self) -> Vec<MarkerSpan<T>> {
        self.spans
    }

    fn close(&mut self, index: usize, snap: CounterSnapshot<T>, auto: bool) {
        self.open.retain(|&i| i as usize != index);
        let parent_open = self.spans[index]
            .parent
            .is_some_and(|p| !self.spans[p.index as usize].is_closed());
        let span = &mut self.spans[index];
        span.end = Some(snap);
        span.auto_closed = auto;
        if !parent_open {
            span.parent = None;
        }
    }

    fn check_thread(
        &self,
        recorder: &ThreadRecorder<T>,
        span: Option<SpanId>,
    ) -> Result<(), MarkerError> {
        if recorder.thread_id() == self.thread_id {
            return Ok(());
        }
        Err(MarkerError::ThreadMismatch {
            span: span.unwrap_or(SpanId {
                thread: self.thread_id,
                index: self.spans.len() as u32,
            }),
            owner: self.thread_id,
            caller: recorder.thread_id(),
        })
    }
}
