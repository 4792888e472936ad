//! Recording sessions: one cost model, many attached threads.
//!
//! Each participating thread calls [`Session::attach`] and gets a
//! [`ThreadContext`]. While attached, every allocator call the thread makes
//! through a [`ChurnAllocator`](crate::ChurnAllocator) lands in that
//! thread's private recorder without locking. Sealing the context (or
//! dropping it) closes orphaned spans and hands the recorder to the
//! session, which is the only point where threads synchronize.

use std::collections::BTreeSet;
use std::marker::PhantomData;
use std::ptr::{self, NonNull};
use std::sync::{Arc, Mutex, PoisonError};

use crate::cost_model::{validate_cost_model, CostModel, CostModelError};
use crate::event_capture::{
    install_sink, uninstall_sink, Anomalies, CounterSnapshot, EventSink, RecorderConfig,
    ReentrancyGuard, ThreadId, ThreadRecorder,
};
use crate::markers::{MarkerBook, MarkerError, MarkerSpan, SpanHandle};
use crate::scalar::ChurnScalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("thread {0} is already attached to this session")]
    DuplicateThread(ThreadId),
    #[error("the current OS thread is already attached to a session")]
    ThreadBusy,
    #[error("threads still attached: {0:?}")]
    Unsealed(Vec<ThreadId>),
}

/// Everything a thread leaves behind once sealed.
#[derive(Debug, Clone)]
pub struct SealedThread<T> {
    pub thread_id: ThreadId,
    pub spans: Vec<MarkerSpan<T>>,
    pub final_snapshot: CounterSnapshot<T>,
    pub anomalies: Anomalies,
    /// Blocks still live in the recorder's table at seal time.
    pub live_blocks: u64,
    pub live_bytes: u64,
}

#[derive(Debug)]
struct Registry<T> {
    attached: BTreeSet<ThreadId>,
    sealed: Vec<SealedThread<T>>,
}

#[derive(Debug)]
pub struct Session<T> {
    model: Arc<CostModel<T>>,
    config: RecorderConfig,
    registry: Arc<Mutex<Registry<T>>>,
}

impl<T: ChurnScalar> Session<T> {
    pub fn new(model: CostModel<T>, config: RecorderConfig) -> Result<Self, CostModelError> {
        validate_cost_model(&model).map_err(CostModelError::Invalid)?;
        Ok(Self {
            model: Arc::new(model),
            config,
            registry: Arc::new(Mutex::new(Registry {
                attached: BTreeSet::new(),
                sealed: Vec::new(),
            })),
        })
    }

    pub fn model(&self) -> &CostModel<T> {
        &self.model
    }

    pub fn config(&self) -> RecorderConfig {
        self.config
    }

    /// Starts recording on the calling thread under `thread_id`.
    pub fn attach(&self, thread_id: ThreadId) -> Result<ThreadContext<T>, SessionError> {
        let _g = ReentrancyGuard::enter();
        {
            let mut reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
            if !reg.attached.insert(thread_id) {
                return Err(SessionError::DuplicateThread(thread_id));
            }
        }
        let state = Box::new(ThreadState {
            recorder: ThreadRecorder::new(thread_id, Arc::clone(&self.model), self.config),
            book: MarkerBook::new(thread_id),
        });
        let state = NonNull::from(Box::leak(state));
        // SAFETY: `state` is a live, uniquely owned allocation; the context
        // only touches it under the guard and uninstalls before freeing it.
        let recorder: *mut ThreadRecorder<T> =
            unsafe { ptr::addr_of_mut!((*state.as_ptr()).recorder) };
        let sink = NonNull::new(recorder as *mut dyn EventSink).expect("non-null");
        if !unsafe { install_sink(sink) } {
            // SAFETY: never installed, so this is the only reference.
            drop(unsafe { Box::from_raw(state.as_ptr()) });
            let mut reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
            reg.attached.remove(&thread_id);
            return Err(SessionError::ThreadBusy);
        }
        Ok(ThreadContext {
            state: Some(state),
            registry: Arc::clone(&self.registry),
            _not_send: PhantomData,
        })
    }

    /// Sealed threads ordered by id. Fails if any thread is still attached.
    pub fn finish(self) -> Result<Vec<SealedThread<T>>, SessionError> {
        let mut reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
        let sealed: BTreeSet<ThreadId> = reg.sealed.iter().map(|s| s.thread_id).collect();
        let pending: Vec<ThreadId> = reg.attached.difference(&sealed).copied().collect();
        if !pending.is_empty() {
            return Err(SessionError::Unsealed(pending));
        }
        let mut threads = std::mem::take(&mut reg.sealed);
        threads.sort_by_key(|s| s.thread_id);
        Ok(threads)
    }
}

struct ThreadState<T> {
    recorder: ThreadRecorder<T>,
    book: MarkerBook<T>,
}

/// A thread's handle on its recorder. Not `Send`: it must be used and
/// sealed on the thread that attached.
pub struct ThreadContext<T: ChurnScalar> {
    state: Option<NonNull<ThreadState<T>>>,
    registry: Arc<Mutex<Registry<T>>>,
    _not_send: PhantomData<*const ()>,
}

impl<T: ChurnScalar> ThreadContext<T> {
    fn with_state<R>(&mut self, f: impl FnOnce(&mut ThreadState<T>) -> R) -> R {
        let _g = ReentrancyGuard::enter();
        let ptr = self.state.expect("context is live until sealed");
        // SAFETY: the guard blocks the interceptor, which is the only other
        // path to this state, and `&mut self` rules out reentry from here.
        f(unsafe { &mut *ptr.as_ptr() })
    }

    pub fn thread_id(&mut self) -> ThreadId {
        self.with_state(|s| s.recorder.thread_id())
    }

    pub fn begin_marker(&mut self, name: &str) -> Result<SpanHandle, MarkerError> {
        self.with_state(|s| s.book.begin(&s.recorder, name))
    }

    pub fn end_marker(&mut self, span: SpanHandle) -> Result<MarkerSpan<T>, MarkerError> {
        self.with_state(|s| s.book.end(&s.recorder, span).cloned())
    }

    /// Runs `f` inside a span named `name`.
    pub fn marker<R>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> R,
    ) -> Result<R, MarkerError> {
        let h = self.begin_marker(name)?;
        let out = f(self);
        self.end_marker(h)?;
        Ok(out)
    }

    pub fn snapshot(&mut self) -> CounterSnapshot<T> {
        self.with_state(|s| s.recorder.snapshot())
    }

    /// Direct access to the recorder, e.g. to feed it events from another
    /// source. Interception is suppressed for the duration.
    pub fn with_recorder<R>(&mut self, f: impl FnOnce(&mut ThreadRecorder<T>) -> R) -> R {
        self.with_state(|s| f(&mut s.recorder))
    }

    /// Stops recording and hands the results to the session.
    pub fn seal(mut self) {
        self.seal_inner();
    }

    fn seal_inner(&mut self) {
        let Some(ptr) = self.state.take() else {
            return;
        };
        let _g = ReentrancyGuard::enter();
        uninstall_sink();
        // SAFETY: uninstalled above; this context held the only pointer.
        let state = unsafe { Box::from_raw(ptr.as_ptr()) };
        let ThreadState { recorder, mut book } = *state;
        book.close_all(&recorder);
        let sealed = SealedThread {
            thread_id: recorder.thread_id(),
            final_snapshot: recorder.snapshot(),
            anomalies: recorder.anomalies(),
            live_blocks: recorder.live_len() as u64,
            live_bytes: recorder.live_bytes(),
            spans: book.into_spans(),
        };
        drop(recorder);
        let mut reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
        reg.sealed.push(sealed);
    }
}

impl<T: ChurnScalar> Drop for ThreadContext<T> {
    fn drop(&mut self) {
        self.seal_inner();
    }
}
