//! Allocator interception and per-thread event recording.
//!
//! A [`ThreadRecorder`] owns everything one thread knows about its allocator
//! activity: running per-kind counters, a cumulative cost accumulator, the
//! live-allocation table used to size `free`/`realloc` calls, and a
//! fixed-size ring of recent events for diagnostics. The counters are the
//! ground truth; the ring may drop events without affecting them.

mod guard;
mod intercept;
mod ring;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost_model::{AllocFnKind, CostModel};
use crate::scalar::ChurnScalar;

pub use guard::{is_held as guard_held, untracked, ReentrancyGuard};
pub(crate) use intercept::{install_sink, uninstall_sink};
pub use intercept::{Block, ChurnAllocator, EventSink};
pub use ring::Ring;

/// Address of an allocator block, used only as an opaque key.
pub type AddrToken = usize;

/// Default number of events kept in each thread's ring.
pub const DEFAULT_RING_CAPACITY: usize = 4096;
/// Environment variable overriding [`DEFAULT_RING_CAPACITY`].
pub const RING_CAPACITY_ENV: &str = "CHURNSCOPE_RING_CAPACITY";
const DEFAULT_LIVE_CAPACITY: usize = 1024;

/// Caller-assigned identifier of a recording thread.
///
/// Identifiers are chosen by the code that attaches the thread rather than
/// taken from the OS, so reports of the same run are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(pub u32);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// One intercepted allocator call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocEvent {
    pub thread_id: ThreadId,
    pub seq: u64,
    pub kind: AllocFnKind,
    /// Effective byte count: requested size, or the released size for `free`.
    pub bytes: u64,
    /// Resulting block. Absent for `free` and for `realloc` to zero bytes.
    pub addr: Option<AddrToken>,
    /// Input block of `free` and `realloc`.
    pub old_addr: Option<AddrToken>,
}

/// Irregularities observed while recording. None of them abort recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomalies {
    /// An allocation returned an address that was already live.
    pub double_alloc: u64,
    /// `free` of a block the recorder never saw allocated.
    pub unknown_free: u64,
    /// `realloc` of a block the recorder never saw allocated.
    pub unknown_realloc: u64,
    /// `calloc` whose byte product did not fit in 64 bits.
    pub size_overflow: u64,
}

impl Anomalies {
    pub fn total(&self) -> u64 {
        self.double_alloc + self.unknown_free + self.unknown_realloc + self.size_overflow
    }

    pub fn merge(&mut self, other: &Anomalies) {
        self.double_alloc += other.double_alloc;
        self.unknown_free += other.unknown_free;
        self.unknown_realloc += other.unknown_realloc;
        self.size_overflow += other.size_overflow;
    }
}

/// Point-in-time copy of a recorder's counters.
///
/// Subtracting two snapshots of the same recorder yields the churn of the
/// events recorded in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterSnapshot<T> {
    pub calls: [u64; 4],
    /// Effective bytes per kind, indexed by [`AllocFnKind::index`].
    pub bytes: [u64; 4],
    pub bytes_allocated: u64,
    pub bytes_freed: u64,
    /// Cumulative cost under the session's cost model.
    pub cost: T,
    pub next_seq: u64,
    pub overflow_count: u64,
    pub anomalies: u64,
}

impl<T: ChurnScalar> CounterSnapshot<T> {
    pub fn zero() -> Self {
        Self {
            calls: [0; 4],
            bytes: [0; 4],
            bytes_allocated: 0,
            bytes_freed: 0,
            cost: T::zero(),
            next_seq: 0,
            overflow_count: 0,
            anomalies: 0,
        }
    }

    pub fn calls_of(&self, kind: AllocFnKind) -> u64 {
        self.calls[kind.index()]
    }

    pub fn bytes_of(&self, kind: AllocFnKind) -> u64 {
        self.bytes[kind.index()]
    }
}

/// Sizing knobs for a recorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecorderConfig {
    pub ring_capacity: usize,
    /// Live-table slots reserved up front.
    pub live_capacity: usize,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        Self {
            ring_capacity: DEFAULT_RING_CAPACITY,
            live_capacity: DEFAULT_LIVE_CAPACITY,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{RING_CAPACITY_ENV} must be a positive integer, got `{0}`")]
pub struct BadRingCapacity(pub String);

impl RecorderConfig {
    /// Default config with the ring capacity taken from the environment
    /// when set.
    pub fn from_env() -> Result<Self, BadRingCapacity> {
        let mut cfg = Self::default();
        if let Ok(raw) = std::env::var(RING_CAPACITY_ENV) {
            cfg.ring_capacity = parse_ring_capacity(&raw)?;
        }
        Ok(cfg)
    }
}

fn parse_ring_capacity(raw: &str) -> Result<usize, BadRingCapacity> {
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(BadRingCapacity(raw.to_owned())),
    }
}

/// All recording state of one thread.
#[derive(Debug)]
pub struct ThreadRecorder<T> {
    thread_id: ThreadId,
    model: Arc<CostModel<T>>,
    counters: CounterSnapshot<T>,
    live: HashMap<AddrToken, u64>,
    ring: Ring<AllocEvent>,
    anomalies: Anomalies,
}

impl<T: ChurnScalar> ThreadRecorder<T> {
    pub fn new(thread_id: ThreadId, model: Arc<CostModel<T>>, config: RecorderConfig) -> Self {
        let _g = ReentrancyGuard::enter();
        Self {
            thread_id,
            model,
            counters: CounterSnapshot::zero(),
            live: HashMap::with_capacity(config.live_capacity),
            ring: Ring::with_capacity(config.ring_capacity),
            anomalies: Anomalies::default(),
        }
    }

    pub fn thread_id(&self) -> ThreadId {
        self.thread_id
    }

    pub fn model(&self) -> &Arc<CostModel<T>> {
        &self.model
    }

    pub fn record_malloc(&mut self, requested: u64, addr: AddrToken) -> AllocEvent {
        let _g = ReentrancyGuard::enter();
        self.track_alloc(addr, requested);
        self.counters.bytes_allocated = self.counters.bytes_allocated.saturating_add(requested);
        self.push(AllocFnKind::Malloc, requested, Some(addr), None)
    }

    pub fn record_calloc(&mut self, count: u64, elem_size: u64, addr: AddrToken) -> AllocEvent {
        let _g = ReentrancyGuard::enter();
        let bytes = count.checked_mul(elem_size).unwrap_or_else(|| {
            self.anomalies.size_overflow += 1;
            u64::MAX
        });
        self.track_alloc(addr, bytes);
        self.counters.bytes_allocated = self.counters.bytes_allocated.saturating_add(bytes);
        self.push(AllocFnKind::Calloc, bytes, Some(addr), None)
    }

    /// Address 0 is the null block: it releases nothing and is not an anomaly.
    pub fn record_free(&mut self, old_addr: AddrToken) -> AllocEvent {
        let _g = ReentrancyGuard::enter();
        let bytes = match self.live.remove(&old_addr) {
            Some(size) => size,
            None => {
                if old_addr != 0 {
                    self.anomalies.unknown_free += 1;
                }
                0
            }
        };
        self.counters.bytes_freed = self.counters.bytes_freed.saturating_add(bytes);
        self.push(AllocFnKind::Free, bytes, None, Some(old_addr))
    }

    /// Charged on the new size as a single event. The released old size is
    /// added to the freed-byte total so allocated minus freed keeps matching
    /// the live table.
    pub fn record_realloc(
        &mut self,
        old_addr: AddrToken,
        requested: u64,
        addr: AddrToken,
    ) -> AllocEvent {
        let _g = ReentrancyGuard::enter();
        let released = match self.live.remove(&old_addr) {
            Some(size) => size,
            None => {
                self.anomalies.unknown_realloc += 1;
                0
            }
        };
        self.counters.bytes_freed = self.counters.bytes_freed.saturating_add(released);
        let new_addr = if requested == 0 {
            None
        } else {
            self.track_alloc(addr, requested);
            self.counters.bytes_allocated = self.counters.bytes_allocated.saturating_add(requested);
            Some(addr)
        };
        self.push(AllocFnKind::Realloc, requested, new_addr, Some(old_addr))
    }

    pub fn snapshot(&self) -> CounterSnapshot<T> {
        let mut s = self.counters;
        s.overflow_count = self.ring.evicted();
        s.anomalies = self.anomalies.total();
        s
    }

    pub fn anomalies(&self) -> Anomalies {
        self.anomalies
    }

    pub fn live_len(&self) -> usize {
        self.live.len()
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.values().fold(0u64, |a, b| a.saturating_add(*b))
    }

    pub fn live_size(&self, addr: AddrToken) -> Option<u64> {
        self.live.get(&addr).copied()
    }

    /// Recent events, oldest first. May be missing the oldest events once
    /// the ring has overflowed.
    pub fn recent_events(&self) -> impl Iterator<Item = &AllocEvent> + '_ {
        self.ring.iter()
    }

    pub fn ring_capacity(&self) -> usize {
        self.ring.capacity()
    }

    fn track_alloc(&mut self, addr: AddrToken, size: u64) {
        if self.live.insert(addr, size).is_some() {
            self.anomalies.double_alloc += 1;
        }
    }

    fn push(
        &mut self,
        kind: AllocFnKind,
        bytes: u64,
        addr: Option<AddrToken>,
        old_addr: Option<AddrToken>,
    ) -> AllocEvent {
        let c = &mut self.counters;
        let i = kind.index();
        c.calls[i] += 1;
        c.bytes[i] = c.bytes[i].saturating_add(bytes);
        c.cost = c.cost + self.model.event_cost(kind, bytes);
        let event = AllocEvent {
            thread_id: self.thread_id,
            seq: c.next_seq,
            kind,
            bytes,
            addr,
            old_addr,
        };
        c.next_seq += 1;
        self.ring.push(event);
        event
    }
}

impl<T: ChurnScalar> EventSink for ThreadRecorder<T> {
    fn on_malloc(&mut self, requested: u64, addr: AddrToken) {
        self.record_malloc(requested, addr);
    }

    fn on_calloc(&mut self, count: u64, elem_size: u64, addr: AddrToken) {
        self.record_calloc(count, elem_size, addr);
    }

    fn on_realloc(&mut self, old_addr: AddrToken, requested: u64, addr: AddrToken) {
        self.record_realloc(old_addr, requested, addr);
    }

    fn on_free(&mut self, old_addr: AddrToken) {
        self.record_free(old_addr);
    }
}
