//! Per-thread reentrancy guard.
//!
//! While the guard is held on a thread, the interceptor ignores every
//! allocator call made on that thread. Recorder mutations always run under
//! the guard, so allocations made by the recorder itself (map growth, span
//! bookkeeping) are never recorded and cannot recurse.

use std::cell::Cell;
use std::marker::PhantomData;

thread_local! {
    static DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// RAII token; the guard is held while at least one token is alive.
#[must_use]
pub struct ReentrancyGuard {
    // Tokens must be released on the thread that took them.
    _not_send: PhantomData<*const ()>,
}

impl ReentrancyGuard {
    pub fn enter() -> Self {
        let _ = DEPTH.try_with(|d| d.set(d.get() + 1));
        Self {
            _not_send: PhantomData,
        }
    }
}

impl Drop for ReentrancyGuard {
    fn drop(&mut self) {
        let _ = DEPTH.try_with(|d| d.set(d.get() - 1));
    }
}

/// Current nesting depth on this thread.
pub fn depth() -> u32 {
    DEPTH.try_with(Cell::get).unwrap_or(u32::MAX)
}

pub fn is_held() -> bool {
    depth() > 0
}

/// Runs `f` with interception suppressed on the current thread.
pub fn untracked<R>(f: impl FnOnce() -> R) -> R {
    let _g = ReentrancyGuard::enter();
    f()
}
