//! The interception surface.
//!
//! [`ChurnAllocator`] wraps another allocator and reports every successful
//! call to the current thread's attached [`EventSink`], if there is one and
//! the reentrancy guard is not held. It can be installed as the
//! `#[global_allocator]`, and it also exposes the four C-style entry points
//! (`malloc`, `calloc`, `realloc`, `free`) for code that wants to drive the
//! allocator explicitly.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::ptr::{self, NonNull};

use super::guard::{self, ReentrancyGuard};
use super::AddrToken;

/// Receiver of intercepted calls on one thread.
pub trait EventSink {
    fn on_malloc(&mut self, requested: u64, addr: AddrToken);
    fn on_calloc(&mut self, count: u64, elem_size: u64, addr: AddrToken);
    fn on_realloc(&mut self, old_addr: AddrToken, requested: u64, addr: AddrToken);
    fn on_free(&mut self, old_addr: AddrToken);
}

thread_local! {
    static SINK: Cell<Option<NonNull<dyn EventSink>>> = const { Cell::new(None) };
}

/// Attaches `sink` to the current thread. Fails if a sink is already attached.
///
/// # Safety
/// `sink` must stay valid, and must not be accessed except through
/// [`dispatch`] or under a held [`ReentrancyGuard`], until
/// [`uninstall_sink`] is called on this same thread.
pub(crate) unsafe fn install_sink(sink: NonNull<dyn EventSink>) -> bool {
    SINK.with(|slot| {
        if slot.get().is_some() {
            return false;
        }
        slot.set(Some(sink));
        true
    })
}

pub(crate) fn uninstall_sink() {
    let _ = SINK.try_with(|slot| slot.set(None));
}

#[inline]
fn dispatch(f: impl FnOnce(&mut dyn EventSink)) {
    if guard::is_held() {
        return;
    }
    let Ok(Some(mut sink)) = SINK.try_with(Cell::get) else {
        return;
    };
    let _g = ReentrancyGuard::enter();
    // SAFETY: the sink is valid while installed (install_sink contract) and
    // the guard excludes every other access path on this thread.
    f(unsafe { sink.as_mut() })
}

/// Space in front of each explicitly allocated block; holds the user size.
const HEADER: usize = 16;
const ALIGN: usize = 16;

/// Allocator wrapper that records calls into the attached thread sink.
#[derive(Debug, Default)]
pub struct ChurnAllocator<A = System> {
    inner: A,
}

impl ChurnAllocator<System> {
    pub const fn system() -> Self {
        Self { inner: System }
    }
}

impl<A: GlobalAlloc> ChurnAllocator<A> {
    pub const fn new(inner: A) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &A {
        &self.inner
    }

    fn block_layout(size: usize) -> Option<Layout> {
        Layout::from_size_align(size.checked_add(HEADER)?, ALIGN).ok()
    }

    unsafe fn raw_alloc(&self, size: usize, zeroed: bool) -> *mut u8 {
        let Some(layout) = Self::block_layout(size) else {
            return ptr::null_mut();
        };
        let base = if zeroed {
            self.inner.alloc_zeroed(layout)
        } else {
            self.inner.alloc(layout)
        };
        if base.is_null() {
            return base;
        }
        (base as *mut usize).write(size);
        base.add(HEADER)
    }

    /// C-style `malloc`. Returns null on failure.
    ///
    /// # Safety
    /// The result must be released with [`ChurnAllocator::free`] or
    /// [`ChurnAllocator::realloc`] on this same allocator.
    pub unsafe fn malloc(&self, size: usize) -> *mut u8 {
        let p = self.raw_alloc(size, false);
        if !p.is_null() {
            dispatch(|s| s.on_malloc(size as u64, p as AddrToken));
        }
        p
    }

    /// C-style `calloc`: zeroed storage for `count` elements of `size` bytes.
    ///
    /// # Safety
    /// As [`ChurnAllocator::malloc`].
    pub unsafe fn calloc(&self, count: usize, size: usize) -> *mut u8 {
        let Some(total) = count.checked_mul(size) else {
            return ptr::null_mut();
        };
        let p = self.raw_alloc(total, true);
        if !p.is_null() {
            dispatch(|s| s.on_calloc(count as u64, size as u64, p as AddrToken));
        }
        p
    }

    /// C-style `realloc`. A null `ptr` behaves like `malloc`. On failure the
    /// original block is left untouched and null is returned.
    ///
    /// # Safety
    /// `ptr` must be null or a live block from this allocator's C-style API.
    pub unsafe fn realloc(&self, ptr: *mut u8, size: usize) -> *mut u8 {
        if ptr.is_null() {
            return self.malloc(size);
        }
        let base = ptr.sub(HEADER);
        let old_size = (base as *const usize).read();
        let old_layout = Self::block_layout(old_size).expect("layout was valid at allocation");
        let Some(new_layout) = Self::block_layout(size) else {
            return ptr::null_mut();
        };
        let new_base = self.inner.realloc(base, old_layout, new_layout.size());
        if new_base.is_null() {
            return new_base;
        }
        (new_base as *mut usize).write(size);
        let p = new_base.add(HEADER);
        dispatch(|s| s.on_realloc(ptr as AddrToken, size as u64, p as AddrToken));
        p
    }

    /// C-style `free`. Null is accepted and recorded as a zero-byte call.
    ///
    /// # Safety
    /// `ptr` must be null or a live block from this allocator's C-style API.
    pub unsafe fn free(&self, ptr: *mut u8) {
        dispatch(|s| s.on_free(ptr as AddrToken));
        if ptr.is_null() {
            return;
        }
        let base = ptr.sub(HEADER);
        let size = (base as *const usize).read();
        self.inner.dealloc(
            base,
            Self::block_layout(size).expect("layout was valid at allocation"),
        );
    }

    /// Safe owned block from [`ChurnAllocator::malloc`].
    ///
    /// # Panics
    /// If the underlying allocation fails.
    pub fn malloc_block(&self, size: usize) -> Block<'_, A> {
        Block::from_raw(self, unsafe { self.malloc(size) }, size)
    }

    pub fn calloc_block(&self, count: usize, size: usize) -> Block<'_, A> {
        let len = count.checked_mul(size).expect("calloc size overflow");
        Block::from_raw(self, unsafe { self.calloc(count, size) }, len)
    }
}

unsafe impl<A: GlobalAlloc> GlobalAlloc for ChurnAllocator<A> {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = self.inner.alloc(layout);
        if !p.is_null() {
            dispatch(|s| s.on_malloc(layout.size() as u64, p as AddrToken));
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = self.inner.alloc_zeroed(layout);
        if !p.is_null() {
            dispatch(|s| s.on_calloc(1, layout.size() as u64, p as AddrToken));
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = self.inner.realloc(ptr, layout, new_size);
        if !p.is_null() {
            dispatch(|s| s.on_realloc(ptr as AddrToken, new_size as u64, p as AddrToken));
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        dispatch(|s| s.on_free(ptr as AddrToken));
        self.inner.dealloc(ptr, layout);
    }
}

/// An owned block from the C-style API; freed (and recorded) on drop.
pub struct Block<'a, A: GlobalAlloc = System> {
    heap: &'a ChurnAllocator<A>,
    ptr: NonNull<u8>,
    len: usize,
}

impl<'a, A: GlobalAlloc> Block<'a, A> {
    fn from_raw(heap: &'a ChurnAllocator<A>, ptr: *mut u8, len: usize) -> Self {
        let ptr = NonNull::new(ptr).expect("allocation failed");
        Self { heap, ptr, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn addr(&self) -> AddrToken {
        self.ptr.as_ptr() as AddrToken
    }

    /// Resizes through [`ChurnAllocator::realloc`].
    pub fn resize(&mut self, size: usize) {
        let p = unsafe { self.heap.realloc(self.ptr.as_ptr(), size) };
        self.ptr = NonNull::new(p).expect("reallocation failed");
        self.len = size;
    }

    pub fn fill(&mut self, byte: u8) {
        unsafe { ptr::write_bytes(self.ptr.as_ptr(), byte, self.len) }
    }

    /// Explicit release; equivalent to dropping.
    pub fn free(self) {}
}

impl<A: GlobalAlloc> Drop for Block<'_, A> {
    fn drop(&mut self) {
        unsafe { self.heap.free(self.ptr.as_ptr()) }
    }
}
