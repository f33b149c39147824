//! Per-thread heap accounting for memory-contract checks.
//!
//! Register [`CountingAlloc`] as the global allocator in a binary or test
//! target, then wrap the code under test in [`measure_peak`].

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

/// System allocator that tracks live and peak bytes for the current thread.
pub struct CountingAlloc;

fn record(delta: isize) {
    // try_with: thread-locals may already be torn down during thread exit
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Runs `f` and returns its result with the peak number of bytes it held
/// above the thread's live total at entry. `None` when [`CountingAlloc`] is
/// not the global allocator.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, Option<usize>) {
    let active = is_active();
    let base = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(base));
    let out = f();
    let peak = PEAK.with(Cell::get);
    (out, active.then(|| (peak - base).max(0) as usize))
}

/// True when allocations on this thread are being counted.
pub fn is_active() -> bool {
    let before = LIVE.with(Cell::get);
    let probe = std::hint::black_box(Box::new(0u64));
    let during = LIVE.with(Cell::get);
    drop(probe);
    during != before
}
