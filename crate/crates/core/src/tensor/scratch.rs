//! Per-thread recycling of large tensor buffers.
//!
//! Freshly mapped pages are expensive to fault in, and a forward pass
//! allocates and drops dozens of multi-megabyte activations. Dropped tensor
//! buffers are parked here and handed back out zero-filled.

use std::cell::RefCell;
use std::thread::LocalKey;

/// Buffers shorter than this go straight to the system allocator.
const MIN_POOLED: usize = 1 << 16;
/// Upper bound on parked memory per thread and pool, in bytes (256 MiB).
const MAX_PARKED_BYTES: usize = 1 << 28;

type Pool<T> = RefCell<Vec<Vec<T>>>;

thread_local! {
    static PARKED: Pool<f32> = const { RefCell::new(Vec::new()) };
}

fn take_from<T: Copy>(pool: &'static LocalKey<Pool<T>>, len: usize, value: T) -> Vec<T> {
    if len >= MIN_POOLED {
        let reused = pool
            .try_with(|p| {
                let mut p = p.borrow_mut();
                let best = p
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.capacity() >= len && v.capacity() <= 2 * len)
                    .min_by_key(|(_, v)| v.capacity())
                    .map(|(i, _)| i);
                best.map(|i| p.swap_remove(i))
            })
            .ok()
            .flatten();
        if let Some(mut v) = reused {
            v.clear();
            v.resize(len, value);
            return v;
        }
    }
    vec![value; len]
}

fn give_to<T>(pool: &'static LocalKey<Pool<T>>, v: Vec<T>) {
    if v.capacity() < MIN_POOLED {
        return;
    }
    let budget = MAX_PARKED_BYTES / std::mem::size_of::<T>();
    let _ = pool.try_with(|p| {
        let mut p = p.borrow_mut();
        p.push(v);
        let mut total: usize = p.iter().map(|v| v.capacity()).sum();
        while total > budget && !p.is_empty() {
            total -= p.remove(0).capacity();
        }
    });
}

/// A buffer of `len` copies of `value`.
pub(crate) fn take(len: usize, value: f32) -> Vec<f32> {
    take_from(&PARKED, len, value)
}

/// Parks a buffer for reuse, evicting the oldest ones past the budget.
pub(crate) fn give(v: Vec<f32>) {
    give_to(&PARKED, v)
}

/// Frees every parked buffer of the calling thread.
pub fn release() {
    let _ = PARKED.try_with(|p| p.borrow_mut().clear());
}
