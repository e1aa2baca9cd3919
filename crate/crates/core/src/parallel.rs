//! Minimal deterministic fan-out over independent work items.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Environment variable that caps worker threads.
pub const THREADS_ENV: &str = "QFES_THREADS";

/// Worker count: `QFES_THREADS` if set and positive, otherwise available parallelism.
pub fn thread_count() -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => avail,
    }
}

/// Evaluates `f(0..n)` and returns results in index order.
///
/// Each item must be independent; the output does not depend on the thread count.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_count().min(n);
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        local.push((i, f(i)));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, v) in results {
        slots[i] = Some(v);
    }
    slots.into_iter().map(|s| s.expect("every index filled")).collect()
}
