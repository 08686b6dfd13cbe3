//! Data-parallel execution of per-item work on scoped threads.

use std::num::NonZeroUsize;
use std::thread;

use dsft_core::trainer::Executor;

/// Splits items into contiguous chunks, one per worker, and returns results in item
/// order. Combined with the trainer's ordered reduction, the worker count never
/// changes a result.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    workers: NonZeroUsize,
}

impl Threaded {
    pub fn new(workers: NonZeroUsize) -> Self {
        Threaded { workers }
    }

    pub fn workers(&self) -> usize {
        self.workers.get()
    }
}

impl Executor for Threaded {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        let workers = self.workers.get().min(n);
        if workers <= 1 {
            return (0..n).map(f).collect();
        }
        let chunk = n.div_ceil(workers);
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Vec<R>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    }
}
