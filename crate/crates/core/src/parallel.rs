//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it every request runs sequentially. Results always come back in
//! input order, so output never depends on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Parallelism {
    Sequential,
    /// Worker threads; `0` means one per available core.
    Threads(usize),
    #[default]
    Auto,
}

impl Parallelism {
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        }
    }
}

/// Applies `f(index, item)` to every item.
pub fn map_indexed<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match parallelism {
        Parallelism::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        _ => parallel_map(items, parallelism, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || {
        items
            .par_iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect::<Vec<_>>()
    };
    match parallelism {
        Parallelism::Threads(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); using the global pool");
                run()
            }
        },
        _ => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
