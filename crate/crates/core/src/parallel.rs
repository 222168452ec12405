//! Optional intra-kernel parallelism.
//!
//! The thread count defaults to 1 and is read once from `CLIPSCORE_THREADS`.
//! Work is split per index and results are always merged in index order, so
//! outputs are bitwise identical for any thread count.

use std::sync::OnceLock;

use rayon::prelude::*;

pub const THREADS_ENV: &str = "CLIPSCORE_THREADS";

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(1);
        if threads <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()
    })
    .as_ref()
}

pub fn threads() -> usize {
    pool().map_or(1, |p| p.current_num_threads())
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map<T, G>(n: usize, f: G) -> Vec<T>
where
    T: Send,
    G: Fn(usize) -> T + Sync + Send,
{
    match pool() {
        Some(p) if n > 1 => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f(i, chunk_i)` over consecutive `chunk`-sized pieces of `out`.
pub fn for_each_chunk<T, G>(out: &mut [T], chunk: usize, f: G)
where
    T: Send,
    G: Fn(usize, &mut [T]) + Sync + Send,
{
    match pool() {
        Some(p) if out.len() > chunk => {
            p.install(|| out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)))
        }
        _ => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}
