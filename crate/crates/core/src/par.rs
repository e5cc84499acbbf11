//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon;
//! without it they run the same closures sequentially. Every helper writes
//! disjoint outputs or returns results in index order, so results are identical
//! for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether work should be handed to rayon. A one-thread pool gains nothing
/// and pays a cross-thread handoff per call, so it runs inline instead.
#[cfg(feature = "parallel")]
fn fan_out() -> bool {
    rayon::current_num_threads() > 1
}

/// Applies `f(index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if fan_out() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Applies `f` to matching `chunk`-sized pieces of two equally long slices.
pub fn for_each_chunk_pair_mut<T, U, F>(a: &mut [T], b: &mut [U], chunk: usize, f: F)
where
    T: Send,
    U: Send,
    F: Fn(&mut [T], &mut [U]) + Sync + Send,
{
    assert_eq!(a.len(), b.len(), "paired slices differ in length");
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if fan_out() {
        a.par_chunks_mut(chunk).zip(b.par_chunks_mut(chunk)).for_each(|(x, y)| f(x, y));
        return;
    }
    a.chunks_mut(chunk).zip(b.chunks_mut(chunk)).for_each(|(x, y)| f(x, y));
}

/// Evaluates `f` on `0..n` and collects results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if fan_out() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Whether the parallel backend is compiled in.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` inside a pool of `threads` workers (no-op wrapper when sequential).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
