//! Data-parallel helpers. With the `parallel` feature these dispatch to
//! rayon when the caller asks for it; otherwise they run sequentially. Both
//! paths produce identical results because every reduction is done in index
//! order by the caller.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether parallel execution is compiled in.
pub const fn available() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..n).map(f).collect()`, optionally across threads.
pub fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Calls `f(i, chunk)` for consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if parallel {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = parallel;
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Runs `f` inside a pool of `threads` workers when parallelism is
/// available, else calls it directly.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

/// faer parallelism setting matching the flag.
pub fn faer_par(parallel: bool) -> faer::Par {
    #[cfg(feature = "parallel")]
    if parallel {
        return faer::Par::rayon(0);
    }
    let _ = parallel;
    faer::Par::Seq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = map_range(100, true, |i| (i as f64).sqrt());
        let b = map_range(100, false, |i| (i as f64).sqrt());
        assert_eq!(a, b);
        let mut x = vec![0usize; 10];
        for_each_chunk_mut(&mut x, 3, true, |i, c| c.iter_mut().for_each(|v| *v = i));
        assert_eq!(x, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
    }
}
