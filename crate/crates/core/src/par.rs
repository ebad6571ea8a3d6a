//! Order-preserving batch map with a rayon backend and a sequential fallback.
//!
//! Results always come back in input order, so parallel and sequential runs
//! produce identical output.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    /// Parallel over at most this many worker threads (0 = rayon default).
    Parallel(usize),
}

impl Default for Mode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel(0)
        } else {
            Mode::Sequential
        }
    }
}

impl Mode {
    /// Parallel with `workers` threads; a single worker means sequential.
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Mode::Sequential
        } else {
            Mode::Parallel(workers)
        }
    }
}

pub fn map<T, R, F>(items: &[T], mode: Mode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        Mode::Sequential => items.iter().map(f).collect(),
        Mode::Parallel(threads) => parallel_map(items, threads, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if threads == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map(&xs, Mode::Sequential, |x| x * x);
        assert_eq!(seq, map(&xs, Mode::Parallel(0), |x| x * x));
        assert_eq!(seq, map(&xs, Mode::Parallel(3), |x| x * x));
        assert_eq!(seq[10], 100);
    }
}
