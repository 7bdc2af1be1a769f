//! Data-parallel execution with a sequential fallback.
//!
//! Per-document stages, batch evaluation and random-instance sweeps all go
//! through [`Exec::map`]. With the `parallel` feature enabled the work is
//! spread over a rayon pool bounded by the configured concurrency; without it
//! (or with [`Exec::Sequential`]) items are processed in order on the calling
//! thread. Output order always matches input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Bounded worker pool; `0` means "rayon's default".
    Parallel(usize),
}

impl Default for Exec {
    fn default() -> Self {
        Exec::Parallel(0)
    }
}

impl Exec {
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Exec::Sequential
        } else {
            Exec::Parallel(workers)
        }
    }

    /// True when this build can actually run work in parallel.
    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Exec::Parallel(_))
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel(workers) => par_map(*workers, items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    if items.len() < 2 {
        return items.iter().map(f).collect();
    }
    if workers == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(err) => {
            log::warn!("falling back to sequential execution: {err}");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(_workers: usize, items: &[T], f: F) -> Vec<R>
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
    fn parallel_and_sequential_agree_on_order() {
        let items: Vec<u64> = (0..500).collect();
        let seq = Exec::Sequential.map(&items, |x| x * x + 1);
        let par = Exec::Parallel(4).map(&items, |x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(Exec::Parallel(0).map(&items, |x| *x), items);
    }

    #[test]
    fn single_worker_is_sequential() {
        assert_eq!(Exec::with_workers(1), Exec::Sequential);
        assert!(!Exec::Sequential.is_parallel());
    }
}
