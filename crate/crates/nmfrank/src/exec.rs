use nmfrank_core::Executor;
use rayon::prelude::*;

/// Rayon thread pool. Results come back in index order, so output does not
/// depend on the number of threads.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `None` uses one thread per available core.
    pub fn new(threads: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            builder = builder.num_threads(t.max(1));
        }
        Ok(Pool { pool: builder.build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..len).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_for_any_thread_count() {
        for t in [1, 2, 8] {
            let pool = Pool::new(Some(t)).unwrap();
            assert_eq!(pool.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
