//! Batch execution of independent jobs (episodes, evaluation cells).
//!
//! With the `parallel` feature the jobs run on the rayon pool; otherwise they
//! run in order on the calling thread. Results are always returned in job
//! order, so output never depends on the number of workers.

/// How a batch of independent jobs is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Parallel on the global pool (`None`) or on a dedicated pool with the
    /// given number of threads.
    Parallel(Option<usize>),
    #[default]
    Auto,
}

impl Execution {
    pub fn with_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => Execution::Sequential,
            Some(n) => Execution::Parallel(Some(n)),
            None => Execution::Auto,
        }
    }

    /// Apply `f` to every index in `0..n`, collecting results in order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel(threads) => par_map(n, threads, f),
            Execution::Auto => {
                if n <= 1 {
                    (0..n).map(f).collect()
                } else {
                    par_map(n, None, f)
                }
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    match threads {
        None => (0..n).into_par_iter().map(f).collect(),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("falling back to the global pool: {e}");
                (0..n).into_par_iter().map(f).collect()
            }
        },
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, _threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    (0..n).map(f).collect()
}
