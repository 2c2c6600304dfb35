//! Execution strategy for data-parallel loops.
//!
//! Every parallel loop in the crate maps an index or a slice to an ordered
//! `Vec` of results, so the output never depends on scheduling.

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Plain iterator on the calling thread.
    Sequential,
    /// Rayon work-stealing pool (sequential when built without `parallel`).
    #[default]
    Parallel,
}

impl Execution {
    /// `jobs == 1` maps to sequential execution.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// True when this strategy will actually fan out.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Ordered map over a slice.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Ordered map over `0..n`.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

/// Runs `f` on a dedicated pool of `jobs` threads (or inline when `jobs <= 1`
/// or the `parallel` feature is off).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x);
        let par = Execution::Parallel.map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(
            Execution::Parallel.map_range(17, |i| i + 1),
            (1..18).collect::<Vec<_>>()
        );
    }

    #[test]
    fn jobs_mapping() {
        assert_eq!(Execution::from_jobs(0), Execution::Sequential);
        assert_eq!(Execution::from_jobs(1), Execution::Sequential);
        assert_eq!(Execution::from_jobs(4), Execution::Parallel);
        assert_eq!(with_jobs(2, || 7), 7);
    }
}
