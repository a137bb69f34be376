//! Ordered map over a slice, on a bounded rayon pool when the `parallel`
//! feature is enabled and sequentially otherwise.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// A concurrency of 0 or 1 runs on the calling thread.
    pub fn new(concurrency: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = (concurrency > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(concurrency)
                    .thread_name(|i| format!("ovfact-worker-{i}"))
                    .build()
                    .expect("thread pool builds")
            });
            Self { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            if concurrency > 1 {
                log::debug!("built without the parallel feature; running sequentially");
            }
            Self {}
        }
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        return self.pool.is_some();
        #[cfg(not(feature = "parallel"))]
        false
    }

    /// Results are returned in input order regardless of scheduling.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        for c in [1, 4] {
            let ys = Executor::new(c).map(&xs, |x| x * x);
            assert_eq!(ys, xs.iter().map(|x| x * x).collect::<Vec<_>>());
        }
    }
}
