//! Worker pool used for per-environment data parallelism.
//!
//! With the `parallel` feature (default) a dedicated rayon pool partitions
//! environment batches across workers. Without it, or with one worker,
//! everything runs as a plain loop on the calling thread. Per-environment
//! work never touches another environment's data, so results are identical
//! for every worker count.

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "BOXPUSH_WORKERS";

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Smallest chunk of environments handed to one rayon task.
#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 32;

pub struct Workers {
    n: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("n", &self.n).finish()
    }
}

impl Workers {
    /// `n = 0` means "all available cores". Without the `parallel` feature the
    /// count is recorded but work stays on the calling thread.
    pub fn new(n: usize) -> Self {
        let n = if n == 0 {
            std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1)
        } else {
            n
        };
        #[cfg(feature = "parallel")]
        {
            let pool = if n > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .thread_name(|i| format!("boxpush-worker-{i}"))
                        .build()
                        .expect("failed to build worker pool"),
                )
            } else {
                None
            };
            Workers { n, pool }
        }
        #[cfg(not(feature = "parallel"))]
        Workers { n }
    }

    pub fn sequential() -> Self {
        Workers::new(1)
    }

    /// Reads [`WORKERS_ENV`], falling back to `configured`.
    pub fn from_env_or(configured: usize) -> Self {
        let n = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(configured);
        Workers::new(n)
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Calls `f(i, &mut a[i], &mut b[i])` for every index.
    pub fn for_each_zip<A, B, F>(&self, a: &mut [A], b: &mut [B], f: F)
    where
        A: Send,
        B: Send,
        F: Fn(usize, &mut A, &mut B) + Sync + Send,
    {
        assert_eq!(a.len(), b.len());
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            pool.install(|| {
                a.par_iter_mut()
                    .zip(b.par_iter_mut())
                    .enumerate()
                    .with_min_len(MIN_CHUNK)
                    .for_each(|(i, (x, y))| f(i, x, y));
            });
            return;
        }
        for (i, (x, y)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
            f(i, x, y);
        }
    }

    /// Calls `f(i, &mut a[i])` for every index.
    pub fn for_each<A, F>(&self, a: &mut [A], f: F)
    where
        A: Send,
        F: Fn(usize, &mut A) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            pool.install(|| {
                a.par_iter_mut()
                    .enumerate()
                    .with_min_len(MIN_CHUNK)
                    .for_each(|(i, x)| f(i, x));
            });
            return;
        }
        for (i, x) in a.iter_mut().enumerate() {
            f(i, x);
        }
    }

    /// `(0..n).map(f)` collected in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Workers::sequential()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zip_visits_every_index_once() {
        for n in [1, 2, 4] {
            let w = Workers::new(n);
            let mut a: Vec<usize> = vec![0; 1000];
            let mut b: Vec<f64> = vec![0.0; 1000];
            w.for_each_zip(&mut a, &mut b, |i, x, y| {
                *x += i;
                *y += i as f64 * 0.5;
            });
            assert!(a.iter().enumerate().all(|(i, v)| *v == i));
            assert!(b.iter().enumerate().all(|(i, v)| *v == i as f64 * 0.5));
        }
    }

    #[test]
    fn map_preserves_order() {
        for n in [1, 3] {
            let v = Workers::new(n).map(500, |i| i * i);
            assert!(v.iter().enumerate().all(|(i, x)| *x == i * i));
        }
    }

    #[test]
    fn zero_means_all_cores() {
        assert!(Workers::new(0).count() >= 1);
        assert_eq!(Workers::sequential().count(), 1);
    }
}
