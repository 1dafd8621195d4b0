//! Replication fan-out.
//!
//! With the `parallel` feature (on by default) independent units are
//! distributed over the rayon pool; without it, or with
//! [`Execution::Sequential`], they run in index order on the calling thread.
//! Results are always returned in index order so downstream reductions do
//! not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether this mode actually fans out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map_indexed<T, F>(count: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

pub fn try_map_indexed<T, E, F>(count: usize, exec: Execution, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Neumaier-compensated sum.
pub fn sum_compensated<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean_compensated(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum_compensated(values.iter().copied()) / values.len() as f64
}

/// Configure the global rayon pool. No-op without the `parallel` feature.
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt();
        assert_eq!(map_indexed(1000, Execution::Parallel, f), map_indexed(1000, Execution::Sequential, f));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum_compensated(v), 2.0);
    }

    #[test]
    fn try_map_propagates_error() {
        let r: Result<Vec<usize>, String> = try_map_indexed(10, Execution::Parallel, |i| if i == 7 { Err("seven".into()) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), "seven");
    }
}
