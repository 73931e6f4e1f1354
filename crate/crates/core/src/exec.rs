//! Order-preserving map over independent experiment cells.
//!
//! With the `parallel` feature the cells are spread over the rayon pool;
//! without it (or with [`Execution::Sequential`]) they run in a plain loop.
//! Results always come back in input order, so merged tables do not depend on
//! scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` when the crate was built with rayon, `Sequential` otherwise.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`], but stops at the first error in input order.
pub fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}

/// Sets the size of the global pool. No-op without the `parallel` feature.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..200).collect();
        let seq = map(Execution::Sequential, &xs, |x| x * x + 1);
        let par = map(Execution::Parallel, &xs, |x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[17], 290);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs: Vec<i32> = (0..50).collect();
        let r: Result<Vec<i32>, i32> = try_map(Execution::Parallel, &xs, |&x| {
            if x % 7 == 6 {
                Err(x)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(6));
    }
}
