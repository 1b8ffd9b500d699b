//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work items are spread over the
//! rayon pool; without it, or with [`Execution::Sequential`], they run in
//! index order on the calling thread. Results are always collected in index
//! order, so reductions over them are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluate `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Same as [`map_indexed`] over a slice.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(usize, &S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().enumerate().map(|(i, s)| f(i, s)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, s)| f(i, s)).collect()
}
