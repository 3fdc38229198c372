//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) work is spread over the rayon
//! global pool; without it, or with [`Execution::Sequential`], the same
//! closures run in a plain loop. Output order never depends on scheduling.

use ndarray::Array2;

use crate::error::Result;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run loops in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, preserving index order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible [`map_range`]; the first error in index order is returned.
pub fn try_map_range<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Fills each row of `out` with `f(row_index, row)`. Rows are disjoint, so the
/// result is identical for every execution mode.
pub fn try_fill_rows<F>(exec: Execution, out: &mut Array2<f64>, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let cols = out.ncols();
    if cols == 0 {
        return Ok(());
    }
    let data = out.as_slice_mut().expect("row-major output matrix");
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return data
            .par_chunks_mut(cols)
            .enumerate()
            .map(|(i, row)| f(i, row))
            .collect::<Result<()>>();
    }
    let _ = exec;
    data.chunks_mut(cols)
        .enumerate()
        .try_for_each(|(i, row)| f(i, row))
}
