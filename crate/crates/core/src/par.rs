//! Sequential / rayon switch for the data-parallel loops.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
///
/// `Parallel` silently degrades to `Sequential` when the crate is built
/// without the `parallel` feature. Results never depend on the choice: every
/// parallel loop writes disjoint rows and draws from per-node RNG streams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Calls `f(row_index, row)` for every `width`-sized row of `data`.
pub(crate) fn for_each_row<F>(exec: Execution, data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = exec;
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Calls `f(node, row, state)` with node `i`'s row of `data` and `states[i]`.
pub(crate) fn for_each_node<S, F>(
    exec: Execution,
    data: &mut [f64],
    width: usize,
    states: &mut [S],
    f: F,
) where
    S: Send,
    F: Fn(usize, &mut [f64], &mut S) + Send + Sync,
{
    debug_assert_eq!(data.len(), width * states.len());
    if width == 0 {
        for (i, s) in states.iter_mut().enumerate() {
            f(i, &mut [], s);
        }
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(width)
            .zip(states.par_iter_mut())
            .enumerate()
            .for_each(|(i, (row, s))| f(i, row, s));
        return;
    }
    let _ = exec;
    data.chunks_mut(width)
        .zip(states.iter_mut())
        .enumerate()
        .for_each(|(i, (row, s))| f(i, row, s));
}

/// Maps `f` over `0..n` and collects the results in index order.
pub(crate) fn map_indices<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
