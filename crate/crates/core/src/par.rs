//! Execution strategy for data-parallel loops.
//!
//! Every helper here preserves input order in its output, and reductions are
//! performed over fixed-size chunks combined left to right. The chunk layout
//! does not depend on the thread count, so `Sequential` and `Parallel` give
//! bit-identical floating point results.

use serde::{Deserialize, Serialize};

/// How batch loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this build can actually run loops on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Folds fixed chunks of `items` independently, then merges chunk results in
/// chunk order.
pub fn chunked_fold<T, A, I, F, M>(
    exec: Exec,
    items: &[T],
    chunk: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> Option<A>
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &T) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunk = chunk.max(1);
    let work = |c: &[T]| {
        let mut acc = init();
        for item in c {
            fold(&mut acc, item);
        }
        acc
    };
    let parts: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            if exec.is_parallel() {
                use rayon::prelude::*;
                items.par_chunks(chunk).map(work).collect()
            } else {
                items.chunks(chunk).map(work).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = exec;
            items.chunks(chunk).map(work).collect()
        }
    };
    let mut parts = parts.into_iter();
    let mut acc = parts.next()?;
    for p in parts {
        merge(&mut acc, p);
    }
    Some(acc)
}
