use rayon::prelude::*;

use crate::error::Result;

/// Order-preserving parallel map over `0..n` with per-worker scratch state.
/// The output never depends on how indices are split across threads.
pub(crate) fn par_map<T, S, I, F>(n: usize, init: I, f: F) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map_init(init, f).collect()
}
