//! Data-parallel loop helpers.
//!
//! Batch samples are independent in every forward/backward kernel, so the
//! hot loops parallelize over the batch axis. With the `parallel` feature the
//! helpers dispatch to rayon; without it they run plain sequential loops.
//! Reductions always combine per-sample partials in batch order, so results
//! are bit-identical across both modes and any thread count.

use ndarray::{Array4, ArrayView3, ArrayView4, ArrayViewMut3, Axis};

#[cfg(feature = "parallel")]
use ndarray::parallel::prelude::*;

/// Which loop backend is compiled in; benches report this in their IDs.
pub const MODE: &str = if cfg!(feature = "parallel") {
    "parallel"
} else {
    "sequential"
};

/// Run `f(i)` for every index in `0..n`.
pub fn for_each_index(n: usize, f: impl Fn(usize) + Send + Sync) {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).for_each(f);
    }
}

/// Map `0..n` and collect results in index order.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Send + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Visit every batch sample of `out` mutably, paired with its index.
pub fn for_each_sample_mut<F: Send + Sync>(
    out: &mut Array4<F>,
    f: impl Fn(usize, ArrayViewMut3<F>) + Send + Sync,
) {
    #[cfg(feature = "parallel")]
    {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(b, view)| f(b, view));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.axis_iter_mut(Axis(0))
            .enumerate()
            .for_each(|(b, view)| f(b, view));
    }
}

/// Visit matching batch samples of `out` and `input` together.
pub fn zip_samples_mut<F: Send + Sync>(
    out: &mut Array4<F>,
    input: &ArrayView4<F>,
    f: impl Fn(usize, ArrayViewMut3<F>, ArrayView3<F>) + Send + Sync,
) {
    debug_assert_eq!(out.shape()[0], input.shape()[0]);
    #[cfg(feature = "parallel")]
    {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(input.axis_iter(Axis(0)).into_par_iter())
            .enumerate()
            .for_each(|(b, (o, i))| f(b, o, i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.axis_iter_mut(Axis(0))
            .zip(input.axis_iter(Axis(0)))
            .enumerate()
            .for_each(|(b, (o, i))| f(b, o, i));
    }
}
