//! Deterministic summation. All energy and quadrature totals go through a
//! pairwise reduction with a fixed split structure, so the result depends
//! only on the input values, never on the number of rayon workers.

/// Below this length a plain left-to-right fold is used as the tree base.
const SEQ_BLOCK: usize = 64;

/// Minimum length worth handing to rayon.
const PAR_MIN: usize = 8192;

/// Pairwise-tree sum with a fixed split at the midpoint of each range.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= SEQ_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Parallel version of [`pairwise_sum`]. Splits at the same midpoints, so the
/// association (and therefore every rounding) is identical to the sequential
/// tree for any worker count.
pub(crate) fn par_pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() < PAR_MIN {
        return pairwise_sum(xs);
    }
    let mid = xs.len() / 2;
    let (a, b) = rayon::join(|| par_pairwise_sum(&xs[..mid]), || par_pairwise_sum(&xs[mid..]));
    a + b
}
