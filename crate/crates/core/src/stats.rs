//! Order statistics and small regressions used across the pipeline.

use crate::num::Float;

/// Median with the even-length convention "mean of the two middle order
/// statistics". Returns `None` for an empty slice.
pub fn median<F: Float>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut buf = values.to_vec();
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower_max = lower
            .iter()
            .copied()
            .fold(F::neg_infinity(), |acc, x| if x > acc { x } else { acc });
        Some((lower_max + upper) / F::lit(2.0))
    }
}

/// Unscaled median absolute deviation around `center`.
pub fn mad_about<F: Float>(values: &[F], center: F) -> Option<F> {
    let dev: Vec<F> = values.iter().map(|&v| (v - center).abs()).collect();
    median(&dev)
}

/// Percentile with linear interpolation between closest ranks
/// (`h = (n - 1) * q`), `q` in `[0, 1]`.
pub fn percentile_linear<F: Float>(values: &[F], q: F) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = F::from_usize_lossy(sorted.len() - 1) * q;
    let lo = h.floor();
    let frac = h - lo;
    let lo_idx = lo.to_usize().unwrap_or(0).min(sorted.len() - 1);
    let hi_idx = (lo_idx + 1).min(sorted.len() - 1);
    let (a, b) = (sorted[lo_idx], sorted[hi_idx]);
    if frac == F::zero() || a == b {
        Some(a)
    } else {
        Some(a + (b - a) * frac)
    }
}

/// Ordinary least squares for `y = a + b x`. Returns `(a, b)`; with fewer
/// than two distinct `x` values the slope is zero and `a` is the mean.
pub fn ols_line<F: Float>(xs: &[F], ys: &[F]) -> (F, F) {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.is_empty() {
        return (F::zero(), F::zero());
    }
    let n = F::from_usize_lossy(xs.len());
    let x_mean = xs.iter().copied().sum::<F>() / n;
    let y_mean = ys.iter().copied().sum::<F>() / n;
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - x_mean;
        sxx = sxx + dx * dx;
        sxy = sxy + dx * (y - y_mean);
    }
    if sxx <= F::zero() {
        return (y_mean, F::zero());
    }
    let b = sxy / sxx;
    (y_mean - b * x_mean, b)
}

/// Arithmetic mean; `None` when empty.
pub fn mean<F: Float>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().copied().sum::<F>() / F::from_usize_lossy(values.len()))
    }
}
