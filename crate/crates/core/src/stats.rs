//! Order statistics and aggregation helpers.

use crate::scalar::Scalar;

/// Nearest-rank percentile of an ascending slice: the element at 1-based
/// rank `ceil(q * n)`, clamped to `[1, n]`. `q` is a fraction in `[0, 1]`.
pub fn nearest_rank<T: Scalar>(sorted: &[T], q: T) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (q * T::of_u64(n as u64)).robust_ceil().to_usize().unwrap_or(0);
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Sorts in place (total order, NaN last) and returns the slice.
pub fn sort_scalars<T: Scalar>(values: &mut [T]) -> &[T] {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Greater));
    values
}

/// `exp(mean(ln v))`. `None` for an empty input or any value `<= 0`.
pub fn geometric_mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() || values.iter().any(|v| !(*v > T::zero())) {
        return None;
    }
    let n = T::of_u64(values.len() as u64);
    let log_sum: T = values.iter().map(|v| v.ln()).sum();
    Some((log_sum / n).exp())
}

/// Pearson correlation coefficient. `None` when fewer than two points or
/// either series has zero variance.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Option<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = T::of_u64(xs.len() as u64);
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Percentile grid used for exported CDFs: deciles 0..=80, then 90.0 to
/// 100.0 in 0.1 steps. Values are in percent.
pub fn tail_cdf_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..9).map(|d| f64::from(d) * 10.0).collect();
    grid.extend((900..=1000).map(|t| f64::from(t) / 10.0));
    grid
}

/// `(percentile, value)` rows for an ascending sample over [`tail_cdf_grid`].
pub fn cdf_points<T: Scalar>(sorted: &[T]) -> Vec<(f64, T)> {
    tail_cdf_grid()
        .into_iter()
        .filter_map(|p| nearest_rank(sorted, T::of(p / 100.0)).map(|v| (p, v)))
        .collect()
}
