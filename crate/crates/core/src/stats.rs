//! Descriptive statistics, generic over the float type.

use num_traits::Float;

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::from(xs.len()).unwrap())
}

/// Median; even-length inputs average the two middle values.
pub fn median<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        let two = T::one() + T::one();
        Some((sorted[mid - 1] + sorted[mid]) / two)
    }
}

pub fn max<T: Float>(xs: &[T]) -> Option<T> {
    xs.iter().copied().reduce(T::max)
}

/// Pearson correlation. `None` when fewer than two points or either side has
/// zero variance.
pub fn pearson<T: Float>(xs: &[T], ys: &[T]) -> Option<T> {
    assert_eq!(xs.len(), ys.len(), "pearson needs paired samples");
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    // rounding can push |r| a few ulps past 1
    Some((sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one()))
}

/// Cosine similarity; `None` if either vector is all zeros.
pub fn cosine<T: Float>(xs: &[T], ys: &[T]) -> Option<T> {
    assert_eq!(xs.len(), ys.len(), "cosine needs equal lengths");
    let (mut dot, mut nx, mut ny) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        dot = dot + x * y;
        nx = nx + x * x;
        ny = ny + y * y;
    }
    if nx == T::zero() || ny == T::zero() {
        return None;
    }
    Some((dot / (nx.sqrt() * ny.sqrt())).max(-T::one()).min(T::one()))
}
