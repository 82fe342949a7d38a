//! Descriptive statistics shared by the lattice and the simulation harness.

/// Type-7 (linear interpolation) quantile of an ascending slice.
///
/// Infinite entries are allowed; equal neighbours short-circuit so that
/// `Inf` never meets `Inf - Inf`.
pub(crate) fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let a = sorted[lo];
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return a;
    }
    let b = sorted[lo + 1];
    if a == b {
        return a;
    }
    if b.is_infinite() {
        return b;
    }
    a + frac * (b - a)
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}
