//! Plain-text number formatting shared by the CSV writers.

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
/// Infinities print as `Inf` / `-Inf` and NaN as `NA`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Inverse of [`fmt_num`], also accepting anything `f64::from_str` takes.
pub fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        "NA" | "NaN" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}
