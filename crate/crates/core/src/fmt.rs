//! Number formatting shared by every CSV/JSON artifact.

/// Twelve significant digits in scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.11e}")
}

/// Rounds to twelve significant digits, for JSON summaries.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    num(x).parse().unwrap_or(x)
}
