/// Denominator guard of the relative gap.
pub const GAP_EPS: f64 = 1e-10;

/// Relative gap charged to a method that has no feasible solution yet.
pub const NO_SOLUTION_GAP: f64 = 1.0;

/// `(|obj - bks|, |obj - bks| / (|bks| + 1e-10))`. Invariant under
/// negating both arguments, so either objective sense works.
pub fn gaps(obj: f64, bks: f64) -> (f64, f64) {
    let abs = (obj - bks).abs();
    (abs, abs / (bks.abs() + GAP_EPS))
}

/// Percentage reduction of `ours` relative to `base`. A zero baseline gives
/// 0 when `ours` is also zero and `-inf` otherwise.
pub fn gain(base: f64, ours: f64) -> f64 {
    if base == 0.0 {
        return if ours == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    (base - ours) / base * 100.0
}
