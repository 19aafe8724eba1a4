//! Rounding of fractional budgets to sample/weight counts.
//!
//! Products such as `0.07 * 100.0` land a hair above or below the integer
//! they denote in binary floating point, so both directions absorb a small
//! tolerance before rounding.

const SLACK: f64 = 1e-9;

/// `⌊fraction · n⌋`.
pub(crate) fn floor_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + SLACK).floor().max(0.0) as usize).min(n)
}

/// `⌈fraction · n⌉`, at least 1 when `fraction > 0` and `n > 0`.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    if n == 0 || fraction <= 0.0 {
        return 0;
    }
    ((fraction * n as f64 - SLACK).ceil().max(1.0) as usize).min(n)
}

/// `⌈x⌉` for a real product that should be read exactly.
pub(crate) fn ceil_real(x: f64) -> u64 {
    (x - SLACK).ceil().max(0.0) as u64
}
