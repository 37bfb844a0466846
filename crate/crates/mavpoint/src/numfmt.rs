//! Decimal formatting for reals written to text artifacts.

/// Formats a float with 17 significant digits, enough to round-trip any
/// finite f64 through its decimal representation.
pub fn g17(v: f64) -> String {
    format!("{:.16e}", v)
}
