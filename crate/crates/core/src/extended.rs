//! Extended nonnegative reals.
//!
//! Energies live in `[0, +inf]` and are stored as plain `f64` with
//! `f64::INFINITY` standing for `+inf`. IEEE addition already gives
//! `x + inf = inf`; the one rule IEEE gets "wrong" for us is `0 * inf`, which
//! must be `0` (an empty group of pairs contributes nothing even when the cost
//! is infinite).

/// Product with the convention `0 * (+inf) = 0`.
#[inline]
pub fn mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// `(x)_+ = max(x, 0)`.
#[inline]
pub fn pos(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Formats a value for CSV output, writing `+inf` / `-inf` literals.
pub fn fmt(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x}")
    }
}

/// Parses the output of [`fmt`] (also accepts `inf`, `infinity`).
pub fn parse(s: &str) -> Option<f64> {
    let t = s.trim();
    match t.to_ascii_lowercase().as_str() {
        "+inf" | "inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => t.parse().ok(),
    }
}

/// `a <= b * (1 + rel) + abs`, treating `+inf` on the right as always satisfied.
pub fn le_tol(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    if b == f64::INFINITY || a == f64::NEG_INFINITY {
        return true;
    }
    if a == f64::INFINITY {
        return false;
    }
    a <= b + rel * b.abs().max(a.abs()) + abs
}
