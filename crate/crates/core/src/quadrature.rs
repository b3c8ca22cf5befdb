//! Adaptive Simpson quadrature and a doubling scheme for integrals over
//! `[a, +inf)`.

const MAX_DEPTH: u32 = 48;
/// Levels that are always subdivided, so that kinks cannot fool the first
/// error estimate.
const MIN_DEPTH: u32 = 6;

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let forced = MAX_DEPTH - depth < MIN_DEPTH;
    if depth == 0 || (!forced && delta.abs() <= 15.0 * tol) || !delta.is_finite() {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Result of integrating over `[a, +inf)` by repeated interval doubling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailIntegral {
    pub value: f64,
    /// Upper limit reached when the loop stopped.
    pub upper: f64,
    pub doublings: u32,
    pub converged: bool,
}

/// Integrates `f` over `[a, +inf)`: start on `[a, R0]`, then keep adding
/// `[R, 2R]` until the last piece contributes less than `rel_tol` of the
/// running total. Gives up after `max_doublings`.
pub fn tail_integral<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    rel_tol: f64,
    max_doublings: u32,
) -> TailIntegral {
    let mut upper = (2.0 * a).max(a + 1.0);
    let mut value = simpson(f, a, upper, 1e-13);
    for n in 1..=max_doublings {
        let piece = simpson(f, upper, 2.0 * upper, 1e-13 * (1.0 + value.abs()));
        value += piece;
        upper *= 2.0;
        if !value.is_finite() {
            return TailIntegral { value, upper, doublings: n, converged: false };
        }
        if piece.abs() <= rel_tol * value.abs() || (piece == 0.0 && value == 0.0) {
            return TailIntegral { value, upper, doublings: n, converged: true };
        }
    }
    TailIntegral { value, upper, doublings: max_doublings, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = simpson(&|x: f64| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        let v = simpson(&|x: f64| x * x, 1.0, 4.0, 1e-12);
        assert_relative_eq!(v, 21.0, epsilon = 1e-12);
    }

    #[test]
    fn power_tail_converges() {
        let t = tail_integral(&|r: f64| r.powi(-2), 1.0, 1e-10, 60);
        assert!(t.converged);
        assert_relative_eq!(t.value, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn slow_tail_is_flagged() {
        let t = tail_integral(&|r: f64| r.powf(-0.5), 1.0, 1e-10, 60);
        assert!(!t.converged);
        let t = tail_integral(&|r: f64| 1.0 / r, 1.0, 1e-10, 60);
        assert!(!t.converged);
    }
}
