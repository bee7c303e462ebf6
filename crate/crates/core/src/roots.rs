//! Scalar bracketed root finding shared by the equilibrium and threshold solvers.

/// Bisection on a bracket with `f(lo) <= 0 <= f(hi)` (either orientation is
/// accepted) followed by at most `newton_steps` safeguarded Newton steps.
pub(crate) fn bisect_newton(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    rel_width: f64,
    newton_steps: usize,
) -> f64 {
    let flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let increasing = flo < 0.0;
    let width = (hi - lo).abs() * rel_width;
    for _ in 0..400 {
        if (hi - lo).abs() <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let mut x = 0.5 * (lo + hi);
    let spread = (b - a).max(f64::EPSILON * x.abs());
    for _ in 0..newton_steps {
        let fx = f(x);
        let d = df(x);
        if fx == 0.0 || !d.is_finite() || d == 0.0 {
            break;
        }
        let next = x - fx / d;
        // Newton may only polish inside a slightly widened final bracket.
        if !(next >= a - spread && next <= b + spread) {
            break;
        }
        if (next - x).abs() <= f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two_both_orientations() {
        let r = bisect_newton(|x| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0, 1e-14, 5);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        let r = bisect_newton(|x| 2.0 - x * x, |x| -2.0 * x, 0.0, 2.0, 1e-14, 5);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }
}
