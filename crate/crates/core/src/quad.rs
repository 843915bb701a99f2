//! Adaptive double-exponential quadrature on finite and semi-infinite
//! intervals, with interval splitting at user-supplied breakpoints.

use quadrature::double_exponential;

const MAX_DEPTH: usize = 16;

/// `∫_a^b f`, bisecting until the estimated error is below `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    adaptive(f, a, b, tol.max(1e-300), 0)
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let out = double_exponential::integrate(f, a, b, tol);
    let floor = 64.0 * f64::EPSILON * out.integral.abs();
    if out.error_estimate <= tol.max(floor) || depth >= MAX_DEPTH {
        return out.integral;
    }
    let mid = 0.5 * (a + b);
    adaptive(f, a, mid, 0.5 * tol, depth + 1) + adaptive(f, mid, b, 0.5 * tol, depth + 1)
}

/// `∫_a^∞ f` via `x = a + s/(1−s)`; `f` must decay.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: &F, a: f64, tol: f64) -> f64 {
    let mapped = |s: f64| {
        let one_minus = 1.0 - s;
        if one_minus <= 0.0 {
            return 0.0;
        }
        let x = a + s / one_minus;
        f(x) / (one_minus * one_minus)
    };
    integrate(&mapped, 0.0, 1.0, tol)
}

/// `∫_a^b f` split at the breakpoints that fall inside `(a, b)`; `b` may be
/// infinite.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let pieces = points.len() + 1;
    let piece_tol = tol / pieces as f64;
    let mut lo = a;
    let mut total = 0.0;
    for &p in &points {
        total += integrate(f, lo, p, piece_tol);
        lo = p;
    }
    if b.is_infinite() {
        total + integrate_to_infinity(f, lo, piece_tol)
    } else {
        total + integrate(f, lo, b, piece_tol)
    }
}

/// `∫_a^b (x−a)^α f(x) dx` for `α > −1`, via `x = a + s^{1/(α+1)}`, which
/// absorbs the endpoint power exactly. `b` may be infinite; breakpoints are
/// given in `x`.
pub fn integrate_power_weighted<F: Fn(f64) -> f64>(f: &F, alpha: f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let e = alpha + 1.0;
    let to_s = |x: f64| (x - a).max(0.0).powf(e);
    let g = |s: f64| f(a + s.powf(1.0 / e)) / e;
    let s_breaks: Vec<f64> = breaks.iter().map(|&x| to_s(x)).collect();
    let s_end = if b.is_infinite() { f64::INFINITY } else { to_s(b) };
    integrate_piecewise(&g, 0.0, s_end, &s_breaks, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn beta_integral_with_endpoint_singularities() {
        // ∫₀^λ (λ−τ)^{1/2} τ^{-1/2} dτ = πλ/2
        let lambda = 7.3;
        let v = integrate_power_weighted(&|t: f64| (lambda - t).sqrt(), -0.5, 0.0, lambda, &[], 1e-13);
        assert!((v - PI * lambda / 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn gamma_integral_on_half_line() {
        // ∫₀^∞ σ^{-1/2} e^{-tσ} dσ = √(π/t)
        for t in [0.1, 0.5, 1.0] {
            let v = integrate_power_weighted(&|s: f64| (-t * s).exp(), -0.5, 0.0, f64::INFINITY, &[], 1e-13);
            assert!((v - (PI / t).sqrt()).abs() < 1e-12 * (PI / t).sqrt(), "t={t}: {v}");
        }
    }

    #[test]
    fn kinks_are_split() {
        let f = |x: f64| (x - 1.3).abs();
        let v = integrate_piecewise(&f, 0.0, 3.0, &[1.3], 1e-13);
        let exact = 0.5 * 1.3 * 1.3 + 0.5 * 1.7 * 1.7;
        assert!((v - exact).abs() < 1e-12);
    }
}
