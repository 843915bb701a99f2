//! Integer lattice helpers: rational reconstruction, saturated integer kernels
//! and enumeration of lattice points inside an ellipsoid.

use nalgebra::DMatrix;
use num_integer::Integer;
use num_rational::Ratio;

use crate::error::{Error, Result};

pub type Rational = Ratio<i128>;

/// Best rational approximation of `x` with denominator at most `max_den`,
/// accepted only if it reproduces `x` within `tol`.
pub fn reconstruct_rational(x: f64, max_den: i128, tol: f64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    let sign = if x < 0.0 { -1 } else { 1 };
    let target = x.abs();
    // continued-fraction convergents
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut rem = target;
    for _ in 0..64 {
        let a = rem.floor();
        if a > 1e18 {
            break;
        }
        let a = a as i128;
        let p2 = a.checked_mul(p1)?.checked_add(p0)?;
        let q2 = a.checked_mul(q1)?.checked_add(q0)?;
        if q2 > max_den {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        if (p1 as f64 / q1 as f64 - target).abs() <= tol {
            return Some(Rational::new(sign * p1, q1));
        }
        let frac = rem - rem.floor();
        if frac == 0.0 {
            break;
        }
        rem = 1.0 / frac;
    }
    if q1 > 0 && (p1 as f64 / q1 as f64 - target).abs() <= tol {
        Some(Rational::new(sign * p1, q1))
    } else {
        None
    }
}

/// Basis of the integer kernel `{k ∈ ℤⁿ : M k = 0}` of an integer matrix.
///
/// Columns are reduced by unimodular operations, so the returned basis spans
/// the full (saturated) kernel lattice, not a sublattice of it.
pub fn integer_kernel(rows: &[Vec<i128>], ncols: usize) -> Vec<Vec<i64>> {
    let mut m: Vec<Vec<i128>> = rows.to_vec();
    let mut t: Vec<Vec<i128>> = (0..ncols)
        .map(|i| (0..ncols).map(|j| i128::from(i == j)).collect())
        .collect();
    // t[col] is a column of the transform, stored as a row for convenience
    let nrows = m.len();
    let col_op = |m: &mut Vec<Vec<i128>>, t: &mut Vec<Vec<i128>>, dst: usize, src: usize, q: i128| {
        for row in m.iter_mut() {
            row[dst] -= q * row[src];
        }
        for i in 0..ncols {
            let v = t[src][i];
            t[dst][i] -= q * v;
        }
    };
    let swap = |m: &mut Vec<Vec<i128>>, t: &mut Vec<Vec<i128>>, a: usize, b: usize| {
        for row in m.iter_mut() {
            row.swap(a, b);
        }
        t.swap(a, b);
    };

    let mut pivot = 0;
    for r in 0..nrows {
        if pivot >= ncols {
            break;
        }
        loop {
            // pick the column with the smallest nonzero magnitude as pivot
            let best = (pivot..ncols).filter(|&j| m[r][j] != 0).min_by_key(|&j| m[r][j].abs());
            let Some(best) = best else { break };
            swap(&mut m, &mut t, pivot, best);
            let mut done = true;
            for j in pivot + 1..ncols {
                if m[r][j] != 0 {
                    let q = Integer::div_floor(&m[r][j], &m[r][pivot]);
                    col_op(&mut m, &mut t, j, pivot, q);
                    if m[r][j] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                pivot += 1;
                break;
            }
        }
    }

    t[pivot..]
        .iter()
        .map(|col| {
            let g = col.iter().fold(0i128, |g, &v| g.gcd(&v));
            let sign = col.iter().find(|&&v| v != 0).map(|&v| v.signum()).unwrap_or(1);
            col.iter().map(|&v| (sign * v / g.max(1)) as i64).collect()
        })
        .collect()
}

/// Visit every integer vector `k` with `kᵀ G k ≤ bound` (Fincke–Pohst).
///
/// The callback sees candidates admitted with a small relative slack; callers
/// recompute the exact quadratic form and filter. Returns the number of visited
/// search nodes.
pub fn enumerate_ellipsoid<F>(gram: &DMatrix<f64>, bound: f64, budget: u64, mut visit: F) -> Result<u64>
where
    F: FnMut(&[i64]),
{
    let n = gram.nrows();
    if bound < 0.0 {
        return Ok(0);
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("quadratic form is not positive definite"))?;
    let r = chol.l().transpose();
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)]).collect();
    let mut state = Enumeration {
        r: &r,
        diag: &diag,
        bound: bound * (1.0 + 1e-12) + 1e-12,
        budget,
        visited: 0,
        k: vec![0i64; n],
    };
    state.descend(n, 0.0, &mut visit)?;
    Ok(state.visited)
}

struct Enumeration<'a> {
    r: &'a DMatrix<f64>,
    diag: &'a [f64],
    bound: f64,
    budget: u64,
    visited: u64,
    k: Vec<i64>,
}

impl Enumeration<'_> {
    fn descend<F: FnMut(&[i64])>(&mut self, level: usize, partial: f64, visit: &mut F) -> Result<()> {
        if level == 0 {
            visit(&self.k);
            return Ok(());
        }
        let i = level - 1;
        let n = self.k.len();
        let shift: f64 = (i + 1..n).map(|j| self.r[(i, j)] * self.k[j] as f64).sum::<f64>() / self.diag[i];
        let center = -shift;
        let rem = (self.bound - partial).max(0.0);
        let radius = rem.sqrt() / self.diag[i].abs();
        let lo = (center - radius).ceil() as i64;
        let hi = (center + radius).floor() as i64;
        for ki in lo..=hi {
            self.visited += 1;
            if self.visited > self.budget {
                return Err(Error::BudgetExceeded { cap: self.budget });
            }
            let d = self.diag[i] * (ki as f64 - center);
            let next = partial + d * d;
            if next > self.bound {
                continue;
            }
            self.k[i] = ki;
            self.descend(i, next, visit)?;
        }
        self.k[i] = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_simple_fractions() {
        assert_eq!(reconstruct_rational(0.2, 1_000_000, 1e-13), Some(Rational::new(1, 5)));
        assert_eq!(
            reconstruct_rational(-2.0 / 3.0, 1_000_000, 1e-13),
            Some(Rational::new(-2, 3))
        );
        assert_eq!(reconstruct_rational(0.0, 10, 1e-13), Some(Rational::new(0, 1)));
        assert_eq!(reconstruct_rational(2f64.sqrt() / 3.0, 1_000_000, 1e-13), None);
    }

    #[test]
    fn kernel_is_saturated() {
        // kernel of (4, -2): generated by (1, 2), not (2, 4)
        let k = integer_kernel(&[vec![4, -2]], 2);
        assert_eq!(k, vec![vec![1, 2]]);
        // kernel of (0, 0, 6) is spanned by e1, e2
        let k = integer_kernel(&[vec![0, 0, 6]], 3);
        assert_eq!(k.len(), 2);
        for v in &k {
            assert_eq!(v[2], 0);
        }
        // full rank has empty kernel
        assert!(integer_kernel(&[vec![1, 0], vec![0, 1]], 2).is_empty());
    }

    #[test]
    fn kernel_of_rank_two_system() {
        let rows = vec![vec![1, 1, 1, 0], vec![0, 2, 0, 3]];
        let k = integer_kernel(&rows, 4);
        assert_eq!(k.len(), 2);
        for v in &k {
            for row in &rows {
                let dot: i128 = row.iter().zip(v).map(|(&a, &b)| a * b as i128).sum();
                assert_eq!(dot, 0);
            }
        }
    }

    #[test]
    fn ellipsoid_enumeration_matches_box_scan() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 0.5]);
        let bound = 30.0;
        let mut found = Vec::new();
        enumerate_ellipsoid(&g, bound, u64::MAX, |k| {
            let q = 2.0 * (k[0] * k[0]) as f64 + 1.4 * (k[0] * k[1]) as f64 + 0.5 * (k[1] * k[1]) as f64;
            if q <= bound {
                found.push((k[0], k[1]));
            }
        })
        .unwrap();
        found.sort();
        let mut brute = Vec::new();
        for a in -40i64..=40 {
            for b in -40i64..=40 {
                let q = 2.0 * (a * a) as f64 + 1.4 * (a * b) as f64 + 0.5 * (b * b) as f64;
                if q <= bound {
                    brute.push((a, b));
                }
            }
        }
        assert_eq!(found, brute);
    }

    #[test]
    fn enumeration_budget() {
        let g = DMatrix::identity(3, 3);
        let err = enumerate_ellipsoid(&g, 1e4, 100, |_| {}).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { cap: 100 }));
    }
}
