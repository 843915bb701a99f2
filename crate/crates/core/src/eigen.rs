//! Smallest eigenpairs of large sparse symmetric positive semidefinite
//! operators.
//!
//! Chebyshev-filtered block subspace iteration: a block a little wider than
//! the number of wanted pairs is repeatedly passed through a Chebyshev
//! polynomial that damps the interval `[cut, upper]` and amplifies everything
//! below it, then re-orthonormalized and Rayleigh–Ritz projected. Working on a
//! block (rather than a single Krylov vector) resolves the exact
//! degeneracies of periodic grids. A known null vector is deflated exactly and
//! every iterate is kept orthogonal to it.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = M x`
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Any upper bound on the largest eigenvalue.
    fn spectral_upper_bound(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Converged when `‖Mv − λv‖ ≤ tolerance · max(1, λ)`.
    pub tolerance: f64,
    /// Operators of at most this dimension are diagonalized densely.
    pub dense_threshold: usize,
    pub filter_degree: usize,
    /// Budget of single-vector matrix applications per requested pair.
    pub matvecs_per_eigenvalue: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tolerance: 1e-8,
            dense_threshold: 400,
            filter_degree: 30,
            matvecs_per_eigenvalue: 4000,
            seed: 0x5eed_1eaf,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
}

/// The `count` smallest eigenpairs of `op`.
///
/// When `null` is given it must be an exact kernel vector; it is returned as
/// the first pair with eigenvalue exactly zero.
pub fn smallest_eigenpairs<O: SymmetricOperator>(
    op: &O,
    count: usize,
    null: Option<&[f64]>,
    options: &EigenOptions,
) -> Result<Eigenpairs> {
    let n = op.dim();
    if count == 0 || count > n {
        return Err(Error::invalid(format!(
            "requested {count} eigenpairs of a {n}-dimensional operator"
        )));
    }
    let locked = null.map(|z| {
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        DMatrix::from_iterator(n, 1, z.iter().map(|v| v / norm))
    });
    if n <= options.dense_threshold {
        return dense_eigenpairs(op, count, locked, options);
    }
    ChebyshevSolver {
        op,
        n,
        locked,
        options,
        matvecs: 0,
    }
    .solve(count)
}

fn apply_block<O: SymmetricOperator>(op: &O, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut y = DMatrix::zeros(n, x.ncols());
    y.as_mut_slice()
        .par_chunks_mut(n)
        .zip(x.as_slice().par_chunks(n))
        .for_each(|(out, col)| op.apply(col, out));
    y
}

fn residual_norms(values: &[f64], v: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, &theta)| (w.column(i) - v.column(i) * theta).norm())
        .collect()
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn dense_eigenpairs<O: SymmetricOperator>(
    op: &O,
    count: usize,
    locked: Option<DMatrix<f64>>,
    _options: &EigenOptions,
) -> Result<Eigenpairs> {
    let n = op.dim();
    let identity = DMatrix::<f64>::identity(n, n);
    let m = apply_block(op, &identity);
    let (mut values, mut vectors) = sorted_eigen(m);
    if let Some(z) = &locked {
        // replace the pair carrying the null direction by the exact one
        let overlaps = vectors.transpose() * z;
        let idx = (0..n)
            .max_by(|&a, &b| overlaps[a].abs().total_cmp(&overlaps[b].abs()))
            .expect("n > 0");
        values.remove(idx);
        vectors = vectors.remove_column(idx);
        values.insert(0, 0.0);
        vectors = vectors.insert_column(0, 0.0);
        vectors.set_column(0, &z.column(0));
    }
    values.truncate(count);
    let vectors = vectors.columns(0, count).into_owned();
    let w = apply_block(op, &vectors);
    let residuals = residual_norms(&values, &vectors, &w);
    Ok(Eigenpairs {
        values,
        vectors,
        residuals,
        matvecs: n,
    })
}

struct ChebyshevSolver<'a, O: SymmetricOperator> {
    op: &'a O,
    n: usize,
    locked: Option<DMatrix<f64>>,
    options: &'a EigenOptions,
    matvecs: usize,
}

impl<O: SymmetricOperator> ChebyshevSolver<'_, O> {
    fn solve(mut self, count: usize) -> Result<Eigenpairs> {
        let n = self.n;
        let n_locked = self.locked.as_ref().map_or(0, |z| z.ncols());
        let want = count.saturating_sub(n_locked);
        if want == 0 {
            let z = self.locked.clone().expect("locked vector");
            return Ok(Eigenpairs {
                values: vec![0.0],
                residuals: residual_norms(&[0.0], &z, &apply_block(self.op, &z)),
                vectors: z,
                matvecs: 1,
            });
        }
        let guard = (want / 3).max(10);
        let block = (want + guard).min(n - n_locked);
        let budget = self.options.matvecs_per_eigenvalue * count.max(8);
        let upper = self.op.spectral_upper_bound() * 1.01 + 1e-12;

        let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
        let mut v = DMatrix::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
        v = self.orthonormalize(v);
        let (mut theta, mut v, mut w) = self.rayleigh_ritz(v);

        loop {
            let residuals = residual_norms(
                &theta[..want],
                &v.columns(0, want).into_owned(),
                &w.columns(0, want).into_owned(),
            );
            let converged = residuals
                .iter()
                .zip(&theta)
                .take_while(|(r, t)| **r <= self.options.tolerance * t.abs().max(1.0))
                .count();
            if converged == want {
                return Ok(self.finish(count, want, theta, v, residuals));
            }
            if self.matvecs >= budget {
                return Err(Error::NoConvergence {
                    matvecs: self.matvecs,
                    converged: converged + n_locked,
                    requested: count,
                });
            }
            let lowest = theta[0];
            let mut cut = theta[block - 1];
            if cut >= upper {
                cut = 0.5 * (lowest + upper);
            }
            let filtered = self.filter(&v, cut, upper, lowest.min(cut - 1e-12 * upper));
            let orthonormal = self.orthonormalize(filtered);
            (theta, v, w) = self.rayleigh_ritz(orthonormal);
        }
    }

    fn finish(&self, count: usize, want: usize, theta: Vec<f64>, v: DMatrix<f64>, residuals: Vec<f64>) -> Eigenpairs {
        let mut values = Vec::with_capacity(count);
        let mut vectors = DMatrix::zeros(self.n, count);
        let mut all_residuals = Vec::with_capacity(count);
        let mut col = 0;
        if let Some(z) = &self.locked {
            values.push(0.0);
            vectors.set_column(0, &z.column(0));
            let r = residual_norms(&[0.0], z, &apply_block(self.op, z));
            all_residuals.push(r[0]);
            col = 1;
        }
        for i in 0..want {
            values.push(theta[i]);
            vectors.set_column(col + i, &v.column(i));
            all_residuals.push(residuals[i]);
        }
        Eigenpairs {
            values,
            vectors,
            residuals: all_residuals,
            matvecs: self.matvecs,
        }
    }

    fn orthonormalize(&self, mut v: DMatrix<f64>) -> DMatrix<f64> {
        for _ in 0..2 {
            if let Some(z) = &self.locked {
                let coef = z.transpose() * &v;
                v -= z * coef;
            }
        }
        let q = v.qr().q();
        // second pass against the locked space after QR rounding
        match &self.locked {
            Some(z) => {
                let coef = z.transpose() * &q;
                (q.clone() - z * coef).qr().q()
            }
            None => q,
        }
    }

    fn rayleigh_ritz(&mut self, v: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let w = apply_block(self.op, &v);
        self.matvecs += v.ncols();
        let h = v.transpose() * &w;
        let (theta, y) = sorted_eigen(h);
        (theta, &v * &y, &w * &y)
    }

    /// Scaled Chebyshev filter damping `[cut, upper]`, normalized at `lowest`.
    fn filter(&mut self, x: &DMatrix<f64>, cut: f64, upper: f64, lowest: f64) -> DMatrix<f64> {
        let e = 0.5 * (upper - cut);
        let c = 0.5 * (upper + cut);
        let sigma1 = e / (lowest - c);
        let tau = 2.0 / sigma1;
        let mut sigma = sigma1;

        let mut prev = x.clone();
        let mut cur = (apply_block(self.op, &prev) - &prev * c) * (sigma1 / e);
        self.matvecs += x.ncols();
        for _ in 1..self.options.filter_degree {
            let sigma_next = 1.0 / (tau - sigma);
            let next = (apply_block(self.op, &cur) - &cur * c) * (2.0 * sigma_next / e) - &prev * (sigma * sigma_next);
            self.matvecs += x.ncols();
            prev = cur;
            cur = next;
            sigma = sigma_next;
        }
        cur
    }
}
