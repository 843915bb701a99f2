//! The two supported foliated tori.
//!
//! [`FlatLinearFoliation`] is a linear foliation of the flat unit torus
//! `ℝⁿ/ℤⁿ`, described by orthonormal frames of the tangential subspace `F`
//! and its orthogonal complement `H`. [`FiberedTorusModel`] is a 2-torus
//! foliated by the circles `{y = const}` with metric `a(x,y)dx² + b(y)dy²`,
//! sampled on a periodic grid.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::lattice::{self, Rational};

/// Pair of tangential/transverse form degrees `(i, j)` in `Λ^i F* ⊗ Λ^j H*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bigrade {
    pub tangential: usize,
    pub transverse: usize,
    pub leaf_dim: usize,
    pub codim: usize,
}

impl Bigrade {
    pub fn new(tangential: usize, transverse: usize, leaf_dim: usize, codim: usize) -> Result<Self> {
        if tangential > leaf_dim || transverse > codim {
            return Err(Error::invalid(format!(
                "bigrade ({tangential},{transverse}) outside (0..={leaf_dim}, 0..={codim})"
            )));
        }
        Ok(Bigrade {
            tangential,
            transverse,
            leaf_dim,
            codim,
        })
    }

    /// Degree `(0, 0)`: functions.
    pub fn functions(leaf_dim: usize, codim: usize) -> Self {
        Bigrade {
            tangential: 0,
            transverse: 0,
            leaf_dim,
            codim,
        }
    }

    pub fn degree(&self) -> usize {
        self.tangential + self.transverse
    }

    /// Fibre dimension `C(p,i)·C(q,j)` of the bigraded form bundle.
    pub fn multiplicity(&self) -> u64 {
        binomial(self.leaf_dim, self.tangential) * binomial(self.codim, self.transverse)
    }

    /// All bigrades `(i, j)` with `i + j = degree`.
    pub fn of_degree(degree: usize, leaf_dim: usize, codim: usize) -> Vec<Bigrade> {
        (0..=leaf_dim)
            .filter(|&i| i <= degree && degree - i <= codim)
            .map(|i| Bigrade::functions(leaf_dim, codim).with(i, degree - i))
            .collect()
    }

    fn with(mut self, i: usize, j: usize) -> Self {
        self.tangential = i;
        self.transverse = j;
        self
    }
}

impl fmt::Display for Bigrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}j{}", self.tangential, self.transverse)
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Whether the leaves of a linear foliation are compact tori or dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rationality {
    /// `F ∩ ℤⁿ` has full rank `p`; rows are an integer basis of the leaf lattice.
    Fibration { leaf_lattice: Vec<Vec<i64>> },
    /// `F ∩ ℤⁿ = 0`; every leaf is a dense copy of `ℝᵖ`.
    DenseLeaves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RationalityClass {
    Fibration,
    DenseLeaves,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalityReport {
    pub class: RationalityClass,
    pub leaf_lattice: Vec<Vec<i64>>,
    /// Set when the answer comes from the bounded integer-relation search
    /// rather than exact rational reconstruction of the leaf projector.
    pub heuristic: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RationalityOptions {
    /// Largest denominator accepted when reconstructing projector entries.
    pub max_denominator: i128,
    pub tolerance: f64,
    /// Half-width of the integer box searched for lattice vectors in `F`
    /// when the projector is not rational.
    pub relation_box: i64,
}

impl Default for RationalityOptions {
    fn default() -> Self {
        RationalityOptions {
            max_denominator: 1_000_000,
            tolerance: 1e-12,
            relation_box: 12,
        }
    }
}

const FRAME_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlatLinearFoliation {
    /// `p × n`, orthonormal rows spanning `F`.
    pub tangent_frame: DMatrix<f64>,
    /// `q × n`, orthonormal rows spanning `H = F^⊥`.
    pub transverse_frame: DMatrix<f64>,
    pub rationality: Rationality,
    pub rationality_heuristic: bool,
}

impl FlatLinearFoliation {
    pub fn ambient_dim(&self) -> usize {
        self.tangent_frame.ncols()
    }

    pub fn leaf_dim(&self) -> usize {
        self.tangent_frame.nrows()
    }

    pub fn codim(&self) -> usize {
        self.transverse_frame.nrows()
    }

    pub fn functions(&self) -> Bigrade {
        Bigrade::functions(self.leaf_dim(), self.codim())
    }

    pub fn bigrade(&self, tangential: usize, transverse: usize) -> Result<Bigrade> {
        Bigrade::new(tangential, transverse, self.leaf_dim(), self.codim())
    }

    /// Orthogonal projector `UᵀU` onto `F`.
    pub fn tangent_projector(&self) -> DMatrix<f64> {
        self.tangent_frame.transpose() * &self.tangent_frame
    }

    /// Max-norm deviations of the frame identities
    /// `(UUᵀ − I, UWᵀ, WWᵀ − I, UᵀU + WᵀW − I)`.
    pub fn frame_defects(&self) -> [f64; 4] {
        let u = &self.tangent_frame;
        let w = &self.transverse_frame;
        let max_abs = |m: DMatrix<f64>| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        [
            max_abs(u * u.transpose() - DMatrix::identity(u.nrows(), u.nrows())),
            max_abs(u * w.transpose()),
            max_abs(w * w.transpose() - DMatrix::identity(w.nrows(), w.nrows())),
            max_abs(u.transpose() * u + w.transpose() * w - DMatrix::identity(u.ncols(), u.ncols())),
        ]
    }
}

/// Build a linear foliation of `ℝⁿ/ℤⁿ` from `p` spanning vectors of `F`.
pub fn build_flat_model(n: usize, span: &[Vec<f64>]) -> Result<FlatLinearFoliation> {
    build_flat_model_with(n, span, &RationalityOptions::default())
}

pub fn build_flat_model_with(n: usize, span: &[Vec<f64>], options: &RationalityOptions) -> Result<FlatLinearFoliation> {
    let p = span.len();
    if n < 2 || p == 0 || p >= n {
        return Err(Error::invalid(format!("need 1 <= p < n with n >= 2, got n={n}, p={p}")));
    }
    if let Some(v) = span.iter().find(|v| v.len() != n) {
        return Err(Error::invalid(format!(
            "spanning vector has length {}, expected {n}",
            v.len()
        )));
    }

    let vectors: Vec<DVector<f64>> = span.iter().map(|v| DVector::from_column_slice(v)).collect();
    let tangent = orthonormalize(&vectors);
    if tangent.len() < p {
        return Err(Error::DegenerateSpan {
            rank: tangent.len(),
            expected: p,
        });
    }

    // complete with coordinate axes, largest residual first
    let mut basis = tangent.clone();
    let mut transverse = Vec::with_capacity(n - p);
    while basis.len() < n {
        let best = (0..n)
            .map(|i| {
                let e = DVector::from_fn(n, |r, _| f64::from(r == i));
                let res = residual(&basis, &e);
                let norm = res.norm();
                (norm, res)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("n >= 2");
        let v = reorthogonalize(&basis, best.1);
        basis.push(v.clone());
        transverse.push(v);
    }

    let mut full = DMatrix::zeros(n, n);
    for (r, v) in basis.iter().enumerate() {
        full.set_row(r, &v.transpose());
    }
    // orientation convention: det [U; W] = +1
    if full.determinant() < 0.0 {
        let last = transverse.len() - 1;
        transverse[last] = -transverse[last].clone();
    }

    let tangent_frame = rows_to_matrix(&tangent, n);
    let transverse_frame = rows_to_matrix(&transverse, n);

    let report = detect_rationality_with(&tangent_frame, options);
    let rationality = match report.class {
        RationalityClass::Fibration => Rationality::Fibration {
            leaf_lattice: report.leaf_lattice,
        },
        RationalityClass::DenseLeaves => Rationality::DenseLeaves,
        RationalityClass::Mixed => {
            return Err(Error::MixedRationality {
                lattice_rank: report.leaf_lattice.len(),
                leaf_dim: p,
            })
        }
    };

    let model = FlatLinearFoliation {
        tangent_frame,
        transverse_frame,
        rationality,
        rationality_heuristic: report.heuristic,
    };
    let defects = model.frame_defects();
    if defects.iter().any(|&d| d > FRAME_TOL) {
        return Err(Error::invalid(format!(
            "orthonormal frame defects {defects:?} exceed {FRAME_TOL:e}"
        )));
    }
    Ok(model)
}

fn rows_to_matrix(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (r, v) in rows.iter().enumerate() {
        m.set_row(r, &v.transpose());
    }
    m
}

fn residual(basis: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut r = v.clone();
    for b in basis {
        let c = b.dot(&r);
        r.axpy(-c, b, 1.0);
    }
    r
}

fn reorthogonalize(basis: &[DVector<f64>], v: DVector<f64>) -> DVector<f64> {
    let r = residual(basis, &v);
    let r = residual(basis, &r);
    r.normalize()
}

/// Modified Gram–Schmidt with one re-orthogonalization pass; vectors that
/// are numerically dependent on earlier ones are dropped.
fn orthonormalize(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        let r = residual(&basis, &residual(&basis, v));
        if scale > 0.0 && r.norm() > 1e-10 * scale {
            basis.push(r.normalize());
        }
    }
    basis
}

/// Classify the rank of the leaf lattice `F ∩ ℤⁿ` from the tangent frame.
pub fn detect_rationality(tangent_frame: &DMatrix<f64>) -> RationalityReport {
    detect_rationality_with(tangent_frame, &RationalityOptions::default())
}

pub fn detect_rationality_with(tangent_frame: &DMatrix<f64>, options: &RationalityOptions) -> RationalityReport {
    let p = tangent_frame.nrows();
    let n = tangent_frame.ncols();
    let projector = tangent_frame.transpose() * tangent_frame;

    if let Some(exact) = rational_projector(&projector, p, options) {
        // F ∩ ℤⁿ = ker(I − P) ∩ ℤⁿ
        let complement: Vec<Vec<Rational>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Rational::from_integer(i128::from(i == j)) - exact[i][j])
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<i128>> = complement
            .iter()
            .map(|row| {
                let lcm = row.iter().fold(1i128, |acc, r| num_integer::lcm(acc, *r.denom()));
                row.iter().map(|r| r.numer() * (lcm / r.denom())).collect()
            })
            .collect();
        let leaf_lattice = lattice::integer_kernel(&rows, n);
        debug_assert_eq!(leaf_lattice.len(), p);
        return RationalityReport {
            class: RationalityClass::Fibration,
            leaf_lattice,
            heuristic: false,
        };
    }

    // bounded search for integer vectors lying in F
    let found = relation_search(tangent_frame, options.relation_box);
    let rank = found.len();
    let class = match rank {
        0 => RationalityClass::DenseLeaves,
        r if r == p => RationalityClass::Fibration,
        _ => RationalityClass::Mixed,
    };
    RationalityReport {
        class,
        leaf_lattice: found,
        heuristic: true,
    }
}

fn rational_projector(projector: &DMatrix<f64>, p: usize, options: &RationalityOptions) -> Option<Vec<Vec<Rational>>> {
    let n = projector.nrows();
    let mut exact = vec![vec![Rational::from_integer(0); n]; n];
    for i in 0..n {
        for j in 0..n {
            exact[i][j] = lattice::reconstruct_rational(projector[(i, j)], options.max_denominator, options.tolerance)?;
        }
    }
    // must be an exact rank-p orthogonal projector
    let trace: Rational = (0..n).map(|i| exact[i][i]).sum();
    if trace != Rational::from_integer(p as i128) {
        return None;
    }
    for i in 0..n {
        for j in 0..n {
            if exact[i][j] != exact[j][i] {
                return None;
            }
            let sq: Rational = (0..n).map(|k| exact[i][k] * exact[k][j]).sum();
            if sq != exact[i][j] {
                return None;
            }
        }
    }
    Some(exact)
}

fn relation_search(tangent_frame: &DMatrix<f64>, half_width: i64) -> Vec<Vec<i64>> {
    let n = tangent_frame.ncols();
    let projector = tangent_frame.transpose() * tangent_frame;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut found = Vec::new();
    let mut k = vec![-half_width; n];
    loop {
        if k.iter().any(|&v| v != 0) {
            let kv = DVector::from_iterator(n, k.iter().map(|&v| v as f64));
            let off = &kv - &projector * &kv;
            if off.norm() <= 1e-9 * kv.norm() {
                let r = residual(&basis, &kv);
                if r.norm() > 1e-8 * kv.norm() {
                    basis.push(r.normalize());
                    found.push(k.clone());
                }
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == n {
                return found;
            }
            k[i] += 1;
            if k[i] <= half_width {
                break;
            }
            k[i] = -half_width;
            i += 1;
        }
    }
}

/// Grid-sampled 2-torus foliated by the circles `y = const`, with metric
/// `a(x,y)dx² + b(y)dy²`. Node `(i, j)` sits at `(i/nx, j/ny)`.
#[derive(Debug, Clone)]
pub struct FiberedTorusModel {
    pub nx: usize,
    pub ny: usize,
    /// Row-major in `y`: `a[j * nx + i]`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FiberedTorusModel {
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn functions(&self) -> Bigrade {
        Bigrade::functions(1, 1)
    }
}

pub fn build_fibered_model<A, B>(nx: usize, ny: usize, a: A, b: B) -> Result<FiberedTorusModel>
where
    A: Fn(f64, f64) -> f64,
    B: Fn(f64, f64) -> f64,
{
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!("grid must be at least 2x2, got {nx}x{ny}")));
    }
    let mut a_samples = Vec::with_capacity(nx * ny);
    let mut b_samples = Vec::with_capacity(ny);
    for j in 0..ny {
        let y = j as f64 / ny as f64;
        let mut row_min = f64::INFINITY;
        let mut row_max = f64::NEG_INFINITY;
        for i in 0..nx {
            let x = i as f64 / nx as f64;
            let av = a(x, y);
            if !(av > 0.0) || !av.is_finite() {
                return Err(Error::NonPositiveMetric {
                    coefficient: "a",
                    x,
                    y,
                    value: av,
                });
            }
            a_samples.push(av);
            let bv = b(x, y);
            if !(bv > 0.0) || !bv.is_finite() {
                return Err(Error::NonPositiveMetric {
                    coefficient: "b",
                    x,
                    y,
                    value: bv,
                });
            }
            row_min = row_min.min(bv);
            row_max = row_max.max(bv);
        }
        let variation = row_max - row_min;
        if variation > 1e-14 * row_max.max(1.0) {
            return Err(Error::TransverseLeafDependence { y, variation });
        }
        b_samples.push(b(0.0, y));
    }
    Ok(FiberedTorusModel {
        nx,
        ny,
        a: a_samples,
        b: b_samples,
    })
}

pub fn build_fibered_model_from_exprs(nx: usize, ny: usize, a: &Expr, b: &Expr) -> Result<FiberedTorusModel> {
    build_fibered_model(nx, ny, |x, y| a.eval(x, y), |x, y| b.eval(x, y))
}
