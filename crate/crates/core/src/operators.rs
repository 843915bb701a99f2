//! Tangential and transverse Laplacians, and the rescaled operator
//! `L_h = Δ_F + h²Δ_H`.
//!
//! On a flat linear foliation the exponential `e^{2πi⟨k,x⟩}` is an eigenform
//! of both Laplacians, so the operator is diagonal in the Fourier basis and is
//! represented by its [`ModeSymbol`]. The frames are constant, the mean
//! curvature of the leaves vanishes and the tangential and transverse
//! derivatives commute, so every lower-order term in the bigraded
//! decomposition of `L_h` is identically zero there: `L_h` acts on each
//! bigrade as the scalar `|2πUk|² + h²|2πWk|²` times the identity of the
//! `C(p,i)·C(q,j)`-dimensional fibre.
//!
//! On the fibered 2-torus, `Δ_F` and `Δ_H` are discretized by conservative
//! flux differences and stored after the similarity `u ↦ (ab)^{1/4}u`, which
//! makes both matrices symmetric in the Euclidean inner product.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Bigrade, FiberedTorusModel, FlatLinearFoliation};

pub type LatticeVector = Vec<i64>;

/// Per-mode symbol of `Δ_F` and `Δ_H` on a flat linear foliation.
#[derive(Debug, Clone, Copy)]
pub struct ModeSymbol<'a> {
    pub model: &'a FlatLinearFoliation,
    pub grade: Bigrade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEnergies {
    /// `|2πUk|²`
    pub tangential: f64,
    /// `|2πWk|²`
    pub transverse: f64,
}

impl<'a> ModeSymbol<'a> {
    pub fn new(model: &'a FlatLinearFoliation, grade: Bigrade) -> Self {
        ModeSymbol { model, grade }
    }

    pub fn energies(&self, k: &[i64]) -> ModeEnergies {
        let frame_energy = |frame: &DMatrix<f64>| -> f64 {
            frame
                .row_iter()
                .map(|row| {
                    let c: f64 = row.iter().zip(k).map(|(u, &ki)| u * ki as f64).sum();
                    let xi = 2.0 * PI * c;
                    xi * xi
                })
                .sum()
        };
        ModeEnergies {
            tangential: frame_energy(&self.model.tangent_frame),
            transverse: frame_energy(&self.model.transverse_frame),
        }
    }

    /// Eigenvalue of `L_h` on the mode `k`; each lattice vector contributes
    /// [`Self::multiplicity`] copies.
    pub fn mode_eigenvalue(&self, k: &[i64], h: f64) -> f64 {
        let e = self.energies(k);
        e.tangential + h * h * e.transverse
    }

    pub fn multiplicity(&self) -> u64 {
        self.grade.multiplicity()
    }
}

/// `‖u‖²_{s,k} = Σ (1+|ξ_F|²+|ξ_H|²)^s (1+|ξ_F|²)^k |û(ξ)|²` over the finitely
/// many Fourier modes in `coefficients`.
pub fn sobolev_norm_sq(
    model: &FlatLinearFoliation,
    coefficients: &[(LatticeVector, Complex64)],
    s: f64,
    k: f64,
) -> f64 {
    let symbol = ModeSymbol::new(model, model.functions());
    coefficients
        .iter()
        .map(|(mode, c)| {
            let e = symbol.energies(mode);
            (1.0 + e.tangential + e.transverse).powf(s) * (1.0 + e.tangential).powf(k) * c.norm_sqr()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GardingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Constants of the crude inequality
/// `(L_h u,u) ≥ C₁‖u‖²_{0,1} + C₂h²‖u‖²_{1,0} − C₃‖u‖²`.
pub const GARDING_C1: f64 = 0.5;
pub const GARDING_C2: f64 = 0.5;
pub const GARDING_C3: f64 = 1.0;

/// Evaluate both sides of the crude Gårding inequality for a trial form.
///
/// Per mode the right side is `½(1+e_F) + ½h²(1+e_F+e_H) − 1`, which never
/// exceeds `e_F + h²e_H` when `h ≤ 1`.
pub fn check_crude_garding(
    model: &FlatLinearFoliation,
    h: f64,
    trial: &[(LatticeVector, Complex64)],
) -> Result<GardingReport> {
    check_scale(h)?;
    let symbol = ModeSymbol::new(model, model.functions());
    let lhs: f64 = trial
        .iter()
        .map(|(k, c)| symbol.mode_eigenvalue(k, h) * c.norm_sqr())
        .sum();
    let rhs = GARDING_C1 * sobolev_norm_sq(model, trial, 0.0, 1.0)
        + GARDING_C2 * h * h * sobolev_norm_sq(model, trial, 1.0, 0.0)
        - GARDING_C3 * sobolev_norm_sq(model, trial, 0.0, 0.0);
    let slack = 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
    Ok(GardingReport {
        lhs,
        rhs,
        holds: lhs >= rhs - slack,
    })
}

pub(crate) fn check_scale(h: f64) -> Result<()> {
    if h > 0.0 && h <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale h={h} outside (0, 1]")))
    }
}

/// Symmetric matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseSymmetric {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Duplicate entries are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            cols.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseSymmetric {
            dim,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `y += alpha · M x`
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            *out += alpha * acc;
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim];
        self.mul_add(1.0, x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn asymmetry(&self) -> f64 {
        let dense = self.to_dense();
        (&dense - dense.transpose()).amax()
    }

    /// Upper bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Symmetrized discretizations of `Δ_F` and `Δ_H` on the fibered torus.
#[derive(Debug, Clone)]
pub struct DiscreteOperatorPair {
    pub nx: usize,
    pub ny: usize,
    pub tangential: SparseSymmetric,
    pub transverse: SparseSymmetric,
    /// `(ab)^{1/4}` at each node.
    pub sqrt_weight: Vec<f64>,
    /// `ΔxΔy`
    pub cell_area: f64,
}

impl DiscreteOperatorPair {
    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    /// `y = (A + h²B) x`
    pub fn apply(&self, h: f64, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.tangential.mul_add(1.0, x, y);
        self.transverse.mul_add(h * h, x, y);
    }

    /// Unit vector along `(ab)^{1/4}`, the image of the constants; it spans
    /// the kernel of both `A` and `B`.
    pub fn null_vector(&self) -> Vec<f64> {
        let norm = self.sqrt_weight.iter().map(|w| w * w).sum::<f64>().sqrt();
        self.sqrt_weight.iter().map(|w| w / norm).collect()
    }

    pub fn upper_bound(&self, h: f64) -> f64 {
        self.tangential.gershgorin_bound() + h * h * self.transverse.gershgorin_bound()
    }

    pub fn dense(&self, h: f64) -> DMatrix<f64> {
        self.tangential.to_dense() + self.transverse.to_dense() * (h * h)
    }

    /// Map a nodal function `u` into the symmetrized variables.
    pub fn to_symmetric(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.sqrt_weight).map(|(u, w)| u * w).collect()
    }
}

/// Flux-form finite differences for `Δ_F` (along `x`) and `Δ_H` (along `y`).
///
/// With `ρ = √(ab)`, the tangential part is `−ρ⁻¹∂_x(ρa⁻¹∂_x u)` and the
/// transverse part `−ρ⁻¹∂_y(ρb⁻¹∂_y u)`; face coefficients are arithmetic
/// means of the two adjacent nodes.
pub fn assemble_fibered_operators(model: &FiberedTorusModel) -> Result<DiscreteOperatorPair> {
    let (nx, ny) = (model.nx, model.ny);
    let n = nx * ny;
    let rho: Vec<f64> = (0..n).map(|idx| (model.a[idx] * model.b[idx / nx]).sqrt()).collect();
    let sqrt_weight: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    if let Some(index) = sqrt_weight
        .iter()
        .position(|w| !(w.is_finite() && *w > f64::MIN_POSITIVE))
    {
        return Err(Error::SingularWeight { index });
    }

    // face conductivities ρ/a = √(b/a) and ρ/b = √(a/b)
    let cx: Vec<f64> = (0..n).map(|idx| (model.b[idx / nx] / model.a[idx]).sqrt()).collect();
    let cy: Vec<f64> = (0..n).map(|idx| (model.a[idx] / model.b[idx / nx]).sqrt()).collect();

    let dx2 = (nx * nx) as f64;
    let dy2 = (ny * ny) as f64;
    let mut tangential = Vec::with_capacity(3 * n);
    let mut transverse = Vec::with_capacity(3 * n);
    for j in 0..ny {
        for i in 0..nx {
            let p = model.node(i, j);
            let east = model.node((i + 1) % nx, j);
            let north = model.node(i, (j + 1) % ny);

            let c = 0.5 * (cx[p] + cx[east]) * dx2;
            push_face(&mut tangential, p, east, c, &rho);

            let c = 0.5 * (cy[p] + cy[north]) * dy2;
            push_face(&mut transverse, p, north, c, &rho);
        }
    }

    Ok(DiscreteOperatorPair {
        nx,
        ny,
        tangential: SparseSymmetric::from_triplets(n, tangential),
        transverse: SparseSymmetric::from_triplets(n, transverse),
        sqrt_weight,
        cell_area: 1.0 / (nx * ny) as f64,
    })
}

fn push_face(out: &mut Vec<(usize, usize, f64)>, p: usize, q: usize, conductance: f64, rho: &[f64]) {
    out.push((p, p, conductance / rho[p]));
    out.push((q, q, conductance / rho[q]));
    let off = -conductance / (rho[p] * rho[q]).sqrt();
    out.push((p, q, off));
    out.push((q, p, off));
}

/// Symmetrized flux-form Laplacian of the circle `ℝ/ℤ` with metric `a(x)dx²`,
/// i.e. `−a^{-1/2}∂_x(a^{-1/2}∂_x u)`, sampled at `a.len()` nodes.
pub fn leaf_laplacian(a: &[f64]) -> DMatrix<f64> {
    let n = a.len();
    let dx2 = (n * n) as f64;
    let rho: Vec<f64> = a.iter().map(|v| v.sqrt()).collect();
    let cond: Vec<f64> = a.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let e = (i + 1) % n;
        let c = 0.5 * (cond[i] + cond[e]) * dx2;
        m[(i, i)] += c / rho[i];
        m[(e, e)] += c / rho[e];
        let off = -c / (rho[i] * rho[e]).sqrt();
        m[(i, e)] += off;
        m[(e, i)] += off;
    }
    m
}

/// Unsymmetrized action `A u` of the tangential operator on a nodal function.
pub fn apply_tangential_nodal(pair: &DiscreteOperatorPair, u: &[f64]) -> Vec<f64> {
    let v = pair.to_symmetric(u);
    let mut out = vec![0.0; v.len()];
    pair.tangential.mul_add(1.0, &v, &mut out);
    out.iter().zip(&pair.sqrt_weight).map(|(o, w)| o / w).collect()
}
