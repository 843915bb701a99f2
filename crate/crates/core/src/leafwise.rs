//! The leafwise spectrum distribution function `N_F(τ) = ∫_M Tr e(x,τ) dx`
//! of the tangential Laplacian.
//!
//! Dense leaves are isometric to `ℝᵖ`, so the spectral projection kernel is
//! translation invariant and `N_F` is `vol(M)` times the Euclidean density of
//! states. Compact leaves contribute their own counting function, weighted by
//! the transverse volume they sweep out. All supported models have trivial
//! holonomy, so leaves and holonomy coverings coincide; nothing here covers
//! the general case.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{ContinuousPart, CountingFunction};
use crate::error::{Error, Result};
use crate::lattice::enumerate_ellipsoid;
use crate::models::{Bigrade, FiberedTorusModel, FlatLinearFoliation, Rationality};
use crate::operators::leaf_laplacian;
use crate::spectra::DEFAULT_ENUMERATION_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    ClosedFormDensity,
    AtomicFibration,
    NumericalFibered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafwiseDistribution {
    pub distribution: CountingFunction,
    pub kind: DistributionKind,
    pub leaf_dim: usize,
    pub codim: usize,
    /// `N_F(0)`: weight of the leafwise-harmonic modes.
    pub transverse_mass: f64,
    pub grade_multiplicity: u64,
    /// Below this bound the representation is trusted: all atoms are present
    /// and, for discretized leaves, resolved by the grid.
    pub trusted_below: f64,
}

impl LeafwiseDistribution {
    pub fn evaluate(&self, tau: f64) -> f64 {
        self.distribution.evaluate(tau)
    }

    /// Infimum of the leafwise spectrum.
    pub fn bottom(&self) -> Option<f64> {
        self.distribution.bottom()
    }
}

/// Volume of the unit ball in `ℝᵖ`.
pub fn unit_ball_volume(p: usize) -> f64 {
    // ω_p = (2π/p)·ω_{p−2}
    let mut omega = if p % 2 == 0 { 1.0 } else { 2.0 };
    let mut d = p % 2;
    while d + 2 <= p {
        d += 2;
        omega *= 2.0 * PI / d as f64;
    }
    omega
}

/// `N_F` on one bigrade of a flat linear foliation, with atoms up to
/// `tau_max` for fibrations.
pub fn leafwise_distribution_flat(
    model: &FlatLinearFoliation,
    grade: Bigrade,
    tau_max: f64,
) -> Result<LeafwiseDistribution> {
    let p = model.leaf_dim();
    let mult = grade.multiplicity();
    match &model.rationality {
        Rationality::DenseLeaves => {
            let coefficient = mult as f64 * (2.0 * PI).powi(-(p as i32)) * unit_ball_volume(p);
            let part = ContinuousPart::PowerLaw {
                coefficient,
                exponent: p as f64 / 2.0,
            };
            Ok(LeafwiseDistribution {
                distribution: CountingFunction::continuous(part),
                kind: DistributionKind::ClosedFormDensity,
                leaf_dim: p,
                codim: model.codim(),
                transverse_mass: 0.0,
                grade_multiplicity: mult,
                trusted_below: f64::INFINITY,
            })
        }
        Rationality::Fibration { leaf_lattice } => {
            if !(tau_max >= 0.0 && tau_max.is_finite()) {
                return Err(Error::invalid(format!(
                    "tau_max must be finite and nonnegative, got {tau_max}"
                )));
            }
            let gram = DMatrix::from_fn(p, p, |i, j| {
                leaf_lattice[i]
                    .iter()
                    .zip(&leaf_lattice[j])
                    .map(|(a, b)| (a * b) as f64)
                    .sum::<f64>()
            });
            let leaf_volume = gram.determinant().sqrt();
            let dual = gram
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::invalid("leaf lattice Gram matrix is singular"))?;
            let dual_form = dual.clone() * (4.0 * PI * PI);
            let weight = mult as f64 / leaf_volume;
            let mut atoms = Vec::new();
            enumerate_ellipsoid(&dual_form, tau_max, DEFAULT_ENUMERATION_BUDGET, |c| {
                let cf: Vec<f64> = c.iter().map(|&v| v as f64).collect();
                let mut q = 0.0;
                for i in 0..p {
                    for j in 0..p {
                        q += cf[i] * dual[(i, j)] * cf[j];
                    }
                }
                let tau = 4.0 * PI * PI * q;
                if tau <= tau_max {
                    atoms.push((tau, weight));
                }
            })?;
            Ok(LeafwiseDistribution {
                distribution: CountingFunction::from_atoms(atoms, tau_max),
                kind: DistributionKind::AtomicFibration,
                leaf_dim: p,
                codim: model.codim(),
                transverse_mass: weight,
                grade_multiplicity: mult,
                trusted_below: tau_max,
            })
        }
    }
}

/// Which grid rows serve as quadrature nodes in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LeafQuadrature {
    /// Every row of the model grid.
    #[default]
    AllRows,
    /// `count` equally spaced rows; `count` must divide `ny`.
    Rows(usize),
}

/// `N_F(λ) = Σ_y w_y √b(y) N_{L_y}(λ)` for the fibered torus, each leaf
/// discretized with the same flux scheme as the two-dimensional operator.
/// Atoms above `tau_max` are dropped.
pub fn leafwise_distribution_fibered(
    model: &FiberedTorusModel,
    quadrature: LeafQuadrature,
    tau_max: f64,
) -> Result<LeafwiseDistribution> {
    let rows: Vec<usize> = match quadrature {
        LeafQuadrature::AllRows => (0..model.ny).collect(),
        LeafQuadrature::Rows(count) => {
            if count == 0 || model.ny % count != 0 {
                return Err(Error::invalid(format!(
                    "leaf quadrature rows {count} must divide ny = {}",
                    model.ny
                )));
            }
            let stride = model.ny / count;
            (0..count).map(|r| r * stride).collect()
        }
    };
    let w = 1.0 / rows.len() as f64;
    let nx = model.nx;
    let per_leaf: Vec<Result<(Vec<f64>, f64)>> = rows
        .par_iter()
        .map(|&j| {
            let a = &model.a[j * nx..(j + 1) * nx];
            leaf_spectrum(a)
                .map(|values| (values, w * model.b[j].sqrt()))
                .map_err(|e| Error::LeafSolve {
                    y_index: j,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut atoms = Vec::new();
    let mut mass = 0.0;
    // The upper quarter of each discrete leaf spectrum is dominated by grid
    // dispersion; trust stops at the lowest such cut over all leaves.
    let mut trusted = f64::INFINITY;
    for leaf in per_leaf {
        let (values, weight) = leaf?;
        mass += weight;
        trusted = trusted.min(values[(values.len() / 4).max(1).min(values.len() - 1)]);
        atoms.extend(values.into_iter().filter(|&v| v <= tau_max).map(|v| (v, weight)));
    }
    Ok(LeafwiseDistribution {
        distribution: CountingFunction::from_atoms(atoms, tau_max),
        kind: DistributionKind::NumericalFibered,
        leaf_dim: 1,
        codim: 1,
        transverse_mass: mass,
        grade_multiplicity: 1,
        trusted_below: trusted.min(tau_max),
    })
}

/// Ascending eigenvalues of the discretized leaf Laplacian with metric
/// `a(x)dx²`; the constant mode is reported as exactly zero.
pub fn leaf_spectrum(a: &[f64]) -> Result<Vec<f64>> {
    if a.len() < 3 {
        return Err(Error::invalid("a leaf needs at least 3 grid points"));
    }
    let m = leaf_laplacian(a);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or_else(|| Error::NoConvergence {
        matvecs: 0,
        converged: 0,
        requested: a.len(),
    })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    let scale = values.last().copied().unwrap_or(1.0).abs().max(1.0);
    if values[0].abs() <= 1e-9 * scale {
        values[0] = 0.0;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_fibered_model, build_flat_model};

    #[test]
    fn kronecker_density() {
        let m = build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).unwrap();
        let nf = leafwise_distribution_flat(&m, m.functions(), 0.0).unwrap();
        assert_eq!(nf.kind, DistributionKind::ClosedFormDensity);
        for tau in [0.0f64, 1e-3, 1.0, 37.5, 1e4] {
            let exact = tau.sqrt() / PI;
            assert!((nf.evaluate(tau) - exact).abs() <= 1e-12 * exact.max(1e-300));
        }
        assert_eq!(nf.evaluate(-1.0), 0.0);
        assert_eq!(nf.transverse_mass, 0.0);
    }

    #[test]
    fn dense_plane_in_three_torus() {
        let m = build_flat_model(3, &[vec![1.0, 2f64.sqrt(), 0.0], vec![0.0, 3f64.sqrt(), 1.0]]).unwrap();
        let g = m.bigrade(1, 0).unwrap();
        let nf = leafwise_distribution_flat(&m, g, 0.0).unwrap();
        // p = 2: 2 · (2π)^{-2} · π · τ
        assert!((nf.evaluate(3.0) - 2.0 * 3.0 / (4.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn axis_fibration_atoms() {
        let m = build_flat_model(2, &[vec![1.0, 0.0]]).unwrap();
        let nf = leafwise_distribution_flat(&m, m.functions(), 400.0).unwrap();
        let atoms = nf.distribution.atoms();
        assert_eq!(atoms.len(), 4);
        for (m, a) in atoms.iter().enumerate() {
            assert!((a.location - (2.0 * PI * m as f64).powi(2)).abs() < 1e-9);
            assert_eq!(a.weight, if m == 0 { 1.0 } else { 2.0 });
        }
        assert_eq!(nf.transverse_mass, 1.0);
        let top = leafwise_distribution_flat(&m, m.bigrade(1, 1).unwrap(), 400.0).unwrap();
        assert_eq!(top.distribution, nf.distribution);
    }

    #[test]
    fn tilted_fibration_uses_leaf_length() {
        // leaf direction (1, 2): closed leaf of length √5, dual spacing 1/√5
        let m = build_flat_model(2, &[vec![1.0, 2.0]]).unwrap();
        let nf = leafwise_distribution_flat(&m, m.functions(), 100.0).unwrap();
        let w = 1.0 / 5f64.sqrt();
        assert!((nf.transverse_mass - w).abs() < 1e-15);
        let first = nf.distribution.atoms()[1];
        assert!((first.location - 4.0 * PI * PI / 5.0).abs() < 1e-9);
        assert!((first.weight - 2.0 * w).abs() < 1e-15);
    }

    #[test]
    fn fibered_unit_metric_matches_axis_fibration() {
        let model = build_fibered_model(64, 16, |_, _| 1.0, |_, _| 1.0).unwrap();
        let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 1e3).unwrap();
        let axis = build_flat_model(2, &[vec![1.0, 0.0]]).unwrap();
        let exact = leafwise_distribution_flat(&axis, axis.functions(), 1e3).unwrap();
        assert!((nf.transverse_mass - 1.0).abs() < 1e-12);
        for lambda in [0.0, 20.0, 100.0, 300.0, 700.0] {
            assert!((nf.evaluate(lambda) - exact.evaluate(lambda)).abs() < 1e-10, "{lambda}");
        }
        assert!(nf.trusted_below > 700.0);
    }

    #[test]
    fn fibered_transverse_scaling() {
        let one = build_fibered_model(32, 8, |_, _| 1.0, |_, _| 1.0).unwrap();
        let four = build_fibered_model(32, 8, |_, _| 1.0, |_, _| 4.0).unwrap();
        let a = leafwise_distribution_fibered(&one, LeafQuadrature::AllRows, 500.0).unwrap();
        let b = leafwise_distribution_fibered(&four, LeafQuadrature::Rows(4), 500.0).unwrap();
        for lambda in [0.0, 50.0, 200.0] {
            assert!((b.evaluate(lambda) - 2.0 * a.evaluate(lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn fibered_leaves_are_harmonic_on_constants() {
        let model = build_fibered_model(
            48,
            12,
            |x, y| 1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
            |_, _| 1.0,
        )
        .unwrap();
        for j in 0..model.ny {
            let s = leaf_spectrum(&model.a[j * 48..(j + 1) * 48]).unwrap();
            assert_eq!(s[0], 0.0);
            assert!(s[1] > 1.0);
        }
        let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 100.0).unwrap();
        assert_eq!(nf.bottom(), Some(0.0));
        assert!((nf.evaluate(0.0) - 1.0).abs() < 1e-12);
        assert!(matches!(
            leafwise_distribution_fibered(&model, LeafQuadrature::Rows(5), 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-14);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
        assert_eq!(unit_ball_volume(0), 1.0);
    }
}
