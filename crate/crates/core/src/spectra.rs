//! Spectra of `L_h` below a bound and the scalar quantities built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::counting::{CountingFunction, TestFunction, ATOM_MERGE_TOL};
use crate::eigen::{smallest_eigenpairs, EigenOptions, SymmetricOperator};
use crate::error::{Error, Result};
use crate::lattice::enumerate_ellipsoid;
use crate::models::{Bigrade, FlatLinearFoliation};
use crate::operators::{check_scale, DiscreteOperatorPair, ModeSymbol};

/// Default cap on lattice search nodes.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 100_000_000;

/// Relative size of the neglected tail in heat and trace sums.
pub const TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub value: f64,
    pub multiplicity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Completeness {
    /// Every eigenvalue `≤ lambda_max` is present with its multiplicity.
    Exact,
    /// Iterative solve: `converged` pairs, nothing proves none were skipped.
    Heuristic { converged: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    pub h: f64,
    pub grade: Bigrade,
    /// Ascending, distinct up to [`ATOM_MERGE_TOL`].
    pub eigenvalues: Vec<Eigenvalue>,
    pub lambda_max: f64,
    pub completeness: Completeness,
}

impl SpectrumSample {
    pub fn total_multiplicity(&self) -> u64 {
        self.eigenvalues.iter().map(|e| e.multiplicity).sum()
    }
}

/// Sort and merge values closer than [`ATOM_MERGE_TOL`], each carrying
/// `weight` copies.
fn merge_values(mut values: Vec<f64>, weight: u64) -> Vec<Eigenvalue> {
    values.sort_by(f64::total_cmp);
    let mut out: Vec<Eigenvalue> = Vec::new();
    let mut anchor = f64::NEG_INFINITY;
    for v in values {
        match out.last_mut() {
            Some(last) if v - anchor <= ATOM_MERGE_TOL => last.multiplicity += weight,
            _ => {
                anchor = v;
                out.push(Eigenvalue {
                    value: v,
                    multiplicity: weight,
                });
            }
        }
    }
    out
}

fn mode_gram(model: &FlatLinearFoliation, h: f64) -> DMatrix<f64> {
    let u = &model.tangent_frame;
    let w = &model.transverse_frame;
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    (u.transpose() * u + w.transpose() * w * (h * h)) * four_pi2
}

/// Visit every lattice vector `k` with `λ(k) ≤ lambda_max`, passing the
/// exact mode eigenvalue.
fn for_each_mode<F: FnMut(f64)>(
    model: &FlatLinearFoliation,
    grade: Bigrade,
    h: f64,
    lambda_max: f64,
    budget: u64,
    mut visit: F,
) -> Result<()> {
    check_scale(h)?;
    if lambda_max.is_nan() || lambda_max < 0.0 {
        return Err(Error::invalid(format!(
            "lambda_max must be nonnegative, got {lambda_max}"
        )));
    }
    if !lambda_max.is_finite() {
        return Err(Error::invalid("lambda_max must be finite"));
    }
    let symbol = ModeSymbol::new(model, grade);
    let gram = mode_gram(model, h);
    enumerate_ellipsoid(&gram, lambda_max, budget, |k| {
        let lambda = symbol.mode_eigenvalue(k, h);
        if lambda <= lambda_max {
            visit(lambda);
        }
    })?;
    Ok(())
}

/// Every eigenvalue of `L_h` on the bigrade `grade` up to `lambda_max`,
/// with multiplicities. Complete by construction.
pub fn enumerate_modes(
    model: &FlatLinearFoliation,
    grade: Bigrade,
    h: f64,
    lambda_max: f64,
    budget: u64,
) -> Result<SpectrumSample> {
    let mut values = Vec::new();
    for_each_mode(model, grade, h, lambda_max, budget, |l| values.push(l))?;
    Ok(SpectrumSample {
        h,
        grade,
        eigenvalues: merge_values(values, grade.multiplicity()),
        lambda_max,
        completeness: Completeness::Exact,
    })
}

/// `N_h(λ)` on one bigrade without storing the modes.
pub fn count_modes(model: &FlatLinearFoliation, grade: Bigrade, h: f64, lambda: f64, budget: u64) -> Result<u64> {
    if lambda < 0.0 {
        return Ok(0);
    }
    let mut count = 0u64;
    for_each_mode(model, grade, h, lambda, budget, |_| count += 1)?;
    Ok(count * grade.multiplicity())
}

/// `A + h²B` as an operator for the eigensolver.
pub struct ScaledPair<'a> {
    pub pair: &'a DiscreteOperatorPair,
    pub h: f64,
}

impl SymmetricOperator for ScaledPair<'_> {
    fn dim(&self) -> usize {
        self.pair.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.pair.apply(self.h, x, y);
    }

    fn spectral_upper_bound(&self) -> f64 {
        self.pair.upper_bound(self.h)
    }
}

/// Lowest part of the fibered spectrum, with the eigenvectors kept for
/// branch matching.
#[derive(Debug, Clone)]
pub struct FiberedSpectrum {
    pub sample: SpectrumSample,
    /// Ascending, one entry per eigenpair.
    pub values: Vec<f64>,
    /// Unit eigenvectors (symmetrized variables) as columns.
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

/// The `count` smallest eigenpairs of `A + h²B`.
pub fn solve_fibered_spectrum(
    pair: &DiscreteOperatorPair,
    h: f64,
    count: usize,
    options: &EigenOptions,
) -> Result<FiberedSpectrum> {
    check_scale(h)?;
    if count == 0 || count > pair.dim() {
        return Err(Error::invalid(format!(
            "count must lie in 1..={}, got {count}",
            pair.dim()
        )));
    }
    let op = ScaledPair { pair, h };
    let null = pair.null_vector();
    let pairs = smallest_eigenpairs(&op, count, Some(&null), options)?;
    let lambda_max = pairs.values.last().copied().unwrap_or(0.0);
    let sample = SpectrumSample {
        h,
        grade: Bigrade::functions(1, 1),
        eigenvalues: merge_values(pairs.values.clone(), 1),
        lambda_max,
        completeness: Completeness::Heuristic { converged: count },
    };
    Ok(FiberedSpectrum {
        sample,
        values: pairs.values,
        vectors: pairs.vectors,
        residuals: pairs.residuals,
    })
}

/// `N_h` as a counting function with the sample's eigenvalues as atoms.
pub fn counting_function(sample: &SpectrumSample) -> CountingFunction {
    CountingFunction::from_atoms(
        sample.eigenvalues.iter().map(|e| (e.value, e.multiplicity as f64)),
        sample.lambda_max,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub value: f64,
    /// Set when the spectrum beyond `lambda_max` may contribute more than
    /// [`TAIL_TOLERANCE`] relative.
    pub tail_warning: bool,
}

/// `Σ mᵢ e^{−tλᵢ}`.
pub fn heat_trace(sample: &SpectrumSample, t: f64) -> Result<TraceEstimate> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("t must be positive, got {t}")));
    }
    let value: f64 = sample
        .eigenvalues
        .iter()
        .map(|e| e.multiplicity as f64 * (-t * e.value).exp())
        .sum();
    Ok(TraceEstimate {
        value,
        tail_warning: (-t * sample.lambda_max).exp() > TAIL_TOLERANCE * value,
    })
}

/// `Σ mᵢ f(λᵢ)`.
pub fn trace_of_function(sample: &SpectrumSample, f: &TestFunction) -> Result<TraceEstimate> {
    let tail_warning = match f {
        TestFunction::Gaussian { t } => {
            if !(*t > 0.0) {
                return Err(Error::UnsupportedTail {
                    lambda_max: sample.lambda_max,
                });
            }
            false
        }
        _ => {
            let end = f.support_end().unwrap_or(f64::INFINITY);
            if end > sample.lambda_max {
                return Err(Error::UnsupportedTail {
                    lambda_max: sample.lambda_max,
                });
            }
            false
        }
    };
    let value: f64 = sample
        .eigenvalues
        .iter()
        .map(|e| e.multiplicity as f64 * f.eval(e.value))
        .sum();
    let tail_warning = tail_warning || f.eval(sample.lambda_max).abs() > TAIL_TOLERANCE * value.abs();
    Ok(TraceEstimate { value, tail_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_fibered_model, build_flat_model};
    use crate::operators::assemble_fibered_operators;
    use std::f64::consts::PI;

    fn axis() -> FlatLinearFoliation {
        build_flat_model(2, &[vec![1.0, 0.0]]).unwrap()
    }

    fn small_sample() -> SpectrumSample {
        let m = axis();
        enumerate_modes(&m, m.functions(), 0.5, 11.0, DEFAULT_ENUMERATION_BUDGET).unwrap()
    }

    #[test]
    fn axis_enumeration_examples() {
        let m = axis();
        let s = enumerate_modes(&m, m.functions(), 1.0, 39.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(s.eigenvalues.len(), 1);
        assert_eq!(s.eigenvalues[0].value, 0.0);
        assert_eq!(
            count_modes(&m, m.functions(), 1.0, 39.0, DEFAULT_ENUMERATION_BUDGET).unwrap(),
            1
        );

        let s = small_sample();
        assert_eq!(s.eigenvalues.len(), 2);
        assert_eq!(s.eigenvalues[0].multiplicity, 1);
        assert_eq!(s.eigenvalues[1].multiplicity, 2);
        assert!((s.eigenvalues[1].value - PI * PI).abs() < 1e-12);
        assert_eq!(s.completeness, Completeness::Exact);
    }

    #[test]
    fn zero_bound_gives_zero_mode_only() {
        let m = axis();
        let g = m.bigrade(1, 0).unwrap();
        let s = enumerate_modes(&m, g, 0.3, 0.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(
            s.eigenvalues,
            vec![Eigenvalue {
                value: 0.0,
                multiplicity: 1
            }]
        );
        let g = Bigrade::new(1, 1, 2, 2).unwrap();
        let plane = build_flat_model(4, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let s = enumerate_modes(&plane, g, 0.3, 0.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(s.eigenvalues[0].multiplicity, 4);
        assert!(enumerate_modes(&m, m.functions(), 0.3, -1e-3, DEFAULT_ENUMERATION_BUDGET).is_err());
        assert!(enumerate_modes(&m, m.functions(), 0.0, 1.0, DEFAULT_ENUMERATION_BUDGET).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let m = axis();
        let err = enumerate_modes(&m, m.functions(), 0.01, 1e4, 1000).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { cap: 1000 }));
    }

    #[test]
    fn counting_examples() {
        let n = counting_function(&small_sample());
        assert_eq!(n.evaluate(5.0), 1.0);
        assert_eq!(n.evaluate(PI * PI), 3.0);
        assert_eq!(n.evaluate(-1.0), 0.0);
    }

    #[test]
    fn heat_examples() {
        let s = small_sample();
        let v = heat_trace(&s, 0.5).unwrap().value;
        assert!((v - (1.0 + 2.0 * (-0.5 * PI * PI).exp())).abs() < 1e-14);
        assert!((v - 1.0144).abs() < 1e-4);
        assert!((heat_trace(&s, 200.0).unwrap().value - 1.0).abs() < 1e-15);
        let zero_only = SpectrumSample {
            eigenvalues: vec![Eigenvalue {
                value: 0.0,
                multiplicity: 1,
            }],
            ..s.clone()
        };
        assert_eq!(heat_trace(&zero_only, 1.0).unwrap().value, 1.0);
        // e^{-0.5·11} is far above 1e-12 of the sum
        assert!(heat_trace(&s, 0.5).unwrap().tail_warning);
    }

    #[test]
    fn trace_examples() {
        let s = small_sample();
        let g = trace_of_function(&s, &TestFunction::Gaussian { t: 0.5 }).unwrap().value;
        assert_eq!(g, heat_trace(&s, 0.5).unwrap().value);
        let bump = trace_of_function(&s, &TestFunction::Bump { lo: 1.0, hi: 5.0 })
            .unwrap()
            .value;
        assert_eq!(bump, 0.0);
        let ind = TestFunction::SmoothedIndicator { edge: 5.0, ramp: 1e-6 };
        assert_eq!(trace_of_function(&s, &ind).unwrap().value, 1.0);
        let wide = TestFunction::Bump { lo: 1.0, hi: 50.0 };
        assert!(matches!(
            trace_of_function(&s, &wide),
            Err(Error::UnsupportedTail { .. })
        ));
    }

    #[test]
    fn enumeration_is_stable_under_larger_bound() {
        let m = build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).unwrap();
        let a = enumerate_modes(&m, m.functions(), 0.1, 60.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let b = enumerate_modes(&m, m.functions(), 0.1, 120.0, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let below: Vec<_> = b.eigenvalues.iter().filter(|e| e.value <= 60.0).copied().collect();
        assert_eq!(a.eigenvalues, below);
    }

    #[test]
    fn fibered_flat_examples() {
        let model = build_fibered_model(64, 64, |_, _| 1.0, |_, _| 1.0).unwrap();
        let pair = assemble_fibered_operators(&model).unwrap();
        let mu1 = (128.0 * (PI / 64.0).sin()).powi(2);
        let s = solve_fibered_spectrum(&pair, 1.0, 5, &EigenOptions::default()).unwrap();
        assert_eq!(s.values[0], 0.0);
        for v in &s.values[1..] {
            assert!((v - mu1).abs() < 1e-7 * mu1, "{v}");
        }
        assert!((mu1 - 39.44).abs() < 0.01);
        assert_eq!(s.sample.eigenvalues.len(), 2);
        assert_eq!(s.sample.eigenvalues[1].multiplicity, 4);
        assert!(matches!(
            s.sample.completeness,
            Completeness::Heuristic { converged: 5 }
        ));

        let s = solve_fibered_spectrum(&pair, 0.5, 3, &EigenOptions::default()).unwrap();
        assert!((s.values[1] - 0.25 * mu1).abs() < 1e-7 * mu1);
        assert!((s.values[2] - 0.25 * mu1).abs() < 1e-7 * mu1);

        let s = solve_fibered_spectrum(&pair, 0.7, 1, &EigenOptions::default()).unwrap();
        assert_eq!(s.values, vec![0.0]);
    }
}
