//! Monotone counting functions (Stieltjes measures on `[0, ∞)`) and the
//! scalar test functions integrated against them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::quad;

/// Atoms closer than this are merged into one jump.
pub const ATOM_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Absolutely continuous part of a counting function, supported on `τ ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContinuousPart {
    /// `N(τ) = coefficient · τ^exponent`.
    PowerLaw { coefficient: f64, exponent: f64 },
    /// Piecewise-linear density through `(tau[i], density[i])`, zero outside.
    Tabulated { tau: Vec<f64>, density: Vec<f64> },
}

impl ContinuousPart {
    fn cumulative(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        match self {
            ContinuousPart::PowerLaw { coefficient, exponent } => coefficient * lambda.powf(*exponent),
            ContinuousPart::Tabulated { tau, density } => {
                let mut total = 0.0;
                for i in 1..tau.len() {
                    let (t0, t1) = (tau[i - 1], tau[i]);
                    if lambda <= t0 {
                        break;
                    }
                    let hi = lambda.min(t1);
                    let d_hi = density[i - 1] + (density[i] - density[i - 1]) * (hi - t0) / (t1 - t0);
                    total += 0.5 * (density[i - 1] + d_hi) * (hi - t0);
                }
                total
            }
        }
    }

    pub fn density(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        match self {
            ContinuousPart::PowerLaw { coefficient, exponent } => coefficient * exponent * tau.powf(exponent - 1.0),
            ContinuousPart::Tabulated { tau: grid, density } => {
                let i = grid.partition_point(|&t| t <= tau);
                if i == 0 || i == grid.len() {
                    return 0.0;
                }
                let (t0, t1) = (grid[i - 1], grid[i]);
                density[i - 1] + (density[i] - density[i - 1]) * (tau - t0) / (t1 - t0)
            }
        }
    }

    fn support_start(&self) -> f64 {
        match self {
            ContinuousPart::PowerLaw { .. } => 0.0,
            ContinuousPart::Tabulated { tau, density } => tau
                .iter()
                .zip(density)
                .find(|(_, d)| **d > 0.0)
                .map(|(t, _)| t.max(0.0))
                .unwrap_or(f64::INFINITY),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            ContinuousPart::PowerLaw { .. } => Vec::new(),
            ContinuousPart::Tabulated { tau, .. } => tau.clone(),
        }
    }

    fn support_end(&self) -> f64 {
        match self {
            ContinuousPart::PowerLaw { .. } => f64::INFINITY,
            ContinuousPart::Tabulated { tau, .. } => tau.last().copied().unwrap_or(0.0),
        }
    }
}

/// `N(λ) = Σ_{τⱼ ≤ λ} wⱼ + ∫₀^λ dN_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingFunction {
    atoms: Vec<Atom>,
    continuous: Option<ContinuousPart>,
    /// Every jump at or below this bound is present.
    pub complete_below: f64,
}

impl CountingFunction {
    /// Sorts the atoms, merges those within [`ATOM_MERGE_TOL`] and drops
    /// non-positive weights.
    pub fn from_atoms<I>(atoms: I, complete_below: f64) -> Self
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw: Vec<(f64, f64)> = atoms.into_iter().filter(|&(_, w)| w > 0.0).collect();
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<Atom> = Vec::with_capacity(raw.len());
        let mut anchor = f64::NEG_INFINITY;
        for (location, weight) in raw {
            match merged.last_mut() {
                Some(last) if location - anchor <= ATOM_MERGE_TOL => last.weight += weight,
                _ => {
                    anchor = location;
                    merged.push(Atom { location, weight });
                }
            }
        }
        CountingFunction {
            atoms: merged,
            continuous: None,
            complete_below,
        }
    }

    pub fn continuous(part: ContinuousPart) -> Self {
        CountingFunction {
            atoms: Vec::new(),
            continuous: Some(part),
            complete_below: f64::INFINITY,
        }
    }

    pub fn with_continuous(mut self, part: ContinuousPart) -> Self {
        self.continuous = Some(part);
        self
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn continuous_part(&self) -> Option<&ContinuousPart> {
        self.continuous.as_ref()
    }

    /// Closed at atoms: an atom at exactly `λ` is counted.
    pub fn evaluate(&self, lambda: f64) -> f64 {
        let end = self.atoms.partition_point(|a| a.location <= lambda);
        let jumps: f64 = self.atoms[..end].iter().map(|a| a.weight).sum();
        jumps + self.continuous.as_ref().map_or(0.0, |c| c.cumulative(lambda))
    }

    /// Smallest point of the support.
    pub fn bottom(&self) -> Option<f64> {
        let atom = self.atoms.first().map(|a| a.location);
        let cont = self.continuous.as_ref().map(|c| c.support_start());
        match (atom, cont) {
            (Some(a), Some(c)) => Some(a.min(c)),
            (a, c) => a.or(c).filter(|v| v.is_finite()),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.weight *= factor;
        }
        out.continuous = out.continuous.map(|c| match c {
            ContinuousPart::PowerLaw { coefficient, exponent } => ContinuousPart::PowerLaw {
                coefficient: coefficient * factor,
                exponent,
            },
            ContinuousPart::Tabulated { tau, density } => ContinuousPart::Tabulated {
                tau,
                density: density.into_iter().map(|d| d * factor).collect(),
            },
        });
        out
    }

    /// `∫_{[0, upper]} g dN`, with the continuous part integrated adaptively
    /// (split at `breaks`) to absolute tolerance `tol`. `upper` may be
    /// infinite when `g` decays.
    pub fn stieltjes<G: Fn(f64) -> f64>(&self, g: &G, upper: f64, breaks: &[f64], tol: f64) -> f64 {
        let end = self.atoms.partition_point(|a| a.location <= upper);
        let jumps: f64 = self.atoms[..end].iter().map(|a| a.weight * g(a.location)).sum();
        let cont = match &self.continuous {
            None => 0.0,
            Some(part) => {
                let lo = part.support_start();
                let hi = upper.min(part.support_end());
                if hi <= lo {
                    0.0
                } else {
                    let mut all_breaks = breaks.to_vec();
                    all_breaks.extend(part.breakpoints());
                    match part {
                        ContinuousPart::PowerLaw { coefficient, exponent } => {
                            let weight = coefficient * exponent;
                            quad::integrate_power_weighted(
                                g,
                                exponent - 1.0,
                                0.0,
                                hi,
                                &all_breaks,
                                tol / weight.abs().max(1e-300),
                            ) * weight
                        }
                        ContinuousPart::Tabulated { .. } => {
                            let integrand = |tau: f64| g(tau) * part.density(tau);
                            quad::integrate_piecewise(&integrand, lo, hi, &all_breaks, tol)
                        }
                    }
                }
            }
        };
        jumps + cont
    }
}

/// Scalar functions `f` for trace functionals `tr f(L_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFunction {
    /// `e^{−tλ}`
    Gaussian { t: f64 },
    /// Raised-cosine bump supported on `[lo, hi]`.
    Bump { lo: f64, hi: f64 },
    /// `1` on `(−∞, edge]`, cosine ramp down to `0` on `[edge, edge + ramp]`.
    SmoothedIndicator { edge: f64, ramp: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Gaussian { t } => (-t * x).exp(),
            TestFunction::Bump { lo, hi } => {
                if x <= lo || x >= hi {
                    0.0
                } else {
                    0.5 * (1.0 - (2.0 * PI * (x - lo) / (hi - lo)).cos())
                }
            }
            TestFunction::SmoothedIndicator { edge, ramp } => {
                if x <= edge {
                    1.0
                } else if x >= edge + ramp {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * (x - edge) / ramp).cos())
                }
            }
        }
    }

    /// Right end of the support, `None` for functions that only decay.
    pub fn support_end(&self) -> Option<f64> {
        match *self {
            TestFunction::Gaussian { .. } => None,
            TestFunction::Bump { hi, .. } => Some(hi),
            TestFunction::SmoothedIndicator { edge, ramp } => Some(edge + ramp),
        }
    }

    /// Points where `f` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TestFunction::Gaussian { .. } => Vec::new(),
            TestFunction::Bump { lo, hi } => vec![lo, hi],
            TestFunction::SmoothedIndicator { edge, ramp } => vec![edge, edge + ramp],
        }
    }

    /// Smallest `λ` beyond which `|f| ≤ rel_tol · scale`.
    pub fn negligible_beyond(&self, rel_tol: f64, scale: f64) -> f64 {
        match *self {
            TestFunction::Gaussian { t } => (scale.max(1.0) / rel_tol).ln().max(0.0) / t,
            _ => self.support_end().unwrap_or(f64::INFINITY),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_at_atoms_and_zero_below() {
        let n = CountingFunction::from_atoms([(0.0, 1.0), (9.87, 2.0)], 20.0);
        assert_eq!(n.evaluate(5.0), 1.0);
        assert_eq!(n.evaluate(9.87), 3.0);
        assert_eq!(n.evaluate(-1.0), 0.0);
        assert_eq!(n.bottom(), Some(0.0));
    }

    #[test]
    fn nearby_atoms_merge() {
        let n = CountingFunction::from_atoms([(1.0, 1.0), (1.0 + 5e-10, 2.0), (2.0, 1.0), (3.0, 0.0)], 5.0);
        assert_eq!(n.atoms().len(), 2);
        assert_eq!(n.atoms()[0].weight, 3.0);
    }

    #[test]
    fn power_law_part() {
        let n = CountingFunction::continuous(ContinuousPart::PowerLaw {
            coefficient: 1.0 / PI,
            exponent: 0.5,
        });
        assert!((n.evaluate(4.0) - 2.0 / PI).abs() < 1e-15);
        assert_eq!(n.evaluate(-3.0), 0.0);
        // ∫ e^{-τ} d(√τ/π) = Γ(3/2)/π
        let v = n.stieltjes(&|x: f64| (-x).exp(), f64::INFINITY, &[], 1e-13);
        assert!((v - 0.5 * PI.sqrt() / PI).abs() < 1e-11);
    }

    #[test]
    fn tabulated_part() {
        let part = ContinuousPart::Tabulated {
            tau: vec![1.0, 2.0, 4.0],
            density: vec![1.0, 1.0, 0.0],
        };
        let n = CountingFunction::continuous(part);
        assert_eq!(n.evaluate(1.0), 0.0);
        assert!((n.evaluate(2.0) - 1.0).abs() < 1e-15);
        assert!((n.evaluate(10.0) - 2.0).abs() < 1e-15);
        let v = n.stieltjes(&|_| 1.0, 10.0, &[], 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
        assert_eq!(n.bottom(), Some(1.0));
    }

    #[test]
    fn test_function_shapes() {
        let ind = TestFunction::SmoothedIndicator { edge: 2.0, ramp: 0.5 };
        assert_eq!(ind.eval(2.0), 1.0);
        assert_eq!(ind.eval(2.5), 0.0);
        assert!((ind.eval(2.25) - 0.5).abs() < 1e-15);
        let bump = TestFunction::Bump { lo: 1.0, hi: 5.0 };
        assert_eq!(bump.eval(1.0), 0.0);
        assert!((bump.eval(3.0) - 1.0).abs() < 1e-15);
        assert_eq!(bump.support_end(), Some(5.0));
    }
}
