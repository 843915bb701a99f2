//! Adiabatic-limit predictions and the experiments that compare them with
//! computed spectra.
//!
//! As `h → 0` the leading terms are
//!
//! * `N_h(λ) ~ h^{−q} (4π)^{−q/2}/Γ(q/2+1) ∫ (λ−τ)^{q/2} dN_F(τ)`,
//! * `tr e^{−tL_h} ~ (4πt)^{−q/2} h^{−q} ∫ e^{−tτ} dN_F(τ)`,
//! * `tr f(L_h) ~ h^{−q} (4π)^{−q/2}/Γ(q/2) ∫∫ σ^{q/2−1} f(τ+σ) dσ dN_F(τ)`,
//!
//! with `N_F` the leafwise distribution function and `q` the codimension.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{ContinuousPart, TestFunction};
use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::lattice::enumerate_ellipsoid;
use crate::leafwise::LeafwiseDistribution;
use crate::models::{Bigrade, FlatLinearFoliation};
use crate::operators::{check_scale, DiscreteOperatorPair, ModeEnergies, ModeSymbol};
use crate::quad;
use crate::spectra::{
    count_modes, counting_function, enumerate_modes, solve_fibered_spectrum, DEFAULT_ENUMERATION_BUDGET,
};

/// Relative accuracy requested from the quadratures behind the predictions.
const RHS_TOLERANCE: f64 = 1e-12;

/// `Γ(n/2)` for `n ≥ 1`, by the recurrence from `Γ(1/2)` or `Γ(1)`.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n >= 1, "Γ(0) is undefined");
    let mut value = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut twice = 2 - n % 2;
    while twice < n {
        value *= twice as f64 / 2.0;
        twice += 2;
    }
    value
}

fn check_codim(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::invalid("codimension q must be at least 1"));
    }
    Ok(())
}

/// Coefficient of `h^{−q}` in the counting asymptotics at `λ`.
pub fn rhs_counting(nf: &LeafwiseDistribution, lambda: f64, q: usize) -> Result<f64> {
    check_codim(q)?;
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite, got {lambda}")));
    }
    if lambda < 0.0 {
        return Ok(0.0);
    }
    let half = q as f64 / 2.0;
    let prefactor = (4.0 * PI).powf(-half) / gamma_half(q + 2);
    let scale = nf.evaluate(lambda).max(1e-300) * lambda.powf(half).max(1.0);
    let g = |tau: f64| (lambda - tau).max(0.0).powf(half);
    let integral = nf.distribution.stieltjes(&g, lambda, &[], RHS_TOLERANCE * scale);
    Ok(prefactor * integral)
}

/// `∫ e^{−tτ} dN_F(τ)`; the second value flags atoms possibly missing
/// beyond the trusted range.
pub fn leafwise_heat_integral(nf: &LeafwiseDistribution, t: f64) -> Result<(f64, bool)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("t must be positive, got {t}")));
    }
    let dist = &nf.distribution;
    let atoms: f64 = dist.atoms().iter().map(|a| a.weight * (-t * a.location).exp()).sum();
    let continuous = match dist.continuous_part() {
        None => 0.0,
        Some(ContinuousPart::PowerLaw { coefficient, exponent }) => coefficient * laplace_power(*exponent, t),
        Some(part @ ContinuousPart::Tabulated { .. }) => {
            let g = |tau: f64| (-t * tau).exp() * part.density(tau);
            quad::integrate_piecewise(&g, 0.0, f64::INFINITY, &[], RHS_TOLERANCE)
        }
    };
    let total = atoms + continuous;
    let tail = !dist.atoms().is_empty() && (-t * dist.complete_below).exp() > 1e-12 * total;
    Ok((total, tail))
}

/// `∫₀^∞ e^{−tτ} d(τ^e) = Γ(e+1) t^{−e}`.
fn laplace_power(exponent: f64, t: f64) -> f64 {
    let twice = (2.0 * exponent).round();
    let gamma = if (twice - 2.0 * exponent).abs() < 1e-14 && twice >= 0.0 {
        gamma_half(twice as usize + 2)
    } else {
        statrs::function::gamma::gamma(exponent + 1.0)
    };
    gamma * t.powf(-exponent)
}

/// Leading heat-trace prediction `(4πt)^{−q/2} h^{−q} ∫ e^{−tτ} dN_F`.
pub fn rhs_heat(nf: &LeafwiseDistribution, t: f64, h: f64, q: usize) -> Result<f64> {
    check_codim(q)?;
    check_scale(h)?;
    let (laplace, _) = leafwise_heat_integral(nf, t)?;
    let half = q as f64 / 2.0;
    Ok((4.0 * PI * t).powf(-half) * h.powf(-(q as f64)) * laplace)
}

/// Coefficient of `h^{−q}` in `tr f(L_h)`.
pub fn rhs_trace_of_function(nf: &LeafwiseDistribution, f: &TestFunction, q: usize) -> Result<f64> {
    check_codim(q)?;
    let support_end = f.support_end();
    if let TestFunction::Gaussian { t } = f {
        if !(*t > 0.0) {
            return Err(Error::invalid(format!("Gaussian parameter must be positive, got {t}")));
        }
    }
    if let Some(end) = support_end {
        if !nf.distribution.atoms().is_empty() && end > nf.distribution.complete_below {
            return Err(Error::UnsupportedTail {
                lambda_max: nf.distribution.complete_below,
            });
        }
    }
    let half = q as f64 / 2.0;
    let alpha = half - 1.0;
    let breaks = f.breakpoints();
    let upper = support_end.unwrap_or(f64::INFINITY);
    let inner = |tau: f64| -> f64 {
        let end = upper - tau;
        if end <= 0.0 {
            return 0.0;
        }
        let shifted: Vec<f64> = breaks.iter().map(|b| b - tau).collect();
        let g = |sigma: f64| f.eval(tau + sigma);
        quad::integrate_power_weighted(&g, alpha, 0.0, end, &shifted, RHS_TOLERANCE)
    };
    let scale = nf.transverse_mass.max(nf.evaluate(1.0)).max(1.0);
    let outer = nf.distribution.stieltjes(&inner, upper, &breaks, RHS_TOLERANCE * scale);
    Ok((4.0 * PI).powf(-half) / gamma_half(q) * outer)
}

/// What a sweep counts eigenvalues of.
#[derive(Debug, Clone, Copy)]
pub enum SweepTarget<'a> {
    Flat {
        model: &'a FlatLinearFoliation,
        grade: Bigrade,
    },
    /// Counts are taken from the `count` lowest computed eigenvalues; cells
    /// above the last one are missing.
    Fibered {
        pair: &'a DiscreteOperatorPair,
        count: usize,
    },
}

impl SweepTarget<'_> {
    pub fn grade(&self) -> Bigrade {
        match self {
            SweepTarget::Flat { grade, .. } => *grade,
            SweepTarget::Fibered { .. } => Bigrade::functions(1, 1),
        }
    }

    pub fn codim(&self) -> usize {
        self.grade().codim
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub enumeration_budget: u64,
    pub eigen: EigenOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
            eigen: EigenOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub h_index: usize,
    pub lambda_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExponentEstimate {
    Finite { r: f64, residual: f64, points: usize },
    NegInfinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub model_id: String,
    pub grade: Bigrade,
    pub h_schedule: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// `lhs[i][j] = N_{h_i}(λ_j)`, `None` where the cell is missing.
    pub lhs: Vec<Vec<Option<u64>>>,
    /// Coefficient of `h^{−q}` at each `λ_j`.
    pub rhs: Vec<f64>,
    /// `h^q N_h(λ) / RHS(λ)` where both exist and `RHS > 0`.
    pub ratio: Vec<Vec<Option<f64>>>,
    /// Fitted `r(λ_j)`, or the reason no fit was possible.
    pub exponents: Vec<std::result::Result<ExponentEstimate, String>>,
    /// The theoretical bracket `[0, q]` for the exponents.
    pub exponent_bracket: (f64, f64),
    /// Cells with `RHS = 0` where `N_h(λ)` exceeds the kernel multiplicity.
    pub flagged: Vec<(usize, usize)>,
    pub missing: Vec<MissingCell>,
    /// Wall-clock time per scale; left out of serialized output.
    #[serde(skip)]
    pub runtimes: Vec<Duration>,
}

struct SweepRow {
    counts: Vec<Option<u64>>,
    kernel: u64,
    missing: Vec<(usize, String)>,
    elapsed: Duration,
}

fn sweep_row(target: &SweepTarget, h: f64, grid: &[f64], options: &SweepOptions) -> SweepRow {
    let start = Instant::now();
    let top = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let all_missing = |reason: String| SweepRow {
        counts: vec![None; grid.len()],
        kernel: 0,
        missing: (0..grid.len()).map(|j| (j, reason.clone())).collect(),
        elapsed: start.elapsed(),
    };
    let (counting, kernel, trusted) = match target {
        SweepTarget::Flat { model, grade } => {
            match enumerate_modes(model, *grade, h, top.max(0.0), options.enumeration_budget) {
                Ok(sample) => (counting_function(&sample), grade.multiplicity(), f64::INFINITY),
                Err(e) => return all_missing(e.to_string()),
            }
        }
        SweepTarget::Fibered { pair, count } => match solve_fibered_spectrum(pair, h, *count, &options.eigen) {
            Ok(spec) => {
                let trusted = spec.sample.lambda_max;
                (counting_function(&spec.sample), 1, trusted)
            }
            Err(e) => return all_missing(e.to_string()),
        },
    };
    let mut counts = Vec::with_capacity(grid.len());
    let mut missing = Vec::new();
    for (j, &lambda) in grid.iter().enumerate() {
        // the last computed eigenvalue may sit inside an unresolved cluster
        if lambda >= trusted {
            counts.push(None);
            missing.push((j, format!("λ = {lambda} is beyond the computed spectrum ({trusted})")));
        } else {
            counts.push(Some(counting.evaluate(lambda).round() as u64));
        }
    }
    SweepRow {
        counts,
        kernel,
        missing,
        elapsed: start.elapsed(),
    }
}

/// Compare `h^q N_h(λ)` with the leading-term prediction over a schedule of
/// scales and a grid of spectral levels. Scales are processed in parallel;
/// the report does not depend on the number of workers.
pub fn run_sweep(
    model_id: &str,
    target: &SweepTarget,
    nf: &LeafwiseDistribution,
    h_schedule: &[f64],
    lambda_grid: &[f64],
    options: &SweepOptions,
) -> Result<SweepReport> {
    check_schedule(h_schedule)?;
    if lambda_grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("lambda grid must be finite"));
    }
    let q = target.codim();
    let rhs = lambda_grid
        .iter()
        .map(|&l| rhs_counting(nf, l, q))
        .collect::<Result<Vec<f64>>>()?;
    let rows: Vec<SweepRow> = h_schedule
        .par_iter()
        .map(|&h| sweep_row(target, h, lambda_grid, options))
        .collect();

    let mut lhs = Vec::with_capacity(rows.len());
    let mut ratio = Vec::with_capacity(rows.len());
    let mut flagged = Vec::new();
    let mut missing = Vec::new();
    let mut runtimes = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let h = h_schedule[i];
        let hq = h.powi(q as i32);
        let mut ratio_row = Vec::with_capacity(lambda_grid.len());
        for (j, count) in row.counts.iter().enumerate() {
            ratio_row.push(match count {
                Some(n) if rhs[j] > 0.0 => Some(hq * *n as f64 / rhs[j]),
                _ => None,
            });
            if let Some(n) = count {
                if rhs[j] == 0.0 && *n > row.kernel {
                    flagged.push((i, j));
                }
            }
        }
        missing.extend(row.missing.into_iter().map(|(j, reason)| MissingCell {
            h_index: i,
            lambda_index: j,
            reason,
        }));
        lhs.push(row.counts);
        ratio.push(ratio_row);
        runtimes.push(row.elapsed);
    }
    let exponents = (0..lambda_grid.len())
        .map(|j| {
            let (hs, ns): (Vec<f64>, Vec<f64>) = lhs
                .iter()
                .zip(h_schedule)
                .filter_map(|(row, &h)| row[j].map(|n| (h, n as f64)))
                .unzip();
            estimate_r_exponent(&ns, &hs).map_err(|e| e.to_string())
        })
        .collect();
    Ok(SweepReport {
        model_id: model_id.to_string(),
        grade: target.grade(),
        h_schedule: h_schedule.to_vec(),
        lambda_grid: lambda_grid.to_vec(),
        lhs,
        rhs,
        ratio,
        exponents,
        exponent_bracket: (0.0, q as f64),
        flagged,
        missing,
        runtimes,
    })
}

fn check_schedule(h_schedule: &[f64]) -> Result<()> {
    if h_schedule.is_empty() {
        return Err(Error::invalid("h schedule is empty"));
    }
    for &h in h_schedule {
        check_scale(h)?;
    }
    if h_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("h schedule must be strictly decreasing"));
    }
    Ok(())
}

/// Least-squares slope of `ln N_h` against `−ln h` over the points with
/// positive counts.
pub fn estimate_r_exponent(counts: &[f64], h_schedule: &[f64]) -> Result<ExponentEstimate> {
    if counts.len() != h_schedule.len() {
        return Err(Error::invalid(format!(
            "{} counts for {} scales",
            counts.len(),
            h_schedule.len()
        )));
    }
    if !counts.is_empty() && counts.iter().all(|&n| n == 0.0) {
        return Ok(ExponentEstimate::NegInfinity);
    }
    let points: Vec<(f64, f64)> = counts
        .iter()
        .zip(h_schedule)
        .filter(|(n, h)| **n > 0.0 && **h > 0.0)
        .map(|(n, h)| (-h.ln(), n.ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientData {
            usable: points.len(),
            needed: 3,
        });
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("all scales coincide"));
    }
    let r = sxy / sxx;
    let residual = (points.iter().map(|p| (p.1 - my - r * (p.0 - mx)).powi(2)).sum::<f64>() / m).sqrt();
    Ok(ExponentEstimate::Finite {
        r,
        residual,
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSample {
    pub h: f64,
    pub lambda: f64,
    /// Central difference in `h`, when computed.
    pub derivative_fd: Option<f64>,
    /// `2h (Bv, v)`.
    pub derivative_hf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    /// Flat model: a fixed class of lattice modes, evaluated exactly.
    ModeClass,
    /// Fibered model: maximal eigenvector overlap between consecutive scales.
    EigenvectorOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub h: f64,
    pub best_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBranch {
    pub id: usize,
    pub method: MatchMethod,
    /// Tangential and transverse energies of the mode class (flat models).
    pub mode_class: Option<ModeEnergies>,
    /// Number of lattice modes in the class (flat models).
    pub class_size: u64,
    pub samples: Vec<BranchSample>,
    /// `λ` at the smallest tracked `h`, or its extrapolation to `h = 0`.
    pub limit_estimate: f64,
    /// Set when `limit_estimate` is Richardson-extrapolated in `h²`.
    pub richardson: bool,
    /// Tangential energy `(Av, v)` at the smallest tracked `h`.
    pub leaf_energy: f64,
    /// Set when matching failed and the branch stops early.
    pub truncated: Option<Truncation>,
}

/// Branches of a flat model: the `count` lowest mode classes at the largest
/// scale, each `λ(h) = e_F + h² e_H` exactly.
pub fn track_branches_flat(
    model: &FlatLinearFoliation,
    grade: Bigrade,
    h_schedule: &[f64],
    count: usize,
) -> Result<Vec<EigenBranch>> {
    check_schedule(h_schedule)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let h0 = h_schedule[0];
    let symbol = ModeSymbol::new(model, grade);
    // grow the bound until `count` distinct classes are present, then take
    // one more class's worth so ties at the cut are kept whole
    let mut bound = 4.0 * PI * PI;
    let classes = loop {
        let classes = mode_classes(model, &symbol, h0, bound)?;
        if classes.len() > count || bound > 1e12 {
            break classes;
        }
        bound *= 2.0;
    };
    let mut chosen: Vec<(ModeEnergies, u64)> = classes.into_iter().take(count).collect();
    chosen.sort_by(|a, b| {
        let la = a.0.tangential + h0 * h0 * a.0.transverse;
        let lb = b.0.tangential + h0 * h0 * b.0.transverse;
        la.total_cmp(&lb).then(a.0.tangential.total_cmp(&b.0.tangential))
    });
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(id, (e, size))| {
            let samples: Vec<BranchSample> = h_schedule
                .iter()
                .map(|&h| {
                    let d = 2.0 * h * e.transverse;
                    BranchSample {
                        h,
                        lambda: e.tangential + h * h * e.transverse,
                        derivative_fd: Some(d),
                        derivative_hf: d,
                    }
                })
                .collect();
            let (limit_estimate, richardson) = match samples.len() {
                0 | 1 => (samples.last().map_or(e.tangential, |s| s.lambda), false),
                n => (richardson_h2(&samples[n - 2], &samples[n - 1]), true),
            };
            EigenBranch {
                id,
                method: MatchMethod::ModeClass,
                mode_class: Some(e),
                class_size: size * grade.multiplicity(),
                samples,
                limit_estimate,
                richardson,
                leaf_energy: e.tangential,
                truncated: None,
            }
        })
        .collect())
}

/// Extrapolate `λ(h) = c₀ + c₂h²` to `h = 0` from two samples.
fn richardson_h2(a: &BranchSample, b: &BranchSample) -> f64 {
    let (ha, hb) = (a.h * a.h, b.h * b.h);
    (ha * b.lambda - hb * a.lambda) / (ha - hb)
}

/// Distinct `(e_F, e_H)` classes with `λ ≤ bound` at scale `h`, ascending in
/// `λ`, each with the number of lattice vectors it contains.
fn mode_classes(
    model: &FlatLinearFoliation,
    symbol: &ModeSymbol,
    h: f64,
    bound: f64,
) -> Result<Vec<(ModeEnergies, u64)>> {
    let u = &model.tangent_frame;
    let w = &model.transverse_frame;
    let gram = (u.transpose() * u + w.transpose() * w * (h * h)) * (4.0 * PI * PI);
    let mut found: Vec<ModeEnergies> = Vec::new();
    enumerate_ellipsoid(&gram, bound, DEFAULT_ENUMERATION_BUDGET, |k| {
        let e = symbol.energies(k);
        if e.tangential + h * h * e.transverse <= bound {
            found.push(e);
        }
    })?;
    found.sort_by(|a, b| {
        (a.tangential + h * h * a.transverse)
            .total_cmp(&(b.tangential + h * h * b.transverse))
            .then(a.tangential.total_cmp(&b.tangential))
    });
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    let mut classes: Vec<(ModeEnergies, u64)> = Vec::new();
    for e in found {
        match classes
            .iter_mut()
            .find(|(c, _)| close(c.tangential, e.tangential) && close(c.transverse, e.transverse))
        {
            Some(entry) => entry.1 += 1,
            None => classes.push((e, 1)),
        }
    }
    Ok(classes)
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOptions {
    pub eigen: EigenOptions,
    /// Extra eigenpairs solved beyond the requested branches.
    pub guard: usize,
    /// Step of the central difference in `h`; `None` skips it.
    pub fd_step: Option<f64>,
    /// Smallest accepted eigenvector overlap between consecutive scales.
    pub min_overlap: f64,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            eigen: EigenOptions::default(),
            guard: 4,
            fd_step: Some(1e-4),
            min_overlap: 0.5,
        }
    }
}

/// Eigenpairs at one scale with every near-degenerate cluster rotated to
/// diagonalize `B`, so that each column follows an analytic branch.
struct ResolvedPairs {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn resolved_pairs(pair: &DiscreteOperatorPair, h: f64, count: usize, eigen: &EigenOptions) -> Result<ResolvedPairs> {
    let spec = solve_fibered_spectrum(pair, h, count, eigen)?;
    let mut values = spec.values;
    let mut vectors = spec.vectors;
    let n = vectors.nrows();
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && values[end] - values[start] <= 1e-7 * values[start].abs().max(1.0) {
            end += 1;
        }
        if end - start > 1 {
            let block = vectors.columns(start, end - start).into_owned();
            let bv = DMatrix::from_fn(n, end - start, |_, _| 0.0);
            let mut bv = bv;
            for c in 0..end - start {
                let mut out = vec![0.0; n];
                pair.transverse.mul_add(1.0, block.column(c).as_slice(), &mut out);
                bv.set_column(c, &DVector::from_vec(out));
            }
            let projected = block.transpose() * &bv;
            let sym = (&projected + projected.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let mut order: Vec<usize> = (0..end - start).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let rotated = &block * &eig.eigenvectors;
            // rayleigh quotients of L_h on the rotated vectors keep the values consistent
            for (slot, &o) in order.iter().enumerate() {
                let v = rotated.column(o).into_owned();
                let mut lv = vec![0.0; n];
                pair.apply(h, v.as_slice(), &mut lv);
                let rq = v.dot(&DVector::from_vec(lv));
                vectors.set_column(start + slot, &v);
                if values[start + slot] != 0.0 {
                    values[start + slot] = rq;
                }
            }
        }
        start = end;
    }
    Ok(ResolvedPairs { values, vectors })
}

fn form(m: &crate::operators::SparseSymmetric, v: &[f64]) -> f64 {
    m.quadratic_form(v)
}

/// Index of the column of `candidates` with the largest `|⟨v, ·⟩|` among
/// those not yet claimed, and that overlap.
fn best_match(v: &[f64], candidates: &DMatrix<f64>, claimed: &[bool]) -> Option<(usize, f64)> {
    (0..candidates.ncols())
        .filter(|&c| !claimed[c])
        .map(|c| {
            let o: f64 = candidates.column(c).iter().zip(v).map(|(a, b)| a * b).sum();
            (c, o.abs())
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Branches of the fibered model, matched across scales by eigenvector
/// overlap, each sample carrying the Hellmann–Feynman derivative `2h(Bv,v)`
/// and optionally a central difference.
pub fn track_branches_fibered(
    pair: &DiscreteOperatorPair,
    h_schedule: &[f64],
    count: usize,
    options: &BranchOptions,
) -> Result<Vec<EigenBranch>> {
    check_schedule(h_schedule)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let solve_count = (count + options.guard).min(pair.dim());
    let mut branches: Vec<EigenBranch> = (0..count)
        .map(|id| EigenBranch {
            id,
            method: MatchMethod::EigenvectorOverlap,
            mode_class: None,
            class_size: 1,
            samples: Vec::new(),
            limit_estimate: f64::NAN,
            richardson: false,
            leaf_energy: f64::NAN,
            truncated: None,
        })
        .collect();
    let mut current: Vec<Option<Vec<f64>>> = vec![None; count];
    for (step, &h) in h_schedule.iter().enumerate() {
        let here = resolved_pairs(pair, h, solve_count, &options.eigen)?;
        let shifted = match options.fd_step {
            Some(d) if h + d <= 1.0 && h - d > 0.0 => Some((
                d,
                resolved_pairs(pair, h + d, solve_count, &options.eigen)?,
                resolved_pairs(pair, h - d, solve_count, &options.eigen)?,
            )),
            _ => None,
        };
        let mut claimed = vec![false; here.values.len()];
        for (b, branch) in branches.iter_mut().enumerate() {
            if branch.truncated.is_some() {
                continue;
            }
            let column = if step == 0 {
                b
            } else {
                let prev = current[b].as_ref().expect("live branch has a vector");
                match best_match(prev, &here.vectors, &claimed) {
                    Some((c, overlap)) if overlap >= options.min_overlap => c,
                    found => {
                        branch.truncated = Some(Truncation {
                            h,
                            best_overlap: found.map_or(0.0, |f| f.1),
                        });
                        continue;
                    }
                }
            };
            claimed[column] = true;
            let v: Vec<f64> = here.vectors.column(column).iter().copied().collect();
            // the locked constant mode is an exact kernel vector of B
            let derivative_hf = if here.values[column] == 0.0 {
                0.0
            } else {
                2.0 * h * form(&pair.transverse, &v)
            };
            let derivative_fd = shifted.as_ref().and_then(|(d, plus, minus)| {
                let none = vec![false; plus.values.len()];
                let (ip, op) = best_match(&v, &plus.vectors, &none)?;
                let (im, om) = best_match(&v, &minus.vectors, &none)?;
                (op >= options.min_overlap && om >= options.min_overlap)
                    .then(|| (plus.values[ip] - minus.values[im]) / (2.0 * d))
            });
            branch.samples.push(BranchSample {
                h,
                lambda: here.values[column],
                derivative_fd,
                derivative_hf,
            });
            branch.leaf_energy = form(&pair.tangential, &v);
            current[b] = Some(v);
        }
    }
    for branch in &mut branches {
        branch.limit_estimate = branch.samples.last().map_or(f64::NAN, |s| s.lambda);
    }
    Ok(branches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    /// Smallest branch limit.
    pub lambda_lim_0: f64,
    /// Bottom of the leafwise spectrum.
    pub lambda_leaf_bottom: f64,
    /// Bottom of `Δ_F` on `M`; only known for functions.
    pub lambda_f_0: Option<f64>,
    /// `λ_{F,0} ≤ λ_{lim,0} ≤ λ_{ℱ,0}` up to `tolerance`.
    pub ordering_ok: bool,
    /// Smallest limit over branches with nonzero tangential energy.
    pub smallest_leaf_excited_limit: Option<f64>,
    pub tolerance: f64,
}

/// Compare branch limits with the bottom of the leafwise spectrum.
pub fn limit_summary(branches: &[EigenBranch], nf: &LeafwiseDistribution, grade: Bigrade) -> Result<LimitSummary> {
    let limits: Vec<&EigenBranch> = branches.iter().filter(|b| b.limit_estimate.is_finite()).collect();
    if limits.is_empty() {
        return Err(Error::InsufficientData { usable: 0, needed: 1 });
    }
    let lambda_lim_0 = limits.iter().map(|b| b.limit_estimate).fold(f64::INFINITY, f64::min);
    let lambda_leaf_bottom = nf
        .bottom()
        .ok_or_else(|| Error::invalid("leafwise distribution is empty"))?;
    let lambda_f_0 = (grade.degree() == 0).then_some(0.0);
    let tolerance = 1e-9 * lambda_leaf_bottom.abs().max(1.0);
    let mut ordering_ok = lambda_lim_0 <= lambda_leaf_bottom + tolerance;
    if let Some(f0) = lambda_f_0 {
        ordering_ok &= f0 <= lambda_lim_0 + tolerance;
    }
    // With a leafwise spectral gap, a branch is leaf-excited when its leaf
    // energy sits above half the gap; harmonic branches tend to zero.
    let gap = nf
        .distribution
        .atoms()
        .iter()
        .map(|a| a.location)
        .find(|&t| t > 1e-9 * lambda_leaf_bottom.abs().max(1.0));
    let excited = |b: &EigenBranch| match gap {
        Some(g) => b.leaf_energy > 0.5 * g,
        None => b.leaf_energy > 1e-6 * b.limit_estimate.abs().max(1.0),
    };
    let smallest_leaf_excited_limit = limits
        .iter()
        .filter(|b| excited(b))
        .map(|b| b.limit_estimate)
        .reduce(f64::min);
    Ok(LimitSummary {
        lambda_lim_0,
        lambda_leaf_bottom,
        lambda_f_0,
        ordering_ok,
        smallest_leaf_excited_limit,
        tolerance,
    })
}

/// `N_h(λ)` summed over all bigrades of total degree `degree`.
pub fn count_degree(model: &FlatLinearFoliation, degree: usize, h: f64, lambda: f64, budget: u64) -> Result<u64> {
    let mut total = 0;
    for grade in Bigrade::of_degree(degree, model.leaf_dim(), model.codim()) {
        total += count_modes(model, grade, h, lambda, budget)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leafwise::{leafwise_distribution_fibered, leafwise_distribution_flat, LeafQuadrature};
    use crate::models::{build_fibered_model, build_flat_model};
    use crate::operators::assemble_fibered_operators;

    fn kronecker() -> FlatLinearFoliation {
        build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).unwrap()
    }

    fn axis() -> FlatLinearFoliation {
        build_flat_model(2, &[vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn half_integer_gamma() {
        assert_eq!(gamma_half(2), 1.0);
        assert_eq!(gamma_half(4), 1.0);
        assert_eq!(gamma_half(6), 2.0);
        assert!((gamma_half(1) - PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(3) - PI.sqrt() / 2.0).abs() < 1e-15);
        assert!((gamma_half(5) - 0.75 * PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kronecker_counting_rhs_is_weyl() {
        let m = kronecker();
        let nf = leafwise_distribution_flat(&m, m.functions(), 0.0).unwrap();
        for lambda in [0.5, 10.0, 100.0, 1234.5] {
            let v = rhs_counting(&nf, lambda, 1).unwrap();
            let weyl = lambda / (4.0 * PI);
            assert!((v - weyl).abs() <= 1e-10 * weyl, "{lambda}: {v} vs {weyl}");
        }
        assert_eq!(rhs_counting(&nf, -1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn fibration_counting_rhs_is_atomic_sum() {
        let m = axis();
        let nf = leafwise_distribution_flat(&m, m.functions(), 1e3).unwrap();
        for lambda in [3.0, 39.0, 100.0, 500.0] {
            let mut expected = 0.0;
            for k in -10i32..=10 {
                let tau = (2.0 * PI * k as f64).powi(2);
                if tau <= lambda {
                    expected += (lambda - tau).sqrt();
                }
            }
            expected /= PI;
            assert!((rhs_counting(&nf, lambda, 1).unwrap() - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn heat_rhs_examples() {
        let m = kronecker();
        let nf = leafwise_distribution_flat(&m, m.functions(), 0.0).unwrap();
        for (t, h) in [(0.5, 0.1), (1.0, 0.05)] {
            let v = rhs_heat(&nf, t, h, 1).unwrap();
            let exact = 1.0 / (4.0 * PI * t * h);
            assert!((v - exact).abs() < 1e-13 * exact);
            let doubled = rhs_heat(&nf, 2.0 * t, h, 1).unwrap();
            assert!((doubled - 0.5 * v).abs() < 1e-13 * v);
        }
        let a = axis();
        let nf = leafwise_distribution_flat(&a, a.functions(), 1e3).unwrap();
        let t = 5.0;
        let v = rhs_heat(&nf, t, 0.5, 1).unwrap();
        let harmonic = (4.0 * PI * t).powf(-0.5) / 0.5;
        assert!((v - harmonic).abs() < 1e-30_f64.max(1e-12 * harmonic));
    }

    #[test]
    fn trace_rhs_matches_heat_rhs() {
        let k = kronecker();
        let dense = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
        let a = axis();
        let atomic = leafwise_distribution_flat(&a, a.functions(), 4000.0).unwrap();
        for nf in [&dense, &atomic] {
            for t in [0.1, 0.5, 1.0] {
                let lhs = rhs_trace_of_function(nf, &TestFunction::Gaussian { t }, 1).unwrap();
                let rhs = rhs_heat(nf, t, 1.0, 1).unwrap();
                assert!((lhs - rhs).abs() <= 1e-8 * rhs, "t={t}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn trace_rhs_edge_cases() {
        let k = kronecker();
        let nf = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
        let neg = TestFunction::Bump { lo: -2.0, hi: -1.0 };
        assert_eq!(rhs_trace_of_function(&nf, &neg, 1).unwrap(), 0.0);
        let lambda = 30.0;
        let sharp = TestFunction::SmoothedIndicator {
            edge: lambda,
            ramp: 1e-6,
        };
        let v = rhs_trace_of_function(&nf, &sharp, 1).unwrap();
        let c = rhs_counting(&nf, lambda, 1).unwrap();
        assert!((v - c).abs() < 1e-5 * c, "{v} vs {c}");
        let a = axis();
        let short = leafwise_distribution_flat(&a, a.functions(), 50.0).unwrap();
        let wide = TestFunction::Bump { lo: 1.0, hi: 80.0 };
        assert!(matches!(
            rhs_trace_of_function(&short, &wide, 1),
            Err(Error::UnsupportedTail { .. })
        ));
    }

    #[test]
    fn exponent_examples() {
        let hs = [0.2, 0.1, 0.05, 0.025];
        match estimate_r_exponent(&[1.0; 4], &hs).unwrap() {
            ExponentEstimate::Finite { r, residual, .. } => {
                assert_eq!(r, 0.0);
                assert_eq!(residual, 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            estimate_r_exponent(&[0.0; 4], &hs).unwrap(),
            ExponentEstimate::NegInfinity
        );
        assert!(matches!(
            estimate_r_exponent(&[3.0, 5.0], &hs[..2]),
            Err(Error::InsufficientData { usable: 2, needed: 3 })
        ));
        let power: Vec<f64> = hs.iter().map(|h| 7.0 * h.powf(-1.5)).collect();
        match estimate_r_exponent(&power, &hs).unwrap() {
            ExponentEstimate::Finite { r, .. } => assert!((r - 1.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kronecker_exponent_from_counts() {
        let m = kronecker();
        let hs = [0.2, 0.1, 0.05, 0.025, 0.0125];
        let counts: Vec<f64> = hs
            .iter()
            .map(|&h| count_modes(&m, m.functions(), h, 10.0, DEFAULT_ENUMERATION_BUDGET).unwrap() as f64)
            .collect();
        assert_eq!(counts, vec![3.0, 7.0, 17.0, 31.0, 65.0]);
        match estimate_r_exponent(&counts, &hs).unwrap() {
            ExponentEstimate::Finite { r, .. } => assert!((r - 1.102).abs() < 1e-3, "{r}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_on_kronecker_and_axis() {
        let k = kronecker();
        let nf = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
        let target = SweepTarget::Flat {
            model: &k,
            grade: k.functions(),
        };
        let report = run_sweep(
            "kronecker",
            &target,
            &nf,
            &[0.05, 0.025],
            &[-1.0, 0.0, 100.0],
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(report.lhs[0][0], Some(0));
        assert_eq!(report.rhs[0], 0.0);
        assert_eq!(report.ratio[0][0], None);
        assert_eq!(report.lhs[1][1], Some(1));
        let r = report.ratio[1][2].unwrap();
        assert!((0.97..=1.03).contains(&r), "{r}");
        assert!(report.flagged.is_empty());
        assert!(report.missing.is_empty());

        let a = axis();
        let nf = leafwise_distribution_flat(&a, a.functions(), 200.0).unwrap();
        let target = SweepTarget::Flat {
            model: &a,
            grade: a.functions(),
        };
        let grid = [5.0, 20.0, 35.0];
        let report = run_sweep("axis", &target, &nf, &[0.01, 0.005], &grid, &SweepOptions::default()).unwrap();
        for (j, lambda) in grid.iter().enumerate() {
            assert!((report.rhs[j] - lambda.sqrt() / PI).abs() < 1e-12);
            let r = report.ratio[1][j].unwrap();
            assert!((r - 1.0).abs() < 0.05, "{lambda}: {r}");
        }
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn sweep_marks_failed_cells_missing() {
        let k = kronecker();
        let nf = leafwise_distribution_flat(&k, k.functions(), 0.0).unwrap();
        let target = SweepTarget::Flat {
            model: &k,
            grade: k.functions(),
        };
        let options = SweepOptions {
            enumeration_budget: 50,
            ..SweepOptions::default()
        };
        let report = run_sweep("k", &target, &nf, &[0.5, 0.01], &[1e4], &options).unwrap();
        assert_eq!(report.lhs[1][0], None);
        assert_eq!(report.missing.len(), 2);
        assert!(run_sweep("k", &target, &nf, &[0.1, 0.2], &[1.0], &options).is_err());
    }

    #[test]
    fn flat_branches_are_exact() {
        let a = axis();
        let hs = [1.0, 0.5, 0.25, 0.1];
        let branches = track_branches_flat(&a, a.functions(), &hs, 5).unwrap();
        assert_eq!(branches[0].limit_estimate, 0.0);
        let transverse = branches
            .iter()
            .find(|b| {
                let e = b.mode_class.unwrap();
                e.tangential == 0.0 && (e.transverse - 4.0 * PI * PI).abs() < 1e-9
            })
            .unwrap();
        for s in &transverse.samples {
            assert!((s.lambda - 4.0 * PI * PI * s.h * s.h).abs() < 1e-12);
        }
        assert!(transverse.limit_estimate.abs() < 1e-12);
        let leaf = branches
            .iter()
            .filter(|b| b.mode_class.unwrap().tangential > 0.0)
            .map(|b| b.limit_estimate)
            .fold(f64::INFINITY, f64::min);
        assert!((leaf - 4.0 * PI * PI).abs() < 1e-9);
        for b in &branches {
            let e = b.mode_class.unwrap();
            if e.transverse == 0.0 {
                assert!(b.samples.iter().all(|s| s.derivative_hf == 0.0));
            }
            // λ(h) = c₀ + c₂h² exactly
            for s in &b.samples {
                let fit = e.tangential + e.transverse * s.h * s.h;
                assert!((s.lambda - fit).abs() <= 1e-10 * fit.max(1.0));
            }
        }
    }

    #[test]
    fn limit_summary_on_flat_and_fibered() {
        let a = axis();
        let nf = leafwise_distribution_flat(&a, a.functions(), 100.0).unwrap();
        let branches = track_branches_flat(&a, a.functions(), &[1.0, 0.5, 0.2], 6).unwrap();
        let s = limit_summary(&branches, &nf, a.functions()).unwrap();
        assert_eq!(s.lambda_lim_0, 0.0);
        assert_eq!(s.lambda_leaf_bottom, 0.0);
        assert_eq!(s.lambda_f_0, Some(0.0));
        assert!(s.ordering_ok);
        assert!((s.smallest_leaf_excited_limit.unwrap() - 4.0 * PI * PI).abs() < 1e-9);

        let model = build_fibered_model(24, 24, |_, _| 1.0, |_, _| 1.0).unwrap();
        let pair = assemble_fibered_operators(&model).unwrap();
        let branches = track_branches_fibered(&pair, &[0.5, 0.3], 5, &BranchOptions::default()).unwrap();
        let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 1e3).unwrap();
        let s = limit_summary(&branches, &nf, model.functions()).unwrap();
        assert_eq!(s.lambda_lim_0, 0.0);
        assert_eq!(s.lambda_leaf_bottom, 0.0);
        assert!(s.ordering_ok);
    }

    #[test]
    fn transverse_branches_are_not_leaf_excited() {
        // leaf energies of transverse branches are small but nonzero when a
        // varies along the leaves
        let model = build_fibered_model(
            24,
            24,
            |x, y| 1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
            |_, y| 1.0 + 0.5 * (2.0 * PI * y).sin().powi(2),
        )
        .unwrap();
        let pair = assemble_fibered_operators(&model).unwrap();
        let options = BranchOptions {
            fd_step: None,
            ..BranchOptions::default()
        };
        let branches = track_branches_fibered(&pair, &[0.5, 0.25, 0.1], 5, &options).unwrap();
        assert!(branches[1..]
            .iter()
            .all(|b| b.leaf_energy > 0.0 && b.leaf_energy < 1e-3));
        let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 1e3).unwrap();
        let s = limit_summary(&branches, &nf, model.functions()).unwrap();
        assert_eq!(s.smallest_leaf_excited_limit, None);
    }

    #[test]
    fn fibered_hellmann_feynman_unit_metric() {
        let model = build_fibered_model(32, 32, |_, _| 1.0, |_, _| 1.0).unwrap();
        let pair = assemble_fibered_operators(&model).unwrap();
        let branches = track_branches_fibered(&pair, &[0.5], 5, &BranchOptions::default()).unwrap();
        for b in &branches {
            let s = b.samples[0];
            let fd = s.derivative_fd.unwrap();
            assert!(
                (fd - s.derivative_hf).abs() <= 1e-3 * s.derivative_hf.abs().max(1.0),
                "{s:?}"
            );
        }
        // transverse modes: λ = h²μ, derivative 2hμ
        let mu1 = (64.0 * (PI / 32.0).sin()).powi(2);
        let b1 = branches[1].samples[0];
        assert!((b1.lambda - 0.25 * mu1).abs() < 1e-8 * mu1);
        assert!((b1.derivative_hf - mu1).abs() < 1e-8 * mu1);
    }

    #[test]
    fn degree_sums_on_axis_model() {
        let a = axis();
        for lambda in [0.0, 10.0, 50.0, 200.0] {
            let f = count_modes(&a, a.functions(), 0.3, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap();
            let total: u64 = (0..=2)
                .map(|d| count_degree(&a, d, 0.3, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap())
                .sum();
            assert_eq!(total, 4 * f);
            assert_eq!(
                count_degree(&a, 1, 0.3, lambda, DEFAULT_ENUMERATION_BUDGET).unwrap(),
                2 * f
            );
        }
    }
}
