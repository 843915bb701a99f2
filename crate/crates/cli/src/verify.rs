//! Reduced-scale self check. Two checks on the configured model run first
//! (ids 12 and 13), then the eleven acceptance criteria (ids 1 to 11) on
//! small instances. The exit status is the id of the first failing row.

use std::f64::consts::PI;
use std::time::Instant;

use adiabatic_core::adiabatic::{
    estimate_r_exponent, limit_summary, rhs_counting, rhs_heat, rhs_trace_of_function, run_sweep,
    track_branches_fibered, track_branches_flat, BranchOptions, ExponentEstimate, SweepOptions, SweepTarget,
};
use adiabatic_core::eigen::EigenOptions;
use adiabatic_core::leafwise::{leafwise_distribution_fibered, leafwise_distribution_flat, LeafQuadrature};
use adiabatic_core::models::{build_fibered_model, build_flat_model, Bigrade};
use adiabatic_core::operators::{assemble_fibered_operators, check_crude_garding};
use adiabatic_core::spectra::{count_modes, enumerate_modes, heat_trace, solve_fibered_spectrum};
use adiabatic_core::{Error, FiberedTorusModel, FlatLinearFoliation, TestFunction};
use anyhow::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Model, Run};

/// Slack on fitted exponents around the bracket `[0, q]`.
const EXPONENT_SLACK: f64 = 0.15;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<u8> {
        self.checks.iter().find(|c| !c.pass).map(|c| c.id)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:>3}  {:<26} {}  {:>6.2}s  {}\n",
                c.id,
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.seconds,
                c.detail
            ));
        }
        s
    }
}

fn check(id: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    Check {
        id,
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn verify(run: &Run) -> VerifyReport {
    let model = Model::build(&run.config);
    let mut checks = Vec::new();
    let model_detail = match &model {
        Ok(Model::Flat { model, grade }) => Ok(format!("flat, leaf dimension {}, grade {grade}", model.leaf_dim())),
        Ok(Model::Fibered { model, .. }) => Ok(format!("fibered {}x{}, bundle-like", model.nx, model.ny)),
        Err(e) => {
            let bundle = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::TransverseLeafDependence { .. })));
            Err(if bundle {
                format!("metric is not bundle-like: {e:#}")
            } else {
                format!("{e:#}")
            })
        }
    };
    checks.push(check(12, "config model", || match model_detail {
        Ok(d) => Ok((true, d)),
        Err(d) => Ok((false, d)),
    }));
    checks.push(check(13, "config sweep", || match &model {
        Ok(m) => config_sweep(run, m),
        Err(_) => Ok((false, "skipped: model did not build".into())),
    }));
    checks.push(check(1, "kronecker counting", criterion_1));
    checks.push(check(2, "convergence trend", criterion_2));
    checks.push(check(3, "fibration counting", criterion_3));
    checks.push(check(4, "form-degree multiplicity", criterion_4));
    checks.push(check(5, "heat trace", criterion_5));
    checks.push(check(6, "trace consistency", criterion_6));
    checks.push(check(7, "hellmann-feynman", criterion_7));
    checks.push(check(8, "discretization order", criterion_8));
    checks.push(check(9, "exponent estimator", criterion_9));
    checks.push(check(10, "crude garding", || criterion_10(run.config.seed)));
    checks.push(check(11, "limit ordering", criterion_11));
    VerifyReport { checks }
}

fn config_sweep(run: &Run, model: &Model) -> Result<(bool, String)> {
    let nf = model.leafwise(&run.config)?;
    let target = match model {
        Model::Flat { model, grade } => SweepTarget::Flat { model, grade: *grade },
        Model::Fibered { pair, .. } => SweepTarget::Fibered {
            pair,
            count: run.config.sweep.count,
        },
    };
    let options = SweepOptions {
        enumeration_budget: run.config.solver.enumeration_budget,
        eigen: run.config.eigen_options(),
    };
    let grid = run.config.lambda_values()?;
    let report = run_sweep(
        run.config.model.id(),
        &target,
        &nf,
        &run.config.h_values()?,
        &grid,
        &options,
    )?;
    let (lo, hi) = report.exponent_bracket;
    let mut problems = Vec::new();
    if !report.flagged.is_empty() {
        problems.push(format!("{} flagged cells", report.flagged.len()));
    }
    for (lambda, fit) in grid.iter().zip(&report.exponents) {
        match fit {
            Ok(ExponentEstimate::Finite { r, .. }) if *r < lo - EXPONENT_SLACK || *r > hi + EXPONENT_SLACK => {
                problems.push(format!("r({lambda}) = {r:.3} outside [{lo}, {hi}]"))
            }
            Ok(_) => {}
            Err(e) => problems.push(format!("exponent fit at λ={lambda}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok((
            true,
            format!(
                "{} cells, no flagged cells, exponents in bracket",
                report.lhs.len() * grid.len()
            ),
        ))
    } else {
        Ok((false, problems.join("; ")))
    }
}

fn kronecker() -> FlatLinearFoliation {
    build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).unwrap()
}

fn axis() -> FlatLinearFoliation {
    build_flat_model(2, &[vec![1.0, 0.0]]).unwrap()
}

fn varying(n: usize) -> FiberedTorusModel {
    build_fibered_model(
        n,
        n,
        |x, y| 1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
        |_, y| 1.0 + 0.5 * (2.0 * PI * y).sin().powi(2),
    )
    .unwrap()
}

/// `#{k ∈ ℤ² : e_F + h²e_H ≤ λ}` by brute force over a box, for the line
/// with slope √2.
fn box_count(h: f64, lambda: f64) -> u64 {
    let r = (lambda.sqrt() / (2.0 * PI * h)).ceil() as i64 + 1;
    let s = 3f64.sqrt();
    let mut n = 0;
    for a in -r..=r {
        for b in -r..=r {
            let along = (a as f64 + b as f64 * 2f64.sqrt()) / s;
            let total = (a * a + b * b) as f64;
            let v = 4.0 * PI * PI * (along * along + h * h * (total - along * along));
            n += (v <= lambda) as u64;
        }
    }
    n
}

fn criterion_1() -> Result<(bool, String)> {
    let m = kronecker();
    let (h, lambda) = (0.05, 100.0);
    let n = count_modes(&m, m.functions(), h, lambda, u64::MAX)?;
    let weyl = lambda / (4.0 * PI);
    let rel = (h * n as f64 - weyl).abs() / weyl;
    let oracle = box_count(h, lambda);
    Ok((
        n == oracle && rel <= 0.03,
        format!("N = {n} (box {oracle}), deviation {rel:.4}"),
    ))
}

fn criterion_2() -> Result<(bool, String)> {
    let m = kronecker();
    let weyl = 100.0 / (4.0 * PI);
    let mut dev = Vec::new();
    for h in [0.2, 0.1, 0.05, 0.025] {
        let n = count_modes(&m, m.functions(), h, 100.0, u64::MAX)?;
        dev.push((h * n as f64 - weyl).abs());
    }
    let mut inversions = 0;
    let mut large = false;
    for w in dev.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            large |= w[1] - w[0] > 0.1 * w[0].max(w[1]);
        }
    }
    Ok((
        inversions <= 1 && !large,
        format!("deviations {dev:.4?}, {inversions} inversion(s)"),
    ))
}

fn criterion_3() -> Result<(bool, String)> {
    let m = axis();
    let (h, lambda) = (0.05, 100.0);
    let n = count_modes(&m, m.functions(), h, lambda, u64::MAX)?;
    let mut atomic = 0.0;
    for a in -2i64..=2 {
        let tau = (2.0 * PI * a as f64).powi(2);
        if tau <= lambda {
            atomic += (lambda - tau).sqrt();
        }
    }
    atomic /= PI;
    let nf = leafwise_distribution_flat(&m, m.functions(), 4.0 * lambda)?;
    let rhs = rhs_counting(&nf, lambda, 1)?;
    let rel = (h * n as f64 - atomic).abs() / atomic;
    Ok((
        (rhs - atomic).abs() <= 1e-10 * atomic && rel <= 0.05,
        format!("h N = {:.4}, atomic sum {atomic:.4}, deviation {rel:.4}", h * n as f64),
    ))
}

fn criterion_4() -> Result<(bool, String)> {
    let m = axis();
    let mut mismatches = 0;
    for k in 0..20 {
        let lambda = 10.0 * k as f64;
        let f = count_modes(&m, m.functions(), 0.1, lambda, u64::MAX)?;
        for i in 0..=1 {
            for j in 0..=1 {
                let g = Bigrade::new(i, j, 1, 1)?;
                mismatches += (count_modes(&m, g, 0.1, lambda, u64::MAX)? != f) as usize;
            }
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches")))
}

fn criterion_5() -> Result<(bool, String)> {
    let m = kronecker();
    let t = 0.5;
    let nf = leafwise_distribution_flat(&m, m.functions(), 0.0)?;
    let mut rel = f64::NAN;
    for h in [0.1, 0.05, 0.025] {
        let s = enumerate_modes(&m, m.functions(), h, 80.0, u64::MAX)?;
        let tr = heat_trace(&s, t)?;
        let rhs = rhs_heat(&nf, t, h, 1)?;
        rel = (tr.value - rhs).abs() / rhs;
    }
    Ok((rel <= 0.05, format!("relative error at h=0.025 {rel:.2e}")))
}

fn criterion_6() -> Result<(bool, String)> {
    let k = kronecker();
    let nf = leafwise_distribution_flat(&k, k.functions(), 0.0)?;
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 1.0] {
        let trace = rhs_trace_of_function(&nf, &TestFunction::Gaussian { t }, 1)?;
        let heat = rhs_heat(&nf, t, 0.05, 1)? * 0.05;
        worst = worst.max((trace - heat).abs() / heat);
    }
    Ok((worst <= 1e-8, format!("max relative difference {worst:.2e}")))
}

fn criterion_7() -> Result<(bool, String)> {
    let pair = assemble_fibered_operators(&varying(32))?;
    let branches = track_branches_fibered(&pair, &[0.5], 5, &BranchOptions::default())?;
    let mut worst: f64 = 0.0;
    for b in &branches {
        let s = b.samples[0];
        let fd = s.derivative_fd.unwrap_or(f64::INFINITY);
        worst = worst.max((fd - s.derivative_hf).abs() / s.derivative_hf.abs().max(1.0));
    }
    Ok((worst <= 1e-3, format!("32x32, max FD mismatch {worst:.2e}")))
}

/// Order only: the absolute bound is stated for a grid larger than this
/// check uses.
fn criterion_8() -> Result<(bool, String)> {
    let h = 0.5;
    let count = 20;
    let mut exact = Vec::new();
    for a in -6i64..=6 {
        for b in -12i64..=12 {
            exact.push(4.0 * PI * PI * ((a * a) as f64 + h * h * (b * b) as f64));
        }
    }
    exact.sort_by(f64::total_cmp);
    let sizes = [16usize, 32, 64];
    let mut errors = Vec::new();
    for n in sizes {
        let model = build_fibered_model(n, n, |_, _| 1.0, |_, _| 1.0)?;
        let pair = assemble_fibered_operators(&model)?;
        let spec = solve_fibered_spectrum(&pair, h, count, &EigenOptions::default())?;
        let err = spec
            .values
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let order = -sxy / sxx;
    Ok((
        (1.8..=2.2).contains(&order),
        format!("errors {errors:.4?} for N = 16, 32, 64, order {order:.3}"),
    ))
}

fn criterion_9() -> Result<(bool, String)> {
    let m = kronecker();
    let hs = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let counts = hs
        .iter()
        .map(|&h| count_modes(&m, m.functions(), h, 10.0, u64::MAX).map(|n| n as f64))
        .collect::<adiabatic_core::Result<Vec<f64>>>()?;
    let r = match estimate_r_exponent(&counts, &hs)? {
        ExponentEstimate::Finite { r, .. } => r,
        ExponentEstimate::NegInfinity => f64::NEG_INFINITY,
    };
    let zero = estimate_r_exponent(&[0.0; 5], &hs)? == ExponentEstimate::NegInfinity;
    Ok((
        (0.9..=1.1).contains(&r) && zero,
        format!("r = {r:.4}, zero counts give -inf: {zero}"),
    ))
}

fn criterion_10(seed: u64) -> Result<(bool, String)> {
    let m = kronecker();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..200 {
        let modes: Vec<(Vec<i64>, Complex64)> = (0..20)
            .map(|_| {
                let k = vec![rng.random_range(-15..=15), rng.random_range(-15..=15)];
                (
                    k,
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        for h in [1.0, 0.1, 0.01] {
            violations += !check_crude_garding(&m, h, &modes)?.holds as usize;
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in 600 checks, seed {seed}"),
    ))
}

fn criterion_11() -> Result<(bool, String)> {
    let hs = [1.0, 0.5, 0.25, 0.1];
    let mut pass = true;
    let k = kronecker();
    let nf = leafwise_distribution_flat(&k, k.functions(), 0.0)?;
    let s = limit_summary(&track_branches_flat(&k, k.functions(), &hs, 8)?, &nf, k.functions())?;
    pass &= s.lambda_lim_0 == 0.0 && s.lambda_leaf_bottom == 0.0 && s.ordering_ok;

    let a = axis();
    let nf = leafwise_distribution_flat(&a, a.functions(), 1e3)?;
    let s = limit_summary(&track_branches_flat(&a, a.functions(), &hs, 8)?, &nf, a.functions())?;
    let excited = s.smallest_leaf_excited_limit.unwrap_or(f64::NAN);
    pass &= s.ordering_ok && (excited - 4.0 * PI * PI).abs() <= 1e-9;

    let model = varying(16);
    let pair = assemble_fibered_operators(&model)?;
    let nf = leafwise_distribution_fibered(&model, LeafQuadrature::AllRows, 1e4)?;
    let options = BranchOptions {
        fd_step: None,
        ..BranchOptions::default()
    };
    let branches = track_branches_fibered(&pair, &[0.5, 0.25, 0.1], 4, &options)?;
    let f = limit_summary(&branches, &nf, model.functions())?;
    pass &= f.lambda_lim_0 == 0.0 && f.lambda_leaf_bottom == 0.0 && f.ordering_ok;
    Ok((
        pass,
        format!(
            "axis leaf-excited limit {excited:.9}, fibered 16x16 ordering {}",
            f.ordering_ok
        ),
    ))
}
