//! The spectrum, sweep, heat and branches subcommands. Each returns the
//! paths it wrote, manifest last.

use std::path::PathBuf;

use adiabatic_core::adiabatic::{
    limit_summary, rhs_heat, rhs_trace_of_function, run_sweep, track_branches_fibered, track_branches_flat,
    SweepOptions, SweepTarget,
};
use adiabatic_core::io::{
    fmt_f64, write_branches_csv, write_distribution_csv, write_spectrum_csv, write_sweep_csv, write_table_csv,
};
use adiabatic_core::spectra::{
    enumerate_modes, heat_trace, solve_fibered_spectrum, trace_of_function, Completeness, SpectrumSample,
};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::{Model, Run};

/// One sample per scale: exact enumeration up to `lambda_max` on flat
/// models, the `count` lowest eigenvalues on fibered ones.
fn sample(run: &Run, model: &Model, h: f64, lambda_max: f64, count: usize) -> Result<(SpectrumSample, f64)> {
    match model {
        Model::Flat { model, grade } => {
            let s = enumerate_modes(model, *grade, h, lambda_max, run.config.solver.enumeration_budget)
                .with_context(|| format!("enumerating modes at h={h}"))?;
            Ok((s, 0.0))
        }
        Model::Fibered { pair, .. } => {
            let s = solve_fibered_spectrum(pair, h, count, &run.config.eigen_options())
                .with_context(|| format!("solving at h={h}"))?;
            let residual = s.residuals.iter().copied().fold(0.0, f64::max);
            Ok((s.sample, residual))
        }
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    h: f64,
    file: String,
    rows: usize,
    total_multiplicity: u64,
    lambda_max: f64,
    completeness: Completeness,
    max_residual: f64,
}

pub fn spectrum(run: &Run) -> Result<Vec<PathBuf>> {
    let model = Model::build(&run.config)?;
    let grade = model.grade();
    let stem = run.stem(grade)?;
    let prov = run.provenance();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (i, h) in run.config.h_values()?.into_iter().enumerate() {
        let (s, max_residual) = sample(
            run,
            &model,
            h,
            run.config.spectrum.lambda_max,
            run.config.spectrum.count,
        )?;
        let (w, path) = run.create(&format!("spectrum_{stem}_h{i}.csv"))?;
        write_spectrum_csv(w, &prov, &s)?;
        summary.push(SpectrumSummary {
            h,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            rows: s.eigenvalues.len(),
            total_multiplicity: s.total_multiplicity(),
            lambda_max: s.lambda_max,
            completeness: s.completeness,
            max_residual,
        });
        files.push(path);
    }
    let nf = model.leafwise(&run.config)?;
    let grid: Vec<f64> = run.config.lambda_values()?.into_iter().filter(|&l| l >= 0.0).collect();
    let (w, path) = run.create(&format!("distribution_{stem}.csv"))?;
    write_distribution_csv(w, &prov, &nf, &grid)?;
    files.push(path);
    let manifest = run.write_manifest("spectrum", &stem, grade, &files, &summary)?;
    files.push(manifest);
    Ok(files)
}

pub fn sweep(run: &Run) -> Result<Vec<PathBuf>> {
    let model = Model::build(&run.config)?;
    let grade = model.grade();
    let stem = run.stem(grade)?;
    let nf = model.leafwise(&run.config)?;
    let target = match &model {
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
    let report = run_sweep(
        run.config.model.id(),
        &target,
        &nf,
        &run.config.h_values()?,
        &run.config.lambda_values()?,
        &options,
    )?;
    let (w, path) = run.create(&format!("sweep_{stem}.csv"))?;
    write_sweep_csv(w, &run.provenance(), &report)?;
    let mut files = vec![path];
    let manifest = run.write_manifest("sweep", &stem, grade, &files, &report)?;
    files.push(manifest);
    Ok(files)
}

#[derive(Serialize)]
struct HeatSummary {
    codim: usize,
    tail_warnings: usize,
    max_relative_error: f64,
}

pub fn heat(run: &Run) -> Result<Vec<PathBuf>> {
    let model = Model::build(&run.config)?;
    let grade = model.grade();
    let q = model.codim();
    let stem = run.stem(grade)?;
    let nf = model.leafwise(&run.config)?;
    let heat = &run.config.heat;
    let schedule = run.config.h_values()?;
    let samples = schedule
        .iter()
        .map(|&h| sample(run, &model, h, heat.flat_cutoff(), heat.count).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut tail_warnings = 0;
    let mut max_relative_error: f64 = 0.0;
    for &t in &heat.t {
        for s in &samples {
            let tr = heat_trace(s, t)?;
            let rhs = rhs_heat(&nf, t, s.h, q)?;
            let rel = (tr.value - rhs).abs() / rhs;
            tail_warnings += tr.tail_warning as usize;
            max_relative_error = max_relative_error.max(rel);
            rows.push(vec![
                fmt_f64(t),
                fmt_f64(s.h),
                fmt_f64(tr.value),
                fmt_f64(rhs),
                fmt_f64(rel),
                tr.tail_warning.to_string(),
            ]);
        }
    }
    let (w, path) = run.create(&format!("heat_{stem}.csv"))?;
    write_table_csv(
        w,
        &run.provenance(),
        &["t", "h", "trace", "rhs", "relative_error", "tail_warning"],
        &rows,
    )?;
    let mut files = vec![path];

    if !heat.functions.is_empty() {
        let mut rows = Vec::new();
        for (k, f) in heat.functions.iter().enumerate() {
            let coefficient = rhs_trace_of_function(&nf, f, q).with_context(|| format!("heat.functions[{k}]"))?;
            for s in &samples {
                let tr = trace_of_function(s, f).with_context(|| format!("heat.functions[{k}] at h={}", s.h))?;
                let rhs = coefficient * s.h.powi(-(q as i32));
                rows.push(vec![
                    k.to_string(),
                    serde_json::to_string(f)?,
                    fmt_f64(s.h),
                    fmt_f64(tr.value),
                    fmt_f64(rhs),
                    tr.tail_warning.to_string(),
                ]);
            }
        }
        let (w, path) = run.create(&format!("trace_{stem}.csv"))?;
        write_table_csv(
            w,
            &run.provenance(),
            &["function", "definition", "h", "trace", "rhs", "tail_warning"],
            &rows,
        )?;
        files.push(path);
    }
    let summary = HeatSummary {
        codim: q,
        tail_warnings,
        max_relative_error,
    };
    let manifest = run.write_manifest("heat", &stem, grade, &files, &summary)?;
    files.push(manifest);
    Ok(files)
}

pub fn branches(run: &Run) -> Result<Vec<PathBuf>> {
    let model = Model::build(&run.config)?;
    let grade = model.grade();
    let stem = run.stem(grade)?;
    let schedule = run.config.h_values()?;
    let count = run.config.branches.count;
    let branches = match &model {
        Model::Flat { model, grade } => track_branches_flat(model, *grade, &schedule, count)?,
        Model::Fibered { pair, .. } => track_branches_fibered(pair, &schedule, count, &run.config.branch_options())?,
    };
    let nf = model.leafwise(&run.config)?;
    let limits = limit_summary(&branches, &nf, grade)?;
    let (w, path) = run.create(&format!("branches_{stem}.csv"))?;
    write_branches_csv(w, &run.provenance(), &branches)?;
    let mut files = vec![path];

    #[derive(Serialize)]
    struct Summary<'a> {
        limits: adiabatic_core::adiabatic::LimitSummary,
        branches: &'a [adiabatic_core::adiabatic::EigenBranch],
    }
    let summary = Summary {
        limits,
        branches: &branches,
    };
    let manifest = run.write_manifest("branches", &stem, grade, &files, &summary)?;
    files.push(manifest);
    Ok(files)
}
