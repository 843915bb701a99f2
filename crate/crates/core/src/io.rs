//! CSV and JSON writers. Every CSV starts with `#`-prefixed provenance lines
//! (configuration hash, tool version, seed); floats are written with 17
//! significant digits so runs can be compared bit for bit.

use std::io::Write;

use serde::Serialize;

use crate::adiabatic::{EigenBranch, SweepReport};
use crate::error::Result;
use crate::leafwise::LeafwiseDistribution;
use crate::spectra::SpectrumSample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub tool: String,
    pub seed: u64,
}

impl Provenance {
    fn write_comments<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# config_sha256={}", self.config_sha256)?;
        writeln!(w, "# tool={}", self.tool)?;
        writeln!(w, "# seed={}", self.seed)?;
        Ok(())
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_writer<W: Write>(mut w: W, provenance: &Provenance) -> Result<csv::Writer<W>> {
    provenance.write_comments(&mut w)?;
    Ok(csv::Writer::from_writer(w))
}

/// Columns `eigenvalue,multiplicity`.
pub fn write_spectrum_csv<W: Write>(w: W, provenance: &Provenance, sample: &SpectrumSample) -> Result<()> {
    let mut out = csv_writer(w, provenance)?;
    out.write_record(["eigenvalue", "multiplicity"])?;
    for e in &sample.eigenvalues {
        out.write_record([fmt_f64(e.value), e.multiplicity.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `tau,jump_or_density,kind`: one row per atom, and the density of
/// any continuous part sampled at `density_grid`.
pub fn write_distribution_csv<W: Write>(
    w: W,
    provenance: &Provenance,
    nf: &LeafwiseDistribution,
    density_grid: &[f64],
) -> Result<()> {
    let mut out = csv_writer(w, provenance)?;
    out.write_record(["tau", "jump_or_density", "kind"])?;
    for a in nf.distribution.atoms() {
        out.write_record([fmt_f64(a.location), fmt_f64(a.weight), "jump".to_string()])?;
    }
    if let Some(part) = nf.distribution.continuous_part() {
        for &tau in density_grid {
            out.write_record([fmt_f64(tau), fmt_f64(part.density(tau)), "density".to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per `(h, λ)` cell.
pub fn write_sweep_csv<W: Write>(w: W, provenance: &Provenance, report: &SweepReport) -> Result<()> {
    let mut out = csv_writer(w, provenance)?;
    out.write_record(["h", "lambda", "count", "rhs", "ratio", "flagged", "missing"])?;
    for (i, &h) in report.h_schedule.iter().enumerate() {
        for (j, &lambda) in report.lambda_grid.iter().enumerate() {
            let flagged = report.flagged.contains(&(i, j));
            let missing = report
                .missing
                .iter()
                .find(|m| m.h_index == i && m.lambda_index == j)
                .map(|m| m.reason.clone())
                .unwrap_or_default();
            out.write_record([
                fmt_f64(h),
                fmt_f64(lambda),
                report.lhs[i][j].map(|n| n.to_string()).unwrap_or_default(),
                fmt_f64(report.rhs[j]),
                fmt_opt(report.ratio[i][j]),
                flagged.to_string(),
                missing,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per branch sample.
pub fn write_branches_csv<W: Write>(w: W, provenance: &Provenance, branches: &[EigenBranch]) -> Result<()> {
    let mut out = csv_writer(w, provenance)?;
    out.write_record([
        "branch",
        "h",
        "lambda",
        "derivative_fd",
        "derivative_hf",
        "limit_estimate",
        "leaf_energy",
    ])?;
    for b in branches {
        for s in &b.samples {
            out.write_record([
                b.id.to_string(),
                fmt_f64(s.h),
                fmt_f64(s.lambda),
                fmt_opt(s.derivative_fd),
                fmt_f64(s.derivative_hf),
                fmt_f64(b.limit_estimate),
                fmt_f64(b.leaf_energy),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Generic table writer for rows already formatted by the caller.
pub fn write_table_csv<W: Write>(w: W, provenance: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv_writer(w, provenance)?;
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}
