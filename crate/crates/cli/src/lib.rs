//! Config-driven experiment runner. Each subcommand reads one TOML file,
//! writes CSV tables plus a JSON manifest, and produces byte-identical
//! output for the same configuration and seed.

pub mod commands;
pub mod config;
pub mod verify;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use adiabatic_core::io::{fmt_f64, write_json, Provenance};
use adiabatic_core::leafwise::{leafwise_distribution_fibered, leafwise_distribution_flat, LeafwiseDistribution};
use adiabatic_core::models::build_fibered_model_from_exprs;
use adiabatic_core::operators::{assemble_fibered_operators, DiscreteOperatorPair};
use adiabatic_core::{expr::Expr, Bigrade, FiberedTorusModel, FlatLinearFoliation};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{scalar_value, ExperimentConfig, LoadedConfig, ModelConfig};

pub const TOOL: &str = concat!("adiabatic ", env!("CARGO_PKG_VERSION"));

/// A model built from its config block.
pub enum Model {
    Flat {
        model: FlatLinearFoliation,
        grade: Bigrade,
    },
    Fibered {
        model: FiberedTorusModel,
        pair: DiscreteOperatorPair,
    },
}

impl Model {
    pub fn build(config: &ExperimentConfig) -> Result<Model> {
        match &config.model {
            ModelConfig::Flat { span, .. } => {
                let mut rows = Vec::with_capacity(span.len());
                for row in span {
                    rows.push(row.iter().map(scalar_value).collect::<Result<Vec<f64>>>()?);
                }
                let n = rows[0].len();
                if rows.iter().any(|r| r.len() != n) {
                    bail!("model.span: all vectors need the same length");
                }
                let model = adiabatic_core::models::build_flat_model(n, &rows).context("model.span")?;
                let grade = model
                    .bigrade(config.grade.tangential, config.grade.transverse)
                    .context("grade")?;
                Ok(Model::Flat { model, grade })
            }
            ModelConfig::Fibered { a, b, nx, ny, .. } => {
                if config.grade.tangential != 0 || config.grade.transverse != 0 {
                    bail!("grade: fibered models carry functions only, use tangential = 0 and transverse = 0");
                }
                let a = Expr::parse(a).context("model.a")?;
                let b = Expr::parse(b).context("model.b")?;
                let model = build_fibered_model_from_exprs(*nx, *ny, &a, &b).context("model")?;
                let pair = assemble_fibered_operators(&model).context("model")?;
                Ok(Model::Fibered { model, pair })
            }
        }
    }

    pub fn grade(&self) -> Bigrade {
        match self {
            Model::Flat { grade, .. } => *grade,
            Model::Fibered { model, .. } => model.functions(),
        }
    }

    pub fn codim(&self) -> usize {
        self.grade().codim
    }

    pub fn leafwise(&self, config: &ExperimentConfig) -> Result<LeafwiseDistribution> {
        let nf = match self {
            Model::Flat { model, grade } => leafwise_distribution_flat(model, *grade, config.leafwise.tau_max)?,
            Model::Fibered { model, .. } => {
                leafwise_distribution_fibered(model, config.leaf_quadrature(), config.leafwise.tau_max)?
            }
        };
        Ok(nf)
    }
}

/// Everything a subcommand needs: the validated config, its hash, and where
/// to write.
pub struct Run {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub out: PathBuf,
}

impl Run {
    /// `out` and `seed` override the values in the file.
    pub fn new(loaded: LoadedConfig, out: Option<PathBuf>, seed: Option<u64>) -> Run {
        let mut config = loaded.config;
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out.unwrap_or_else(|| config.out.clone());
        Run {
            config,
            config_sha256: loaded.sha256,
            out,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_sha256: self.config_sha256.clone(),
            tool: TOOL.to_string(),
            seed: self.config.seed,
        }
    }

    /// `<model id>_<grade>_<first 8 hex digits of the schedule hash>`.
    pub fn stem(&self, grade: Bigrade) -> Result<String> {
        let schedule: Vec<String> = self.config.h_values()?.into_iter().map(fmt_f64).collect();
        let digest = hex::encode(Sha256::digest(schedule.join(",").as_bytes()));
        Ok(format!("{}_{grade}_{}", self.config.model.id(), &digest[..8]))
    }

    pub fn create(&self, name: &str) -> Result<(BufWriter<File>, PathBuf)> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((BufWriter::new(file), path))
    }

    /// Write `manifest_<command>_<stem>.json` listing the files produced.
    pub fn write_manifest<S: Serialize>(
        &self,
        command: &str,
        stem: &str,
        grade: Bigrade,
        files: &[PathBuf],
        summary: &S,
    ) -> Result<PathBuf> {
        let manifest = Manifest {
            command,
            tool: TOOL,
            config_sha256: &self.config_sha256,
            seed: self.config.seed,
            model_id: self.config.model.id(),
            grade: grade.to_string(),
            h_schedule: self.config.h_values()?,
            files: files.iter().map(|p| file_name(p)).collect(),
            summary,
        };
        let (w, path) = self.create(&format!("manifest_{command}_{stem}.json"))?;
        write_json(w, &manifest)?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    command: &'a str,
    tool: &'a str,
    config_sha256: &'a str,
    seed: u64,
    model_id: &'a str,
    grade: String,
    h_schedule: Vec<f64>,
    files: Vec<String>,
    summary: &'a S,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
