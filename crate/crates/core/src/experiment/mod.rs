//! The three experiment suites and the artifact store they share with the CLI.

mod commands;
pub mod config;
mod linear_toy;
mod manifest;
mod pde_sweep;

pub use commands::{gen_data, simulate, train, train_ae};
pub use config::{
    ExperimentConfig, ExperimentKind, LinearToyConfig, NsSweepConfig, RdSweepConfig, SurrogateTraining,
};
pub use linear_toy::{linear_toy, LinearToyResult, SweepRow};
pub use manifest::{verify_manifest, write_manifest, MANIFEST_NAME};
pub use pde_sweep::{
    diff_percent, ensure_datasets, export_dataset_csv, ensure_indicator, ensure_surrogate, evaluate_setting, mean_std, ns_table,
    rd_table, run_pde_sweep, settings, train_pde_surrogate, write_runs_csv, PdeSetting, RunRecord,
};

use std::path::{Path, PathBuf};

use crate::linear::LinearError;
use crate::manifold::ManifoldError;
use crate::nn::NnError;
use crate::pde::PdeError;
use crate::training::TrainingError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt artifact {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<LinearError> for ExperimentError {
    fn from(e: LinearError) -> Self {
        match e {
            LinearError::Argument(m) => ExperimentError::Config(m),
            other => ExperimentError::Numeric(other.to_string()),
        }
    }
}

impl From<PdeError> for ExperimentError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Argument(m) => ExperimentError::Config(m),
            other => ExperimentError::Numeric(other.to_string()),
        }
    }
}

impl From<ManifoldError> for ExperimentError {
    fn from(e: ManifoldError) -> Self {
        match e {
            ManifoldError::Argument(m) => ExperimentError::Config(m),
            ManifoldError::Gate { .. } => ExperimentError::Dependency(e.to_string()),
            other => ExperimentError::Numeric(other.to_string()),
        }
    }
}

impl From<NnError> for ExperimentError {
    fn from(e: NnError) -> Self {
        ExperimentError::Numeric(e.to_string())
    }
}

impl From<TrainingError> for ExperimentError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(m) => ExperimentError::Dependency(m),
            TrainingError::Argument(m) => ExperimentError::Config(m),
            TrainingError::Pde(p) => p.into(),
            TrainingError::Manifold(m) => m.into(),
            other => ExperimentError::Numeric(other.to_string()),
        }
    }
}

/// Where artifacts live and whether missing ones may be built on demand.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Build missing prerequisites instead of failing.
    pub auto: bool,
    /// Issue indicators that miss the autoencoder gate.
    pub force: bool,
}

impl Workspace {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            data_dir: cfg.data_dir.clone(),
            out_dir: cfg.out_dir.clone(),
            auto: false,
            force: false,
        }
    }

    pub(crate) fn data_path(&self, name: &str) -> PathBuf {
        self.data_dir.join(name)
    }

    pub(crate) fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub(crate) fn prepare(&self) -> Result<(), ExperimentError> {
        for d in [&self.data_dir, &self.out_dir] {
            std::fs::create_dir_all(d).map_err(|e| ExperimentError::io(d, e))?;
        }
        Ok(())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Runs the configured suite end to end and returns the summary table text.
pub fn run_experiment(cfg: &ExperimentConfig, ws: &Workspace) -> Result<String, ExperimentError> {
    cfg.validate()?;
    ws.prepare()?;
    let summary = match cfg.experiment {
        ExperimentKind::LinearToy => {
            let res = linear_toy(cfg)?;
            write_text(&ws.out_path("linear_curves.csv"), &res.curves_csv)?;
            write_text(&ws.out_path("linear_sweep.csv"), &res.sweep_csv())?;
            res.summary_text()
        }
        ExperimentKind::RdSweep | ExperimentKind::NsSweep => {
            let records = run_pde_sweep(cfg, ws)?;
            let prefix = cfg.experiment.name();
            write_text(&ws.out_path(&format!("{prefix}_runs.csv")), &write_runs_csv(&records))?;
            let table = if cfg.experiment == ExperimentKind::RdSweep {
                rd_table(&records, &cfg.rd.gammas)
            } else {
                ns_table(&records, &cfg.ns.reynolds)
            };
            write_text(&ws.out_path(&format!("{prefix}_table.csv")), &table)?;
            table
        }
    };
    write_manifest(&ws.out_dir)?;
    Ok(summary)
}
