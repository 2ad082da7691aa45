//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::nn::Activation;
use crate::training::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LinearToy,
    RdSweep,
    NsSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LinearToy => "linear_toy",
            ExperimentKind::RdSweep => "rd_sweep",
            ExperimentKind::NsSweep => "ns_sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Datasets, indicators and checkpoints.
    pub data_dir: PathBuf,
    /// Result CSVs and tables.
    pub out_dir: PathBuf,
    /// Worker threads for the PDE sweeps; 0 uses every available core.
    pub workers: usize,
    pub linear: LinearToyConfig,
    pub rd: RdSweepConfig,
    pub ns: NsSweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearToyConfig {
    pub n_traj: usize,
    pub n_steps: usize,
    pub noise_sigma: f64,
    /// Shared by TR and mOLS.
    pub lambdas: Vec<f64>,
    /// Test initial conditions per seed.
    pub n_test: usize,
}

/// Surrogate training shared by the PDE sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateTraining {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub factor: f64,
    /// TR penalty strength.
    pub lambda: f64,
    /// mOLS weight decay.
    pub mols_lambda: f64,
    /// aOLS input noise as a fraction of the state standard deviation.
    pub aols_sigma_frac: f64,
    /// Fraction of the TR epoch budget spent on plain least squares before the penalty is
    /// switched on. The other objectives train for the full budget.
    pub tr_warm_start: f64,
    pub objectives: Vec<Objective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RdSweepConfig {
    /// Fine grid size; the resolved solver runs at half of it.
    pub n_fine: usize,
    pub gammas: Vec<f64>,
    pub train_traj: usize,
    pub burn_in: usize,
    /// Recorded steps per training trajectory.
    pub train_steps: usize,
    /// Keep every `stride`-th training tuple.
    pub stride: usize,
    pub test_steps: usize,
    pub tile: usize,
    pub latent_candidates: Vec<usize>,
    pub training: SurrogateTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsSweepConfig {
    pub ny: usize,
    pub reynolds: Vec<f64>,
    pub train_traj: usize,
    pub burn_in: usize,
    pub train_steps: usize,
    pub stride: usize,
    pub test_steps: usize,
    pub latent_candidates: Vec<usize>,
    /// Stopping-time threshold.
    pub k_threshold: f64,
    pub training: SurrogateTraining,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::LinearToy,
            seeds: vec![0, 1, 2],
            data_dir: PathBuf::from("artifacts"),
            out_dir: PathBuf::from("results"),
            workers: 0,
            linear: LinearToyConfig::default(),
            rd: RdSweepConfig::default(),
            ns: NsSweepConfig::default(),
        }
    }
}

impl Default for LinearToyConfig {
    fn default() -> Self {
        Self {
            n_traj: 10,
            n_steps: 50,
            noise_sigma: 1e-3,
            lambdas: vec![1.0, 1e2, 1e4, 1e6],
            n_test: 10,
        }
    }
}

impl Default for SurrogateTraining {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            activation: Activation::Tanh,
            epochs: 600,
            lr: 1e-3,
            batch_size: 10,
            patience: 100,
            factor: 0.5,
            lambda: 10.0,
            mols_lambda: 1e-4,
            aols_sigma_frac: 0.01,
            tr_warm_start: 0.5,
            objectives: Objective::ALL.to_vec(),
        }
    }
}

impl Default for RdSweepConfig {
    fn default() -> Self {
        Self {
            n_fine: 64,
            gammas: vec![0.05, 0.25],
            train_traj: 2,
            burn_in: 200,
            train_steps: 500,
            stride: 5,
            test_steps: 500,
            tile: 8,
            latent_candidates: vec![4, 8, 16, 32],
            training: SurrogateTraining {
                epochs: 300,
                ..SurrogateTraining::default()
            },
        }
    }
}

impl Default for NsSweepConfig {
    fn default() -> Self {
        Self {
            ny: 16,
            reynolds: vec![100.0, 200.0],
            train_traj: 2,
            burn_in: 100,
            train_steps: 400,
            stride: 4,
            test_steps: 400,
            latent_candidates: vec![4, 8, 16, 32],
            k_threshold: crate::runtime::DEFAULT_K,
            training: SurrogateTraining {
                hidden: vec![64],
                ..SurrogateTraining::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            ..Self::default()
        };
        if kind == ExperimentKind::LinearToy {
            cfg.seeds = (0..10).collect();
        }
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Full-size sweeps: five RD diffusion levels on a 128 grid, Re up to 500 on 128x32, ten seeds.
    pub fn full_scale(mut self) -> Self {
        self.rd.n_fine = 128;
        self.rd.gammas = vec![0.05, 0.10, 0.15, 0.20, 0.25];
        self.rd.test_steps = 1000;
        self.ns.ny = 32;
        self.ns.reynolds = vec![100.0, 200.0, 300.0, 400.0, 500.0];
        self.seeds = (0..10).collect();
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        let l = &self.linear;
        if l.n_traj == 0 || l.n_steps < 2 || l.n_test == 0 {
            return bad("linear: n_traj, n_test must be positive and n_steps at least 2");
        }
        if l.lambdas.is_empty() || l.lambdas.iter().any(|&v| !(v >= 0.0)) {
            return bad("linear: lambdas must be a non-empty list of non-negative values");
        }
        if !(l.noise_sigma >= 0.0) {
            return bad("linear: noise_sigma must be non-negative");
        }
        let r = &self.rd;
        if r.n_fine < 8 || r.n_fine % 4 != 0 {
            return bad("rd: n_fine must be a multiple of 4 and at least 8");
        }
        if r.gammas.is_empty() || r.gammas.iter().any(|&g| !(g > 0.0)) {
            return bad("rd: gammas must be a non-empty list of positive values");
        }
        if r.tile == 0 || r.n_fine % r.tile != 0 {
            return bad("rd: tile must divide n_fine");
        }
        check_common("rd", r.train_traj, r.train_steps, r.stride, r.test_steps, &r.latent_candidates, &r.training)?;
        let n = &self.ns;
        if n.ny < 4 {
            return bad("ns: ny must be at least 4");
        }
        if n.reynolds.is_empty() || n.reynolds.iter().any(|&v| !(v > 0.0)) {
            return bad("ns: reynolds must be a non-empty list of positive values");
        }
        if !(n.k_threshold > 0.0) {
            return bad("ns: k_threshold must be positive");
        }
        check_common("ns", n.train_traj, n.train_steps, n.stride, n.test_steps, &n.latent_candidates, &n.training)
    }
}

fn check_common(
    name: &str,
    train_traj: usize,
    train_steps: usize,
    stride: usize,
    test_steps: usize,
    latent: &[usize],
    t: &SurrogateTraining,
) -> Result<(), ExperimentError> {
    let fail = |m: &str| Err(ExperimentError::Config(format!("{name}: {m}")));
    if train_traj == 0 || train_steps == 0 || test_steps == 0 || stride == 0 {
        return fail("train_traj, train_steps, test_steps and stride must be positive");
    }
    if latent.is_empty() || latent.contains(&0) {
        return fail("latent_candidates must be a non-empty list of positive sizes");
    }
    if t.hidden.contains(&0) {
        return fail("hidden layer widths must be positive");
    }
    if !(t.lr > 0.0) || !(t.factor > 0.0 && t.factor < 1.0) {
        return fail("training lr must be positive and factor in (0, 1)");
    }
    if !(t.lambda >= 0.0) || !(t.mols_lambda >= 0.0) || !(t.aols_sigma_frac >= 0.0) {
        return fail("penalty strengths and noise fraction must be non-negative");
    }
    if !(0.0..1.0).contains(&t.tr_warm_start) {
        return fail("tr_warm_start must lie in [0, 1)");
    }
    if t.objectives.is_empty() {
        return fail("objectives must not be empty");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::for_kind(ExperimentKind::RdSweep);
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"ns_sweep\"\nseeds = [4]\n[ns]\nreynolds = [300.0]\n").unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::NsSweep);
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.ns.reynolds, vec![300.0]);
        assert_eq!(cfg.ns.ny, 16);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[rd]\ntile = 7").is_err());
        assert!(ExperimentConfig::from_toml_str("[linear]\nlambdas = [-1.0]").is_err());
    }
}
