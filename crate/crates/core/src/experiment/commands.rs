//! The individual pipeline stages behind the `mlhs` subcommands. Each returns a short report.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::pde_sweep::{ensure_datasets, ensure_indicator, ensure_surrogate, evaluate_setting, settings};
use super::{write_manifest, ExperimentConfig, ExperimentError, ExperimentKind, Workspace};
use crate::linalg::DenseMatrix;
use crate::linear::{fit_mols, fit_ols, fit_tr, generate_linear_data, simulate_linear, toy_system, LinearSystem, SimMode};
use crate::pde::TrajectoryDataset;
use crate::rng::{normal_vec, stream_rng};
use crate::runtime::{evaluate_run, run_hybrid, write_run_csv, DEFAULT_CEILING};
use crate::training::{train_surrogate, Objective, ResolvedModel, SurrogateArch, SurrogateModel, TrainConfig};

fn linear_tag(seed: u64) -> String {
    format!("linear_s{seed}")
}

fn linear_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(LinearSystem, crate::linear::LinearDataset), ExperimentError> {
    let sys = toy_system(seed);
    let l = &cfg.linear;
    let data = generate_linear_data(&sys, l.n_traj, l.n_steps, l.noise_sigma, seed)?;
    Ok((sys, data))
}

fn load_linear(ws: &Workspace, seed: u64) -> Result<TrajectoryDataset, ExperimentError> {
    let path = ws.data_path(&format!("{}.bin", linear_tag(seed)));
    if !path.exists() {
        return Err(ExperimentError::Dependency(format!("{} not found; run gen-data", path.display())));
    }
    TrajectoryDataset::load(&path).map_err(|e| ExperimentError::Format {
        path,
        msg: e.to_string(),
    })
}

/// Back from the column-stacked file format to `(U, Y)`.
fn linear_matrices(d: &TrajectoryDataset) -> (DenseMatrix, DenseMatrix) {
    let u: Vec<Vec<f64>> = (0..d.len()).map(|k| d.state(k).to_vec()).collect();
    let y: Vec<Vec<f64>> = (0..d.len()).map(|k| d.label(k).to_vec()).collect();
    (DenseMatrix::from_columns(&u), DenseMatrix::from_columns(&y))
}

fn export(src: &TrajectoryDataset, dir: Option<&Path>, name: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let path = dir.join(format!("{name}.csv"));
        src.export_csv(&path).map_err(|e| ExperimentError::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Generates every dataset of the configured experiment into the data directory, optionally
/// exporting CSV copies to `export_dir`, and refreshes the data manifest.
pub fn gen_data(cfg: &ExperimentConfig, ws: &Workspace, export_dir: Option<&Path>) -> Result<String, ExperimentError> {
    cfg.validate()?;
    ws.prepare()?;
    let mut report = String::new();
    match cfg.experiment {
        ExperimentKind::LinearToy => {
            for &seed in &cfg.seeds {
                let (_, data) = linear_dataset(cfg, seed)?;
                let d = TrajectoryDataset::from(&data);
                let path = ws.data_path(&format!("{}.bin", linear_tag(seed)));
                d.save(&path).map_err(|e| ExperimentError::Format {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
                export(&d, export_dir, &linear_tag(seed))?;
                writeln!(report, "{}: {} tuples", path.display(), d.len()).unwrap();
            }
        }
        _ => {
            for setting in settings(cfg) {
                for &seed in &cfg.seeds {
                    let (train, test) = ensure_datasets(cfg, ws, setting, seed, true)?;
                    let tag = setting.tag(seed);
                    export(&train, export_dir, &format!("{tag}_train"))?;
                    export(&test, export_dir, &format!("{tag}_test"))?;
                    writeln!(report, "{tag}: {} training tuples, {} test states", train.len(), test.len()).unwrap();
                }
            }
        }
    }
    write_manifest(&ws.data_dir)?;
    Ok(report)
}

/// Fits the distribution-shift indicator of every PDE setting. The linear toy needs none: its
/// data subspace is known exactly.
pub fn train_ae(cfg: &ExperimentConfig, ws: &Workspace) -> Result<String, ExperimentError> {
    cfg.validate()?;
    ws.prepare()?;
    if cfg.experiment == ExperimentKind::LinearToy {
        return Ok("linear_toy uses the exact subspace projector; no indicator to train\n".into());
    }
    let mut report = String::new();
    for setting in settings(cfg) {
        for &seed in &cfg.seeds {
            let ind = ensure_indicator(cfg, ws, setting, seed, true)?;
            let m = ind.model();
            writeln!(
                report,
                "{}: latent {} mean F² {:.3e}",
                setting.tag(seed),
                m.latent_dim,
                m.train_loss
            )
            .unwrap();
        }
    }
    write_manifest(&ws.data_dir)?;
    Ok(report)
}

fn lambda_name(lambda: f64) -> String {
    format!("{lambda:e}").replace('+', "")
}

/// Checkpoints of one linear objective: `(file stem, Ĉ)`, one per λ for the penalized fits.
fn linear_fits(
    cfg: &ExperimentConfig,
    sys: &LinearSystem,
    data: &crate::linear::LinearDataset,
    obj: Objective,
) -> Result<Vec<(String, DenseMatrix)>, ExperimentError> {
    let name = obj.name().to_ascii_lowercase();
    Ok(match obj {
        Objective::Ols => vec![(name, fit_ols(data, sys)?.c_hat)],
        Objective::Tr | Objective::Mols => cfg
            .linear
            .lambdas
            .iter()
            .map(|&l| {
                let fit = if obj == Objective::Tr { fit_tr(data, sys, l)? } else { fit_mols(data, sys, l)? };
                Ok((format!("{name}_l{}", lambda_name(l)), fit.c_hat))
            })
            .collect::<Result<_, ExperimentError>>()?,
        Objective::Aols => Vec::new(),
    })
}

/// Trains the requested objectives (all configured ones when `objectives` is empty) and writes
/// one checkpoint per objective, setting and seed, plus the training logs.
pub fn train(cfg: &ExperimentConfig, ws: &Workspace, objectives: &[Objective]) -> Result<String, ExperimentError> {
    cfg.validate()?;
    ws.prepare()?;
    let mut report = String::new();
    match cfg.experiment {
        ExperimentKind::LinearToy => {
            let objs = if objectives.is_empty() {
                vec![Objective::Ols, Objective::Mols, Objective::Tr]
            } else {
                objectives.to_vec()
            };
            for &seed in &cfg.seeds {
                let stored = load_linear(ws, seed)?;
                let (sys, mut data) = linear_dataset(cfg, seed)?;
                (data.u, data.y) = linear_matrices(&stored);
                for &obj in &objs {
                    if obj == Objective::Aols {
                        writeln!(report, "{}: aOLS has no linear closed form; skipped", linear_tag(seed)).unwrap();
                        continue;
                    }
                    for (stem, c) in linear_fits(cfg, &sys, &data, obj)? {
                        let path = ws.data_path(&format!("{}_{stem}.bin", linear_tag(seed)));
                        save_model(&SurrogateModel::from_matrix(&c)?, &path)?;
                        writeln!(report, "{}: {stem} written", linear_tag(seed)).unwrap();
                    }
                    if obj == Objective::Ols {
                        let gap = ols_cross_check(&sys, &stored, &data)?;
                        let line = format!("{}: OLS closed form vs gradient fit, relative gap on data {gap:.3e}", linear_tag(seed));
                        let log = ws.data_path(&format!("{}_ols_log.txt", linear_tag(seed)));
                        super::write_text(&log, &format!("{line}\n"))?;
                        writeln!(report, "{line}").unwrap();
                    }
                }
            }
        }
        _ => {
            for setting in settings(cfg) {
                for &seed in &cfg.seeds {
                    let objs = if objectives.is_empty() {
                        setting.training(cfg).objectives.clone()
                    } else {
                        objectives.to_vec()
                    };
                    for obj in objs {
                        ensure_surrogate(cfg, ws, setting, seed, obj, true)?;
                        writeln!(report, "{}: {} trained", setting.tag(seed), obj.name()).unwrap();
                    }
                }
            }
        }
    }
    write_manifest(&ws.data_dir)?;
    Ok(report)
}

fn save_model(m: &SurrogateModel, path: &Path) -> Result<(), ExperimentError> {
    m.save(path).map_err(|e| ExperimentError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// `‖(Ĉ_gd − Ĉ_ols) U‖_F / ‖Ĉ_ols U‖_F` with `Ĉ_gd` from Adam on the same squared loss. The
/// comparison is on the data because off the data subspace the least-squares fit is not unique.
fn ols_cross_check(
    sys: &LinearSystem,
    stored: &TrajectoryDataset,
    data: &crate::linear::LinearDataset,
) -> Result<f64, ExperimentError> {
    let closed = fit_ols(data, sys)?.c_hat;
    let model = SurrogateModel::new(
        SurrogateArch::Linear,
        sys.state_dim(),
        sys.label_dim(),
        &[],
        crate::nn::Activation::Identity,
        Objective::Ols,
        0,
    )?;
    let rm = ResolvedModel::Linear {
        sys: sys.clone(),
        mode: SimMode::DiscreteMap,
    };
    let tc = TrainConfig {
        epochs: 3000,
        lr: 1e-2,
        batch_size: 0,
        patience: 200,
        factor: 0.5,
        seed: 0,
    };
    let out = train_surrogate(model, &rm, None, stored, &tc)?;
    let (r, c) = (sys.label_dim(), sys.state_dim());
    let gd = DenseMatrix::from_vec(r, c, out.model.net.params()[..r * c].to_vec())
        .map_err(|e| ExperimentError::Numeric(e.to_string()))?;
    let reference = closed.mul(&data.u).frobenius_norm();
    Ok(gd.sub(&closed).mul(&data.u).frobenius_norm() / reference)
}

/// Runs each trained surrogate from the held-out initial state(s) and writes
/// `<out>/<tag>_<checkpoint>_run.csv` with columns `step,rel_error,ds`.
pub fn simulate(cfg: &ExperimentConfig, ws: &Workspace, objectives: &[Objective]) -> Result<String, ExperimentError> {
    cfg.validate()?;
    ws.prepare()?;
    let mut report = String::new();
    match cfg.experiment {
        ExperimentKind::LinearToy => {
            let objs = if objectives.is_empty() {
                vec![Objective::Ols, Objective::Mols, Objective::Tr]
            } else {
                objectives.to_vec()
            };
            for &seed in &cfg.seeds {
                let (sys, data) = linear_dataset(cfg, seed)?;
                let rm = ResolvedModel::Linear {
                    sys: sys.clone(),
                    mode: SimMode::DiscreteMap,
                };
                let mut rng = stream_rng(seed, 7);
                let u0 = sys.v_basis.mul_vec(&normal_vec(&mut rng, sys.v_basis.cols(), 1.0));
                let n = cfg.linear.n_steps;
                let truth = simulate_linear(&sys, &sys.c_star, &u0, n, SimMode::DiscreteMap)?;
                for &obj in &objs {
                    for (stem, _) in linear_fits(cfg, &sys, &data, obj)? {
                        let path = ws.data_path(&format!("{}_{stem}.bin", linear_tag(seed)));
                        let model = load_model(&path)?;
                        let run = run_hybrid(&rm, &model, &u0, 0.0, n, DEFAULT_CEILING);
                        let run = evaluate_run(run, &truth, None).map_err(ExperimentError::Numeric)?;
                        let out = ws.out_path(&format!("{}_{stem}_run.csv", linear_tag(seed)));
                        write_run_csv(&out, &run).map_err(|e| ExperimentError::io(&out, e))?;
                        writeln!(report, "{}: {stem} final error {:.3e}", linear_tag(seed), run.final_rel_error()).unwrap();
                    }
                }
            }
        }
        _ => {
            let mut cfg = cfg.clone();
            if !objectives.is_empty() {
                cfg.rd.training.objectives = objectives.to_vec();
                cfg.ns.training.objectives = objectives.to_vec();
            }
            let k = cfg.ns.k_threshold;
            for setting in settings(&cfg) {
                for &seed in &cfg.seeds {
                    for r in evaluate_setting(&cfg, ws, setting, seed)? {
                        writeln!(
                            report,
                            "{}: {} final error {:.3e}, t_K {} (K = {k}), Spearman {:.3}{}",
                            setting.tag(seed),
                            r.objective.name(),
                            r.final_rel_error,
                            r.stopping_time,
                            r.spearman,
                            r.blew_up_at.map(|s| format!(", blew up at step {s}")).unwrap_or_default()
                        )
                        .unwrap();
                    }
                }
            }
        }
    }
    write_manifest(&ws.out_dir)?;
    Ok(report)
}

fn load_model(path: &PathBuf) -> Result<SurrogateModel, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::Dependency(format!("{} not found; run train", path.display())));
    }
    SurrogateModel::load(path).map_err(|e| ExperimentError::Format {
        path: path.clone(),
        msg: e.to_string(),
    })
}
