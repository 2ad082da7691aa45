//! RD and NS sweeps: data, indicator, surrogates per objective, closed-loop evaluation.

use std::fmt::Write;
use std::path::PathBuf;

use super::{ExperimentConfig, ExperimentError, ExperimentKind, SurrogateTraining, Workspace};
use crate::manifold::{search_patch_pca, search_pca, AutoencoderModel, DsIndicator, Tiling};
use crate::pde::dataset::{make_ns_dataset, make_rd_dataset, TrajectoryDataset};
use crate::pde::{NsParams, RdParams};
use crate::runtime::{evaluate_run, run_hybrid, spearman, stopping_time, write_run_csv, DEFAULT_CEILING};
use crate::training::{
    train_surrogate, write_training_log, EpochLog, Objective, ResolvedModel, SurrogateArch, SurrogateModel,
    TrainConfig,
};

/// Offset between training and test data seeds.
const TEST_SEED_OFFSET: u64 = 10_000;

/// One physical setting of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdeSetting {
    Rd { gamma: f64 },
    Ns { re: f64 },
}

impl PdeSetting {
    pub fn value(&self) -> f64 {
        match *self {
            PdeSetting::Rd { gamma } => gamma,
            PdeSetting::Ns { re } => re,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            PdeSetting::Rd { gamma } => format!("gamma={gamma}"),
            PdeSetting::Ns { re } => format!("Re={re}"),
        }
    }

    /// File-name stem for artifacts of this setting and seed.
    pub fn tag(&self, seed: u64) -> String {
        match *self {
            PdeSetting::Rd { gamma } => format!("rd_g{gamma}_s{seed}"),
            PdeSetting::Ns { re } => format!("ns_re{re}_s{seed}"),
        }
    }

    fn resolved(&self, cfg: &ExperimentConfig) -> ResolvedModel {
        match *self {
            PdeSetting::Rd { gamma } => ResolvedModel::RdCoarseFine {
                fine: RdParams::new(gamma, cfg.rd.n_fine),
            },
            PdeSetting::Ns { re } => ResolvedModel::NsProjection {
                params: NsParams::new(re, cfg.ns.ny, 0.5),
            },
        }
    }

    pub fn training<'a>(&self, cfg: &'a ExperimentConfig) -> &'a SurrogateTraining {
        match self {
            PdeSetting::Rd { .. } => &cfg.rd.training,
            PdeSetting::Ns { .. } => &cfg.ns.training,
        }
    }

    fn arch(&self, cfg: &ExperimentConfig) -> SurrogateArch {
        match self {
            PdeSetting::Rd { .. } => SurrogateArch::RdPatch { n: cfg.rd.n_fine },
            PdeSetting::Ns { .. } => SurrogateArch::Dense { time_features: true },
        }
    }
}

/// Settings of the configured PDE sweep.
pub fn settings(cfg: &ExperimentConfig) -> Vec<PdeSetting> {
    match cfg.experiment {
        ExperimentKind::RdSweep => cfg.rd.gammas.iter().map(|&gamma| PdeSetting::Rd { gamma }).collect(),
        ExperimentKind::NsSweep => cfg.ns.reynolds.iter().map(|&re| PdeSetting::Ns { re }).collect(),
        ExperimentKind::LinearToy => Vec::new(),
    }
}

fn artifact<T>(
    ws: &Workspace,
    path: PathBuf,
    rebuild: bool,
    hint: &str,
    load: impl FnOnce(&std::path::Path) -> Result<T, ExperimentError>,
    build: impl FnOnce() -> Result<T, ExperimentError>,
    save: impl FnOnce(&T, &std::path::Path) -> Result<(), ExperimentError>,
) -> Result<T, ExperimentError> {
    if !rebuild && path.exists() {
        return load(&path);
    }
    if !rebuild && !ws.auto {
        return Err(ExperimentError::Dependency(format!(
            "{} not found; {hint} or pass --auto",
            path.display()
        )));
    }
    let value = build()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    save(&value, &path)?;
    Ok(value)
}

fn load_dataset(path: &std::path::Path) -> Result<TrajectoryDataset, ExperimentError> {
    TrajectoryDataset::load(path).map_err(|e| ExperimentError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn save_dataset(d: &TrajectoryDataset, path: &std::path::Path) -> Result<(), ExperimentError> {
    d.save(path).map_err(|e| ExperimentError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Training and test trajectories of one setting. Training data are thinned by the configured
/// stride; the test trajectory is kept at full resolution.
pub fn ensure_datasets(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    setting: PdeSetting,
    seed: u64,
    rebuild: bool,
) -> Result<(TrajectoryDataset, TrajectoryDataset), ExperimentError> {
    let tag = setting.tag(seed);
    let hint = "run gen-data";
    let train = artifact(
        ws,
        ws.data_path(&format!("{tag}_train.bin")),
        rebuild,
        hint,
        load_dataset,
        || {
            Ok(match setting {
                PdeSetting::Rd { gamma } => {
                    let r = &cfg.rd;
                    let p = RdParams::new(gamma, r.n_fine);
                    make_rd_dataset(&p, r.train_traj, r.burn_in + r.train_steps, r.burn_in, seed)?.thinned(r.stride)
                }
                PdeSetting::Ns { re } => {
                    let n = &cfg.ns;
                    let p = NsParams::new(re, n.ny, 0.5);
                    make_ns_dataset(&p, n.train_traj, n.burn_in + n.train_steps, n.burn_in, seed)?.thinned(n.stride)
                }
            })
        },
        save_dataset,
    )?;
    let test = artifact(
        ws,
        ws.data_path(&format!("{tag}_test.bin")),
        rebuild,
        hint,
        load_dataset,
        || {
            let s = seed + TEST_SEED_OFFSET;
            Ok(match setting {
                PdeSetting::Rd { gamma } => {
                    let r = &cfg.rd;
                    make_rd_dataset(&RdParams::new(gamma, r.n_fine), 1, r.burn_in + r.test_steps + 1, r.burn_in, s)?
                }
                PdeSetting::Ns { re } => {
                    let n = &cfg.ns;
                    make_ns_dataset(&NsParams::new(re, n.ny, 0.5), 1, n.burn_in + n.test_steps + 1, n.burn_in, s)?
                }
            })
        },
        save_dataset,
    )?;
    Ok((train, test))
}

/// Patch PCA for RD, global PCA for NS, each at the smallest latent size passing the gate.
pub fn ensure_indicator(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    setting: PdeSetting,
    seed: u64,
    rebuild: bool,
) -> Result<DsIndicator, ExperimentError> {
    let tag = setting.tag(seed);
    let model = artifact(
        ws,
        ws.data_path(&format!("{tag}_ae.bin")),
        rebuild,
        "run train-ae",
        |p| {
            let bytes = std::fs::read(p).map_err(|e| ExperimentError::io(p, e))?;
            AutoencoderModel::from_bytes(&bytes).map_err(|e| ExperimentError::Format {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })
        },
        || {
            let (train, _) = ensure_datasets(cfg, ws, setting, seed, false)?;
            Ok(match setting {
                PdeSetting::Rd { .. } => {
                    let tiling = Tiling {
                        nx: cfg.rd.n_fine,
                        ny: cfg.rd.n_fine,
                        channels: 2,
                        tile: cfg.rd.tile,
                    };
                    search_patch_pca(&train.states, tiling, &cfg.rd.latent_candidates)?
                }
                PdeSetting::Ns { .. } => search_pca(&train.states, train.state_len, &cfg.ns.latent_candidates)?,
            })
        },
        |m, p| std::fs::write(p, m.to_bytes()).map_err(|e| ExperimentError::io(p, e)),
    )?;
    Ok(DsIndicator::new(model, ws.force)?)
}

fn objective_file(tag: &str, obj: Objective) -> String {
    format!("{tag}_{}.bin", obj.name().to_ascii_lowercase())
}

/// Trains one surrogate. TR spends the configured warm-start fraction of its epoch budget on
/// plain least squares first; every objective sees the same total number of epochs.
pub fn train_pde_surrogate(
    t: &SurrogateTraining,
    arch: SurrogateArch,
    rm: &ResolvedModel,
    ind: Option<&DsIndicator>,
    data: &TrajectoryDataset,
    obj: Objective,
    seed: u64,
) -> Result<(SurrogateModel, Vec<EpochLog>), ExperimentError> {
    let (lambda, sigma) = match obj {
        Objective::Tr => (t.lambda, 0.0),
        Objective::Mols => (t.mols_lambda, 0.0),
        Objective::Aols => (0.0, t.aols_sigma_frac * std_of(&data.states)),
        Objective::Ols => (0.0, 0.0),
    };
    let base = SurrogateModel::new(arch, data.state_len, data.label_len, &t.hidden, t.activation, obj, seed)?;
    let cfg = |epochs| TrainConfig {
        epochs,
        lr: t.lr,
        batch_size: t.batch_size,
        patience: t.patience,
        factor: t.factor,
        seed,
    };
    let warm = if obj == Objective::Tr {
        (t.epochs as f64 * t.tr_warm_start).round() as usize
    } else {
        0
    };
    let mut log = Vec::with_capacity(t.epochs);
    let mut model = base;
    if warm > 0 {
        let pre = train_surrogate(model.with_objective(Objective::Ols, 0.0, 0.0), rm, None, data, &cfg(warm))?;
        log.extend(pre.log);
        model = pre.model;
    }
    let out = train_surrogate(model.with_objective(obj, lambda, sigma), rm, ind, data, &cfg(t.epochs - warm))?;
    log.extend(out.log.into_iter().map(|mut e| {
        e.epoch += warm;
        e
    }));
    Ok((out.model, log))
}

fn std_of(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

/// Loads or trains the surrogate for one objective; training also writes the epoch log.
pub fn ensure_surrogate(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    setting: PdeSetting,
    seed: u64,
    obj: Objective,
    rebuild: bool,
) -> Result<SurrogateModel, ExperimentError> {
    let tag = setting.tag(seed);
    artifact(
        ws,
        ws.data_path(&objective_file(&tag, obj)),
        rebuild,
        "run train",
        |p| {
            SurrogateModel::load(p).map_err(|e| ExperimentError::Format {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })
        },
        || {
            let (train, _) = ensure_datasets(cfg, ws, setting, seed, false)?;
            let ind = if obj == Objective::Tr {
                Some(ensure_indicator(cfg, ws, setting, seed, false)?)
            } else {
                None
            };
            let rm = setting.resolved(cfg);
            let (model, log) =
                train_pde_surrogate(setting.training(cfg), setting.arch(cfg), &rm, ind.as_ref(), &train, obj, seed)?;
            let log_path = ws.data_path(&format!("{tag}_{}_log.csv", obj.name().to_ascii_lowercase()));
            write_training_log(&log_path, &log).map_err(|e| ExperimentError::io(&log_path, e))?;
            Ok(model)
        },
        |m, p| {
            m.save(p).map_err(|e| ExperimentError::Format {
                path: p.to_path_buf(),
                msg: e.to_string(),
            })
        },
    )
}

/// Closed-loop outcome of one surrogate on the held-out trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub setting: PdeSetting,
    pub seed: u64,
    pub objective: Objective,
    pub final_rel_error: f64,
    pub spearman: f64,
    pub stopping_time: usize,
    pub blew_up_at: Option<usize>,
    pub n_steps: usize,
}

/// Trains (or loads) every configured objective for one setting and seed and runs each on the
/// test trajectory. Per-run curves go to `<out>/<tag>_<objective>_run.csv`.
pub fn evaluate_setting(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    setting: PdeSetting,
    seed: u64,
) -> Result<Vec<RunRecord>, ExperimentError> {
    ws.prepare()?;
    let (_, test) = ensure_datasets(cfg, ws, setting, seed, false)?;
    let ind = ensure_indicator(cfg, ws, setting, seed, false)?;
    let rm = setting.resolved(cfg).for_trajectory(test.traj_params[0]);
    let truth = test.trajectory_states(0);
    let n_steps = truth.len() - 1;
    let k = cfg.ns.k_threshold;
    let mut out = Vec::new();
    for &obj in &setting.training(cfg).objectives {
        let model = ensure_surrogate(cfg, ws, setting, seed, obj, false)?;
        let run = run_hybrid(&rm, &model, &truth[0], test.t0, n_steps, DEFAULT_CEILING);
        let run = evaluate_run(run, &truth, Some(&ind)).map_err(ExperimentError::Numeric)?;
        let path = ws.out_path(&format!("{}_{}_run.csv", setting.tag(seed), obj.name().to_ascii_lowercase()));
        write_run_csv(&path, &run).map_err(|e| ExperimentError::io(&path, e))?;
        out.push(RunRecord {
            setting,
            seed,
            objective: obj,
            final_rel_error: run.final_rel_error(),
            spearman: spearman(&run.rel_error, &run.ds_curve),
            stopping_time: stopping_time(&run.rel_error, k),
            blew_up_at: run.blew_up_at,
            n_steps,
        });
    }
    Ok(out)
}

/// Every setting and seed of the configured sweep. Jobs fan out to `cfg.workers` threads (0
/// means one per available core); records come back in config order either way.
pub fn run_pde_sweep(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<RunRecord>, ExperimentError> {
    let jobs: Vec<(PdeSetting, u64)> = settings(cfg)
        .into_iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let workers = match cfg.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len())
    .max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<Vec<RunRecord>, ExperimentError>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&(setting, seed)) = jobs.get(i) else { break };
                let res = evaluate_setting(cfg, ws, setting, seed);
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    let mut records = Vec::new();
    for slot in slots {
        records.extend(slot.into_inner().unwrap().expect("every job ran")?);
    }
    Ok(records)
}

pub fn write_runs_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("setting,seed,objective,final_rel_error,spearman,stopping_time,blew_up_at\n");
    for r in records {
        let blow = r.blew_up_at.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{:e},{:.6},{},{}",
            r.setting.label(),
            r.seed,
            r.objective.name(),
            r.final_rel_error,
            r.spearman,
            r.stopping_time,
            blow
        )
        .unwrap();
    }
    s
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 || !m.is_finite() {
        return (m, 0.0);
    }
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// `(OLS − TR) / OLS` in percent.
pub fn diff_percent(ols: f64, tr: f64) -> f64 {
    (ols - tr) / ols * 100.0
}

fn values(records: &[RunRecord], value: f64, obj: Objective, f: impl Fn(&RunRecord) -> f64) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.setting.value() == value && r.objective == obj)
        .map(f)
        .collect()
}

fn objectives_in(records: &[RunRecord]) -> Vec<Objective> {
    Objective::ALL
        .into_iter()
        .filter(|o| records.iter().any(|r| r.objective == *o))
        .collect()
}

/// Final relative error, mean ± std over seeds, one row per objective and a `Diff` row.
pub fn rd_table(records: &[RunRecord], gammas: &[f64]) -> String {
    let mut s = String::from("objective");
    for g in gammas {
        write!(s, ",gamma={g}").unwrap();
    }
    s.push('\n');
    for obj in objectives_in(records) {
        s.push_str(obj.name());
        for &g in gammas {
            let (m, sd) = mean_std(&values(records, g, obj, |r| r.final_rel_error));
            write!(s, ",{m:.4e} ± {sd:.2e}").unwrap();
        }
        s.push('\n');
    }
    s.push_str("Diff");
    for &g in gammas {
        let (ols, _) = mean_std(&values(records, g, Objective::Ols, |r| r.final_rel_error));
        let (tr, _) = mean_std(&values(records, g, Objective::Tr, |r| r.final_rel_error));
        write!(s, ",{:.1}%", diff_percent(ols, tr)).unwrap();
    }
    s.push('\n');
    s
}

/// Stopping time, mean ± std over seeds, one row per objective, plus blow-up counts.
pub fn ns_table(records: &[RunRecord], reynolds: &[f64]) -> String {
    let mut s = String::from("objective");
    for re in reynolds {
        write!(s, ",Re={re}").unwrap();
    }
    s.push_str(",blow_ups\n");
    for obj in objectives_in(records) {
        s.push_str(obj.name());
        for &re in reynolds {
            let (m, sd) = mean_std(&values(records, re, obj, |r| r.stopping_time as f64));
            write!(s, ",{m:.1} ± {sd:.1}").unwrap();
        }
        let blows = records.iter().filter(|r| r.objective == obj && r.blew_up_at.is_some()).count();
        writeln!(s, ",{blows}").unwrap();
    }
    s
}

/// Writes the dataset export of a stored dataset as CSV.
pub fn export_dataset_csv(src: &std::path::Path, dst: &std::path::Path) -> Result<(), ExperimentError> {
    let d = load_dataset(src)?;
    d.export_csv(dst).map_err(|e| ExperimentError::Format {
        path: dst.to_path_buf(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(setting: PdeSetting, seed: u64, objective: Objective, err: f64, tk: usize) -> RunRecord {
        RunRecord {
            setting,
            seed,
            objective,
            final_rel_error: err,
            spearman: 1.0,
            stopping_time: tk,
            blew_up_at: None,
            n_steps: 10,
        }
    }

    #[test]
    fn diff_row_arithmetic() {
        assert_eq!(diff_percent(2.0, 1.0), 50.0);
        let g = PdeSetting::Rd { gamma: 0.05 };
        let recs = vec![
            record(g, 0, Objective::Ols, 2.0, 0),
            record(g, 1, Objective::Ols, 2.0, 0),
            record(g, 0, Objective::Tr, 1.0, 0),
            record(g, 1, Objective::Tr, 1.0, 0),
        ];
        let t = rd_table(&recs, &[0.05]);
        assert!(t.lines().last().unwrap() == "Diff,50.0%", "{t}");
        assert!(t.contains("OLS,2.0000e0 ± 0.00e0"));
    }

    #[test]
    fn ns_table_counts() {
        let s = PdeSetting::Ns { re: 200.0 };
        let mut r = record(s, 0, Objective::Ols, 1.0, 4);
        r.blew_up_at = Some(5);
        let t = ns_table(&[r, record(s, 0, Objective::Tr, 1.0, 10)], &[200.0]);
        assert!(t.contains("OLS,4.0 ± 0.0,1"));
        assert!(t.contains("TR,10.0 ± 0.0,0"));
    }

    #[test]
    fn missing_artifacts_are_dependency_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::for_kind(ExperimentKind::RdSweep);
        cfg.data_dir = dir.path().join("data");
        cfg.out_dir = dir.path().join("out");
        let ws = Workspace::new(&cfg);
        let err = ensure_indicator(&cfg, &ws, PdeSetting::Rd { gamma: 0.05 }, 0, false).unwrap_err();
        assert!(matches!(err, ExperimentError::Dependency(_)), "{err}");
    }

    #[test]
    fn small_rd_pipeline_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::for_kind(ExperimentKind::RdSweep);
        cfg.data_dir = dir.path().join("data");
        cfg.out_dir = dir.path().join("out");
        cfg.seeds = vec![0];
        cfg.rd.n_fine = 16;
        cfg.rd.gammas = vec![0.1];
        cfg.rd.burn_in = 5;
        cfg.rd.train_steps = 10;
        cfg.rd.stride = 2;
        cfg.rd.test_steps = 6;
        cfg.rd.training.hidden = vec![4];
        cfg.rd.training.epochs = 4;
        let mut ws = Workspace::new(&cfg);
        ws.auto = true;
        ws.force = true;
        ws.prepare().unwrap();
        let recs = run_pde_sweep(&cfg, &ws).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.n_steps == 6 && r.final_rel_error.is_finite()));
        assert!(ws.data_path("rd_g0.1_s0_tr_log.csv").exists());
        assert!(ws.out_path("rd_g0.1_s0_tr_run.csv").exists());
        // A second pass reuses the stored artifacts and reproduces the records.
        ws.auto = false;
        assert_eq!(run_pde_sweep(&cfg, &ws).unwrap(), recs);
    }
}
