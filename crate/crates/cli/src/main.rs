use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlhs::experiment::{
    gen_data, run_experiment, simulate, train, train_ae, verify_manifest, ExperimentConfig, ExperimentError, ExperimentKind,
    Workspace, MANIFEST_NAME,
};
use mlhs::training::Objective;

#[derive(Parser, Debug)]
#[command(name = "mlhs", version, about = "Hybrid simulation with tangent-space regularized surrogates")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Experiment to run, overriding the config file.
    #[arg(long, global = true, value_parser = parse_kind, value_name = "KIND")]
    experiment: Option<ExperimentKind>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Build missing datasets, indicators and checkpoints on demand.
    #[arg(long, global = true)]
    auto: bool,
    /// Use the full-size grids and parameter lists (hours of compute).
    #[arg(long, global = true)]
    full: bool,
    /// Accept an indicator whose reconstruction error misses the 1e-3 gate.
    #[arg(long, global = true)]
    force: bool,
    /// Print the default configuration for KIND (linear_toy, rd_sweep, ns_sweep) and exit.
    #[arg(long, value_name = "KIND", num_args = 0..=1, default_missing_value = "linear_toy", value_parser = parse_kind)]
    print_defaults: Option<ExperimentKind>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the training and test datasets.
    GenData {
        /// Also write each dataset as CSV into this directory.
        #[arg(long, value_name = "PATH")]
        export_csv: Option<PathBuf>,
    },
    /// Fit the distribution-shift indicators.
    TrainAe,
    /// Train surrogates for the configured objectives.
    Train {
        /// Train only these objectives (ols, mols, aols, tr).
        #[arg(long, value_parser = parse_objective, value_delimiter = ',')]
        objective: Vec<Objective>,
    },
    /// Run trained surrogates in closed loop on the held-out data.
    Simulate {
        #[arg(long, value_parser = parse_objective, value_delimiter = ',')]
        objective: Vec<Objective>,
    },
    /// Run the whole experiment and print its summary table.
    Experiment,
    /// Re-hash the data and result directories against their manifests.
    Verify {
        /// Directories to check; defaults to the configured data and output directories.
        dirs: Vec<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    match s {
        "linear_toy" => Ok(ExperimentKind::LinearToy),
        "rd_sweep" => Ok(ExperimentKind::RdSweep),
        "ns_sweep" => Ok(ExperimentKind::NsSweep),
        _ => Err(format!("unknown experiment `{s}`; expected linear_toy, rd_sweep or ns_sweep")),
    }
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    Objective::parse(s).ok_or_else(|| format!("unknown objective `{s}`; expected ols, mols, aols or tr"))
}

fn exit_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Config(_) | ExperimentError::Io { .. } => 2,
        ExperimentError::Dependency(_) | ExperimentError::Format { .. } => 3,
        ExperimentError::Numeric(_) => 4,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match (&cli.config, cli.experiment) {
        (Some(path), kind) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(k) = kind {
                cfg.experiment = k;
            }
            cfg
        }
        (None, kind) => ExperimentConfig::for_kind(kind.unwrap_or(ExperimentKind::LinearToy)),
    };
    if cli.full {
        eprintln!("warning: --full runs the full-size sweeps; expect many hours of compute");
        cfg = cfg.full_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn verify(cfg: &ExperimentConfig, dirs: &[PathBuf]) -> Result<bool, ExperimentError> {
    let dirs = if dirs.is_empty() {
        [&cfg.data_dir, &cfg.out_dir]
            .into_iter()
            .filter(|d| d.join(MANIFEST_NAME).exists())
            .cloned()
            .collect::<Vec<_>>()
    } else {
        dirs.to_vec()
    };
    if dirs.is_empty() {
        return Err(ExperimentError::Dependency(format!(
            "no {MANIFEST_NAME} in {} or {}",
            cfg.data_dir.display(),
            cfg.out_dir.display()
        )));
    }
    let mut ok = true;
    for dir in dirs {
        let problems = verify_manifest(&dir)?;
        if problems.is_empty() {
            println!("{}: ok", dir.display());
        } else {
            ok = false;
            for p in problems {
                println!("{}: {p}", dir.display());
            }
        }
    }
    Ok(ok)
}

fn run(cli: &Cli) -> Result<ExitCode, ExperimentError> {
    if let Some(kind) = cli.print_defaults {
        print!("{}", ExperimentConfig::for_kind(kind).to_toml_string());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = &cli.command else {
        return Err(ExperimentError::Config("no subcommand given; see --help".into()));
    };
    let cfg = load_config(cli)?;
    let mut ws = Workspace::new(&cfg);
    ws.auto = cli.auto;
    ws.force = cli.force;
    let report = match command {
        Command::GenData { export_csv } => gen_data(&cfg, &ws, export_csv.as_deref())?,
        Command::TrainAe => train_ae(&cfg, &ws)?,
        Command::Train { objective } => train(&cfg, &ws, objective)?,
        Command::Simulate { objective } => simulate(&cfg, &ws, objective)?,
        Command::Experiment => run_experiment(&cfg, &ws)?,
        Command::Verify { dirs } => {
            return Ok(if verify(&cfg, dirs)? { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    };
    print!("{report}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
