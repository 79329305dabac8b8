use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kerrcat::experiments::{self, Experiment, ExperimentConfig};
use kerrcat::tomography::{reconstruct, ReconstructionConfig};
use kerrcat::wigner::WignerDataset;
use kerrcat::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "kerrcat", version, about = "Two-KPO cat-state experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        /// cat_gen, bell_fock, fock_to_cat, two_cat_gate or tomography
        experiment: Experiment,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set params.t1_1=100`
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for shot sampling and tomography restarts.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 4 if any acceptance check fails.
        #[arg(long)]
        check: bool,
    },
    /// Calibrate a drive amplitude and print the matching `--set` assignment.
    Calibrate {
        target: CalibrationTarget,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Reconstruct a density matrix from a Wigner dataset manifest.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        /// Reconstruction dimensions, e.g. `8,8`
        #[arg(long, value_parser = parse_dims)]
        dims: [usize; 2],
        /// TOML file with reconstruction settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "reconstruction")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Reference state (ket or density matrix) for the fidelity report
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, value_parser = parse_dims)]
        target_dims: Option<[usize; 2]>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrationTarget {
    BellAmp,
    GateAmp,
}

fn threads() -> Option<usize> {
    std::env::var("KERRCAT_THREADS").ok().and_then(|v| v.parse().ok())
}

fn parse_dims(s: &str) -> Result<[usize; 2], String> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    <[usize; 2]>::try_from(v).map_err(|v| format!("expected two comma-separated dimensions, got {}", v.len()))
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { experiment, config, set, out, seed, check } => {
            let mut cfg = ExperimentConfig::load(config.as_deref(), &set)?;
            cfg.experiment = Some(experiment);
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.reseed(s);
            }
            let report = experiments::run(&cfg, threads())?;
            for (k, v) in &report.metrics {
                println!("{k} = {v}");
            }
            for c in &report.checks {
                println!("{} {} = {} (window [{}, {}])", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.value, c.lo, c.hi);
            }
            println!("artifacts: {}", report.output_dir.display());
            Ok(if check && !report.passed() { EXIT_CHECK } else { 0 })
        }
        Command::Calibrate { target, config, set } => {
            let cfg = ExperimentConfig::load(config.as_deref(), &set)?;
            let cal = match target {
                CalibrationTarget::BellAmp => experiments::calibrate_bell_amplitude(&cfg)?,
                CalibrationTarget::GateAmp => experiments::calibrate_gate_amplitude(&cfg)?,
            };
            println!("{}", cal.assignment());
            println!("fidelity = {}", cal.fidelity);
            Ok(0)
        }
        Command::Reconstruct { dataset, dims, config, out, seed, target, target_dims } => {
            let mut rc: ReconstructionConfig = match config {
                Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
                None => ReconstructionConfig::default(),
            };
            rc.dims = dims;
            if let Some(s) = seed {
                rc.seed = s;
            }
            let ds = WignerDataset::read_manifest(&dataset)?;
            let truth = match target {
                Some(path) => Some(experiments::read_state_file(&path, target_dims.unwrap_or(dims))?),
                None => None,
            };
            let res = reconstruct(&ds, &rc, truth.as_ref())?;
            res.write_report(&out, &rc)?;
            println!("loss = {}", res.loss);
            println!("iterations = {}", res.iterations);
            if let Some(f) = res.fidelity {
                println!("fidelity = {f}");
            }
            println!("artifacts: {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input() { EXIT_CONFIG } else { EXIT_NUMERIC })
        }
    }
}
