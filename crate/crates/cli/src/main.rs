use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

mod commands;
mod config;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "dualtarget",
    version,
    about = "Dual values, PDE oracles and superhedging checks for second order target problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "DUALTARGET_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 1 if any check fails.
    #[arg(long = "assert")]
    assert_checks: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Dual value by dynamic programming on the lattice.
    Dual(Common),
    /// Brute-force enumeration of adapted controls on a tree.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        /// Comma-separated A0 override.
        #[arg(long, value_delimiter = ',')]
        a0: Option<Vec<f64>>,
    },
    /// BSDE under one constant control: lattice and regression Monte Carlo.
    Bsde(Common),
    /// Fully nonlinear PDE and its semilinear slices.
    Pde(Common),
    /// Superhedging report over a family of controls.
    Verify(Common),
    /// Realized quadratic variation and density of a sampled path.
    Qv(Common),
    /// All of the above on one configuration.
    Suite(Common),
}

fn write_manifest(out: &Path, name: &str, text: &str, seed: u64) -> Result<()> {
    fs::write(out.join("config.toml"), text)?;
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    let manifest = format!(
        "command={name}\nconfig_sha256={digest}\nseed={seed}\ndualtarget_version={}\n",
        env!("CARGO_PKG_VERSION")
    );
    fs::write(out.join("manifest.txt"), manifest)?;
    Ok(())
}

enum Failure {
    Invalid(anyhow::Error),
    Checks(Vec<String>),
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let (name, common) = match &cli.command {
        Command::Dual(c) => ("dual", c),
        Command::Oracle { common, .. } => ("oracle", common),
        Command::Bsde(c) => ("bsde", c),
        Command::Pde(c) => ("pde", c),
        Command::Verify(c) => ("verify", c),
        Command::Qv(c) => ("qv", c),
        Command::Suite(c) => ("suite", c),
    };
    let setup = || -> Result<(ExperimentConfig, u64)> {
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        let text =
            fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
        let cfg = ExperimentConfig::parse(&text)?;
        let seed = common.seed.unwrap_or(cfg.run.seed);
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        write_manifest(&common.out, name, &text, seed)?;
        Ok((cfg, seed))
    };
    let (cfg, seed) = setup().map_err(Failure::Invalid)?;
    let out = common.out.as_path();
    let outcome = match &cli.command {
        Command::Dual(_) => commands::dual(&cfg, out),
        Command::Oracle { depth, a0, .. } => commands::oracle(&cfg, *depth, a0.clone()),
        Command::Bsde(_) => commands::bsde(&cfg, out, seed),
        Command::Pde(_) => commands::pde(&cfg, out),
        Command::Verify(_) => commands::verify(&cfg, out, seed),
        Command::Qv(_) => commands::qv(&cfg, out, seed),
        Command::Suite(_) => commands::suite(&cfg, out, seed),
    }
    .map_err(Failure::Invalid)?;
    println!("{}", outcome.line());
    let failed: Vec<String> = outcome.failed().into_iter().map(String::from).collect();
    if common.assert_checks && !failed.is_empty() {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Checks(failed)) => {
            eprintln!("assertion failed: {}", failed.join(", "));
            ExitCode::from(1)
        }
    }
}
