use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use floquet_sobolev::harness::{self, ExperimentConfig, Outcome, ParamPack, Scenario};
use floquet_sobolev::potential::AnalyticPotential;

/// Sobolev-growth and Floquet experiments for the linear Schrödinger equation on the circle.
#[derive(Parser)]
#[command(name = "sobolev-lab", version)]
struct Cli {
    /// Seed for every random draw (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Parameter pack: `strict` or `desk`.
    #[arg(long, global = true)]
    params: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One growth run.
    Simulate {
        /// Experiment JSON; the quasi-periodic scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e4)]
        t_final: f64,
    },
    /// Assemble and diagonalize the Floquet operator; exports spectrum and triplets.
    Floquet {
        /// Potential JSON; the built-in quasi-periodic potential when omitted.
        #[arg(long)]
        potential: Option<PathBuf>,
    },
    /// Localization report for every converged eigenvector.
    Localize {
        #[arg(long)]
        potential: Option<PathBuf>,
    },
    /// Commutator, tail and flow-commutator scaling in the cutoff.
    Estimates,
    /// Scenario table; the built-in scenario set when no configs are given.
    Compare {
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e4)]
        t_final: f64,
    },
    /// Two-column files from a growth CSV.
    PlotData { input: PathBuf },
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    apply_flags(&mut cfg, cli);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &cli.params {
        cfg.params = p.clone();
    }
}

fn load_potential(path: &Option<PathBuf>) -> Result<AnalyticPotential> {
    match path {
        None => Ok(harness::quasi_periodic_potential()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(AnalyticPotential::from_json(&text)?)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let out = &cli.out_dir;
    let floquet_pack = || ParamPack::by_name(cli.params.as_deref().unwrap_or("desk"));
    Ok(match &cli.cmd {
        Cmd::Simulate { config, t_final } => {
            let cfg = match config {
                Some(p) => load_config(p, cli)?,
                None => {
                    let mut c = ExperimentConfig::new(
                        "quasi-periodic",
                        Scenario::QuasiPeriodic { potential: None },
                        vec![0.0, 1.0],
                        *t_final,
                    );
                    apply_flags(&mut c, cli);
                    c.validate()?;
                    c
                }
            };
            harness::cmd_simulate(&cfg, out)?
        }
        Cmd::Floquet { potential } => harness::cmd_floquet(&load_potential(potential)?, &floquet_pack()?, out)?,
        Cmd::Localize { potential } => harness::cmd_localize(&load_potential(potential)?, &floquet_pack()?, out)?,
        Cmd::Estimates => harness::cmd_estimates(out)?,
        Cmd::Compare { configs, t_final } => {
            let cfgs = if configs.is_empty() {
                let mut v = harness::default_scenarios(*t_final, 0, "strict");
                v.iter_mut().for_each(|c| apply_flags(c, cli));
                v
            } else {
                configs.iter().map(|p| load_config(p, cli)).collect::<Result<_>>()?
            };
            harness::cmd_compare(&cfgs, out)?
        }
        Cmd::PlotData { input } => harness::cmd_plot_data(input, out)?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("  wrote {}", f.display());
            }
            if !outcome.invariant_ok {
                eprintln!("invariant violated");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
