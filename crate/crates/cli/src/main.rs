mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use chainbound::bounds::SumMode;
use chainbound::chaining::Strategy;
use clap::{Args, Parser, Subcommand};

use crate::commands::{ChainQuery, Format, Output};
use crate::config::{BoundSpec, PhiSpec, RunConfig, SimSpec, SpaceSpec};
use crate::error::{usage, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "chainbound", version, about = "Generic-chaining tail bounds for maxima of random fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,

    /// Preset (singleton, two-point, exampleA, gaussian-se) or a distance matrix file
    #[arg(long)]
    space: Option<String>,

    /// subgaussian, gaussian:VAR, power-type:R or exampleA
    #[arg(long)]
    phi: Option<String>,

    /// Directory receiving the CSV and JSON reports
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Covering-number tail bound on a grid of thresholds
    Bound {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
        /// Comma-separated candidates for C
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        /// Normalized sums: fixed:N or uniform:N
        #[arg(long)]
        sum: Option<String>,
    },
    /// Monte-Carlo tail of the supremum
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// rademacher:K or laplace:K instead of the field behind --space
        #[arg(long)]
        sampler: Option<String>,
        /// Also write the raw suprema (u64 count, then f64 values, little endian)
        #[arg(long)]
        sups: Option<PathBuf>,
    },
    /// Checks that a bound report dominates an empirical tail
    Verify {
        #[arg(long)]
        bound: PathBuf,
        #[arg(long)]
        tail: PathBuf,
        /// Verdict file
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// K profile of a space, or the chain built on one ball
    ChainInspect {
        #[command(flatten)]
        common: Common,
        /// Ball center label
        #[arg(long)]
        center: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_enum, default_value = "dyadic-nets")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0.75)]
        rho: f64,
        /// Thresholds for the admissibility check (JSON output)
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<f64>>,
    },
    /// Natural φ of a sample matrix, or per-column norms under a given φ
    PhiFit {
        /// CSV with a header of labels and one row per replicate
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 60)]
        lambda_points: usize,
        /// Report B(φ) norms under this φ instead of fitting
        #[arg(long)]
        norm: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    DyadicNets,
    GreedyRefine,
}

fn parse_phi(s: &str) -> Result<PhiSpec> {
    let num = |v: &str| v.parse::<f64>().map_err(|_| usage(format!("--phi {s:?}: bad number")));
    Ok(match s.split_once(':') {
        None if s == "subgaussian" => PhiSpec::Subgaussian,
        None if s == "exampleA" => PhiSpec::ExampleA,
        Some(("gaussian", v)) => PhiSpec::Gaussian { variance: num(v)? },
        Some(("power-type", v)) => PhiSpec::PowerType { r: num(v)? },
        _ => return Err(usage(format!("unknown --phi {s:?}"))),
    })
}

fn parse_sum(s: &str) -> Result<SumMode> {
    let (kind, n) = s.split_once(':').ok_or_else(|| usage(format!("--sum {s:?}: expected fixed:N or uniform:N")))?;
    let n: u64 = n.parse().map_err(|_| usage(format!("--sum {s:?}: bad N")))?;
    match kind {
        "fixed" => Ok(SumMode::FixedN(n)),
        "uniform" => Ok(SumMode::UniformInN(n)),
        _ => Err(usage(format!("--sum {s:?}: expected fixed:N or uniform:N"))),
    }
}

fn base_config(common: &Common, name: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(name),
    };
    if let Some(s) = &common.space {
        cfg.space = Some(SpaceSpec::from_arg(s));
    }
    if let Some(p) = &common.phi {
        cfg.phi = parse_phi(p)?;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::Bound { common, u, c, sum } => {
            let mut cfg = base_config(&common, "bound")?;
            if u.is_some() || c.is_some() || sum.is_some() {
                let mut b = cfg.bound.take().unwrap_or(BoundSpec {
                    u_grid: Vec::new(),
                    c_grid: config::default_c_grid(),
                    sum_mode: None,
                });
                if let Some(u) = u {
                    b.u_grid = u;
                }
                if let Some(c) = c {
                    b.c_grid = c;
                }
                if let Some(s) = sum {
                    b.sum_mode = Some(parse_sum(&s)?);
                }
                cfg.bound = Some(b);
            }
            if cfg.space.is_none() {
                return Err(usage("missing --space"));
            }
            cfg.validate()?;
            commands::run_bound(&cfg, common.format)
        }
        Command::Simulate { common, u, replicates, seed, sampler, sups } => {
            let mut cfg = base_config(&common, "simulate")?;
            let mut s = cfg.sim.take();
            if s.is_none() {
                let (Some(replicates), Some(seed)) = (replicates, seed) else {
                    return Err(usage("simulate needs --replicates and --seed (or a sim section)"));
                };
                s = Some(SimSpec { replicates, seed, sampler: None, u_grid: Vec::new() });
            }
            let mut s = s.unwrap();
            if let Some(r) = replicates {
                s.replicates = r;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(u) = u {
                s.u_grid = u;
            }
            if sampler.is_some() {
                s.sampler = sampler;
            }
            cfg.sim = Some(s);
            cfg.validate()?;
            commands::run_simulate(&cfg, common.format, sups.as_deref())
        }
        Command::Verify { bound, tail, out, format } => commands::run_verify(&bound, &tail, format, out.as_deref()),
        Command::ChainInspect { common, center, delta, strategy, rho, u } => {
            let cfg = base_config(&common, "chain")?;
            cfg.validate()?;
            let q = ChainQuery {
                center,
                delta,
                strategy: match strategy {
                    StrategyArg::DyadicNets => Strategy::DyadicNets,
                    StrategyArg::GreedyRefine => Strategy::GreedyRefine,
                },
                rho,
                u_grid: u,
            };
            commands::run_chain_inspect(&cfg, &q, common.format)
        }
        Command::PhiFit { samples, lambda_max, lambda_points, norm, format } => {
            let norm = norm.as_deref().map(parse_phi).transpose()?;
            commands::run_phi_fit(&samples, lambda_max, lambda_points, norm.as_ref(), format)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("CHAINBOUND_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("CHAINBOUND_THREADS={v:?}: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))
}

fn write_files(out: &Output) -> Result<()> {
    for (path, text) in &out.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| run(cli)).and_then(|out| {
        write_files(&out)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            print!("{}", out.text);
            if !out.text.ends_with('\n') {
                println!();
            }
            ExitCode::from(u8::from(out.failed))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
