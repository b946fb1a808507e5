use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fc2t2_cli::config::{Overrides, RunConfig};
use fc2t2_cli::{checks, commands};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fc2t2", version, about = "Fast continuous convolutional Taylor transform: fitting, rendering and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Finest grid level
    #[arg(long, global = true)]
    levels: Option<u32>,
    /// Taylor order
    #[arg(long, global = true)]
    rho: Option<usize>,
    /// Gaussian kernel sharpness
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Least-squares M2L tables
    #[arg(long, global = true)]
    lsq: Option<OnOff>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to FC2T2_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Precision of the M2L contraction: 32 or 64
    #[arg(long, global = true)]
    precision: Option<u32>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a signed distance field with the explicit layer
    FitSdf,
    /// Fit ray lengths with the depth layer
    FitDepth,
    /// Train a radiance field with the volumetric layer
    FitRadiance,
    /// Render depth, normal or color images from a checkpoint
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the oracle suite; exits nonzero on any failure
    Verify {
        /// Test hook: corrupt a translation operator to see the suite fail
        #[arg(long, hide = true, value_parser = ["l2l-sign"])]
        inject_fault: Option<String>,
    },
    /// Time expansions, queries and renders and count their FLOPs
    Bench,
}

fn config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        levels: g.levels,
        rho: g.rho,
        alpha: g.alpha,
        lsq: g.lsq.map(|v| matches!(v, OnOff::On)),
        seed: g.seed,
        threads: g.threads,
        precision: g.precision,
        out: g.out.clone(),
    })?;
    cfg.threads = fc2t2_cli::resolve_threads(cfg.threads)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = config(&cli.global)?;
    fc2t2_cli::init_threads(cfg.threads)?;
    let print = |v: &dyn erased::Json| println!("{}", v.json());
    match cli.command {
        Command::FitSdf => print(&commands::fit_sdf(&cfg)?),
        Command::FitDepth => print(&commands::fit_depth(&cfg)?),
        Command::FitRadiance => print(&commands::fit_radiance(&cfg)?),
        Command::Render { checkpoint } => print(&commands::render(&cfg, &checkpoint)?),
        Command::Bench => {
            println!("{}", commands::BENCH_HEADER);
            for r in commands::bench(&cfg)? {
                println!("{}", r.csv());
            }
        }
        Command::Verify { inject_fault } => {
            match inject_fault.as_deref() {
                Some("l2l-sign") => fc2t2::expansion::inject_l2l_sign_fault(true),
                Some(other) => bail!("unknown fault {other}"),
                None => {}
            }
            let reports = checks::run_all(|_, r| println!("{}", r.line()));
            let failed = reports.iter().filter(|(_, r)| !r.pass).count();
            eprintln!("{} checks, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

mod erased {
    pub trait Json {
        fn json(&self) -> String;
    }
    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string_pretty(self).unwrap_or_default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
