use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ttkinetic::domain::{load_config, SimConfig};
use ttkinetic::experiments::{self, damping_fit, read_energy_series};

/// Environment variable overriding the worker count of every command.
const THREADS_ENV: &str = "TTKINETIC_THREADS";

#[derive(Parser)]
#[command(name = "ttkinetic", version, about = "Low-rank kinetic solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration to t_end and write its artifacts.
    Run {
        config: PathBuf,
        /// Override output_dir from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Final-time error against the exact solution for several time steps.
    Converge {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        dt_list: Vec<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Stepping-loop wall time over several velocity resolutions.
    Scale {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        nv_list: Vec<usize>,
        /// Largest Nx*Nv^3 for which the dense comparison column is produced.
        #[arg(long, default_value_t = 2_000_000)]
        dense_cap: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Damping rate from the electric energy column of a diagnostics file.
    FitDamping {
        csv: PathBuf,
        /// Fit window start time.
        #[arg(long)]
        t_min: Option<f64>,
        /// Fit window end time.
        #[arg(long)]
        t_max: Option<f64>,
    },
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => {
            let n: usize = s.trim().parse().with_context(|| format!("{THREADS_ENV}={s:?} is not a count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be positive");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(THREADS_ENV),
    }
}

fn read_config(path: &Path, output_dir: Option<PathBuf>) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = load_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(n) = threads_from_env()? {
        cfg.threads = Some(n);
    }
    Ok(cfg)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let cfg = read_config(&config, output_dir)?;
            eprintln!(
                "case {} Nx={} Nv={} rank=({}, {}) dt={} steps={}",
                cfg.case,
                cfg.x_grid.nx,
                cfg.v_grid.nv,
                cfg.rank.0,
                cfg.rank.1,
                cfg.dt,
                cfg.n_steps()
            );
            let s = experiments::run_case(&cfg, Some(&config)).context("run failed")?;
            println!("t_final        {}", s.t_final);
            println!("steps          {}", s.steps);
            println!("wall_seconds   {:.3}", s.wall_seconds);
            println!("mass_drift     {:.3e}", s.max_mass_drift);
            if let Some(e) = s.relative_error {
                println!("relative_error {e:.6e}");
            }
            for p in &s.outputs {
                println!("wrote {}", p.display());
            }
        }
        Command::Converge { config, dt_list, output_dir } => {
            let cfg = read_config(&config, output_dir)?;
            let rows = experiments::convergence_study(&cfg, &dt_list, Some(&config)).context("convergence study failed")?;
            println!("{:>12} {:>8} {:>14} {:>8}", "dt", "steps", "rel_error", "order");
            for r in rows {
                println!("{:>12.6e} {:>8} {:>14.6e} {:>8}", r.dt, r.steps, r.relative_error, opt(r.observed_order));
            }
        }
        Command::Scale { config, nv_list, dense_cap, output_dir } => {
            let cfg = read_config(&config, output_dir)?;
            let rows = experiments::scaling_study(&cfg, &nv_list, dense_cap, Some(&config)).context("scaling study failed")?;
            println!("{:>6} {:>12} {:>8} {:>12}", "Nv", "seconds", "ratio", "dense");
            for r in rows {
                println!("{:>6} {:>12.4} {:>8} {:>12}", r.nv, r.wall_seconds, opt(r.ratio), opt(r.dense_wall_seconds));
            }
        }
        Command::FitDamping { csv, t_min, t_max } => {
            let (t, e) = read_energy_series(&csv)?;
            let window = (t_min.is_some() || t_max.is_some())
                .then(|| (t_min.unwrap_or(f64::NEG_INFINITY), t_max.unwrap_or(f64::INFINITY)));
            let fit = damping_fit(&t, &e, window).with_context(|| format!("fitting {}", csv.display()))?;
            println!("gamma          {:.6}", fit.gamma);
            println!("energy_slope   {:.6}", fit.slope);
            println!("peaks          {}", fit.peaks.len());
            println!("rms_residual   {:.3e}", fit.rms_residual);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let setup = threads_from_env().and_then(|n| match n {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool"),
        None => Ok(()),
    });
    match setup.and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
