use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seqrmc::config::{Method, RunConfig};
use seqrmc::density::{DensityModel, KernelDensity};
use seqrmc::exec::Execution;
use seqrmc::experiment::{dump_fit_grid, run_experiment, run_once, GridSpec};
use seqrmc::model::ModelSpec;
use seqrmc::oracle::binomial_oracle;
use seqrmc::rmc::{RunReport, BOX_QUANTILES};

#[derive(Parser)]
#[command(name = "seqrmc", version, about = "Sequential-design regression Monte Carlo for Bermudan options")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for result files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the method: dt, bw or lsmc.
    #[arg(long)]
    method: Option<Method>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run: fit the stopping rule and value it out of sample.
    Price(Common),
    /// All replications with a summary row, written as CSV.
    Bench(Common),
    /// Binomial-lattice reference price and boundary (1-d GBM puts).
    Oracle(Common),
    /// Fit, then write the timing-value fit on a grid at one step.
    Dump {
        #[command(flatten)]
        common: Common,
        /// Exercise step to dump, in 1..T-1.
        #[arg(long)]
        step: usize,
        /// Grid nodes per axis.
        #[arg(long)]
        points: Option<usize>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(m) = common.method {
        cfg.design.method = m;
    }
    if let Some(out) = &common.out {
        cfg.run.out = Some(out.display().to_string());
    }
    cfg.validate()?;
    if let Some(j) = common.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    Ok(cfg)
}

fn stem(common: &Common) -> String {
    common.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>> {
    match &cfg.run.out {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn print_report(r: &RunReport) {
    println!(
        "method={} N_t={} seed={} value={:.6} se={:.6} totsim={} wall_ms={}",
        r.method, r.budget, r.seed, r.value, r.std_error, r.totsim, r.wall_ms
    );
    if r.clamps > 0 {
        println!("positivity clamps: {}", r.clamps);
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn price(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let out = run_once(&cfg, &cfg.settings(0))?;
    print_report(&out.report);
    if let Some(dir) = out_dir(&cfg)? {
        let r = &out.report;
        let csv = format!(
            "{}\n{},{},{},{},{},{},{}\n",
            seqrmc::experiment::CSV_HEADER,
            r.method,
            r.budget,
            r.seed,
            r.value,
            r.std_error,
            r.totsim,
            r.wall_ms
        );
        write(&dir.join(format!("{}_{}_price.csv", stem(common), cfg.design.method)), &csv)?;
    }
    Ok(())
}

fn bench(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let res = run_experiment(&cfg, Execution::Parallel)?;
    for r in &res.reports {
        print_report(r);
    }
    for (k, e) in &res.failures {
        eprintln!("replication {k} failed: {e}");
    }
    if let Some(s) = &res.summary {
        println!("summary runs={} mean={:.6} se={:.6} mean_totsim={:.0}", s.runs, s.mean, s.se, s.mean_totsim);
    }
    if let Some(dir) = out_dir(&cfg)? {
        write(&dir.join(format!("{}_{}.csv", stem(common), cfg.design.method)), &res.to_csv())?;
    }
    Ok(res.succeeded())
}

fn oracle(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let spec = cfg.oracle.unwrap_or_default();
    let res = binomial_oracle(&cfg.problem()?, &spec)?;
    println!("price={:.6} steps_per_interval={} last_change={:.2e}", res.price, res.steps_per_interval, res.last_change);
    let mut table = String::from("step\ttime\tboundary\n");
    for (t, b) in res.boundary.iter().enumerate() {
        let b = b.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        table.push_str(&format!("{t}\t{}\t{b}\n", t as f64 * cfg.payoff.dt));
    }
    match out_dir(&cfg)? {
        Some(dir) => write(&dir.join(format!("{}_oracle.tsv", stem(common))), &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn dump(common: &Common, step: usize, points: Option<usize>) -> Result<()> {
    let cfg = load(common)?;
    let problem = cfg.problem()?;
    if step == 0 || step >= problem.horizon {
        bail!("--step must lie in 1..{}", problem.horizon - 1);
    }
    let out = run_once(&cfg, &cfg.settings(0))?;
    print_report(&out.report);
    let d = problem.dim();
    let density = match &problem.model {
        ModelSpec::Gbm(p) if p.vol > 0.0 => DensityModel::Lognormal { spot: problem.initial.0.clone(), rate: p.rate, vol: p.vol },
        _ => DensityModel::Kernel(KernelDensity::silverman(out.designs[step - 1].sites.clone(), d)?),
    };
    let bounds = density.support_box(problem.time(step), BOX_QUANTILES.0, BOX_QUANTILES.1)?;
    let n = points.unwrap_or_else(|| (20_000f64.powf(1.0 / d as f64) as usize).clamp(2, 201));
    let grid = GridSpec { lo: bounds.iter().map(|b| b.0).collect(), hi: bounds.iter().map(|b| b.1).collect(), points: vec![n; d] };
    let table = dump_fit_grid(&out.stack, &problem, step, &grid)?;
    match out_dir(&cfg)? {
        Some(dir) => write(&dir.join(format!("{}_{}_step{step}.tsv", stem(common), cfg.design.method)), &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Price(c) => price(c).map(|_| true),
        Command::Bench(c) => bench(c),
        Command::Oracle(c) => oracle(c).map(|_| true),
        Command::Dump { common, step, points } => dump(common, *step, *points).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
