use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grouse_core::bounds::BoundParams;
use grouse_core::step::StepMode;
use grouse_harness::config::{load_configs, ExperimentConfig};
use grouse_harness::error::{HarnessError, Result};
use grouse_harness::sweep::run_sweep;
use grouse_harness::table::{bounds_table, write_bounds_csv};
use grouse_harness::trajectory::{run_trajectory, write_trajectory_csv};
use grouse_harness::verify::{verify, Intensity, Suite, VerifyOptions};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "grouse", version, about = "GROUSE subspace estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of a single config and write their trajectories.
    Run(RunArgs),
    /// Run a grid of configs from a JSON file and summarize the phase counts.
    Sweep(SweepArgs),
    /// Tabulate mu0, K1, K2 and K.
    Bounds(BoundsArgs),
    /// Run the property suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags given on the command line override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "sigma2")]
    sigma_sq: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    eps_star: Option<f64>,
    #[arg(long)]
    mode: Option<StepMode>,
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for per-trial CSVs and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON array of configs.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the first config's `threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Replaces every config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for summary.csv, trials.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// JSON array of parameter sets; replaces the flag grid.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "200")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    d: Vec<usize>,
    #[arg(long = "sigma2", default_value_t = 0.0)]
    sigma_sq: f64,
    #[arg(long, default_value_t = 1e-4)]
    eps_star: f64,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    rho_prime: f64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Intensity::Quick)]
    intensity: Intensity,
    /// Scales the greedy step angle in the step suite (negative control).
    #[arg(long, default_value_t = 1.0, hide = true)]
    theta_scale: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    body(&mut out).and_then(|_| out.flush()).map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value).map_err(io::Error::other)?;
        writeln!(out)
    })
}

fn run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_configs(path)?.remove(0),
        None => match (args.n, args.d) {
            (Some(n), Some(d)) => ExperimentConfig::new(n, d),
            _ => return Err(HarnessError::Config("run needs --n and --d, or --config".into())),
        },
    };
    macro_rules! set {
        ($($field:ident <- $arg:expr),*) => { $(if let Some(v) = $arg { cfg.$field = v; })* };
    }
    set!(n <- args.n, d <- args.d, sigma_sq <- args.sigma_sq, trials <- args.trials, seed <- args.seed,
         eps_star <- args.eps_star, mode <- args.mode, c <- args.c, threads <- args.threads);
    if args.max_iters.is_some() {
        cfg.max_iters = args.max_iters;
    }
    if args.record_every.is_some() {
        cfg.record_every = args.record_every;
    }
    if args.sparse {
        cfg.sparse_ubar = true;
    }
    if let Some(out) = &args.out {
        cfg.out_path = Some(out.display().to_string());
    }
    cfg.validate()?;
    cfg.resolved()
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = run_config(&args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| {
        (0..cfg.trials as u64).into_par_iter().map(|id| run_trajectory(&cfg, id)).collect::<Result<Vec<_>>>()
    })?;

    if let Some(dir) = cfg.out_path.as_deref().map(Path::new) {
        for (result, points) in &runs {
            let path = dir.join(format!("trial_{:04}.csv", result.trial_id));
            write_file(&path, |out| write_trajectory_csv(out, &cfg, result, points))?;
        }
        let results: Vec<_> = runs.iter().map(|(r, _)| r).collect();
        write_json(&dir.join("summary.json"), &serde_json::json!({ "config": cfg, "trials": results }))?;
    }
    println!("trial,derived_seed,k1,k2,final_zeta,final_eps,iters_run,skipped_steps");
    let opt = |v: Option<u64>| v.map_or("-".to_string(), |k| k.to_string());
    for (r, _) in &runs {
        println!(
            "{},{},{},{},{:.6e},{:.6e},{},{}",
            r.trial_id,
            r.derived_seed,
            opt(r.phase.k1),
            opt(r.phase.k2),
            r.final_zeta,
            r.final_eps,
            r.iters_run,
            r.skipped_steps
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut grid = load_configs(&args.config)?;
    if let Some(seed) = args.seed {
        grid.iter_mut().for_each(|c| c.seed = seed);
    }
    let threads = args.threads.unwrap_or(grid[0].threads);
    let report = run_sweep(&grid, threads)?;
    match &args.out {
        Some(dir) => {
            write_file(&dir.join("summary.csv"), |out| report.write_summary_csv(out))?;
            write_file(&dir.join("trials.csv"), |out| report.write_trials_csv(out))?;
            write_json(&dir.join("summary.json"), &report)?;
        }
        None => report.write_summary_csv(io::stdout().lock()).map_err(|e| HarnessError::io("<stdout>", e))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(args: BoundsArgs) -> Result<ExitCode> {
    let params: Vec<BoundParams> = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|source| HarnessError::Json { path: path.display().to_string(), source })?
        }
        None => args
            .n
            .iter()
            .flat_map(|&n| args.d.iter().map(move |&d| (n, d)))
            .map(|(n, d)| {
                BoundParams::new(n, d)
                    .with_sigma_sq(args.sigma_sq)
                    .with_eps_star(args.eps_star)
                    .with_rho(args.rho, args.rho_prime)
            })
            .collect(),
    };
    let rows = bounds_table(&params);
    match &args.out {
        Some(path) => write_file(path, |out| write_bounds_csv(out, &rows))?,
        None => write_bounds_csv(io::stdout().lock(), &rows).map_err(|e| HarnessError::io("<stdout>", e))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let opts = VerifyOptions { theta_scale: args.theta_scale, ..VerifyOptions::new(args.suite, args.seed, args.intensity) };
    let report = verify(&opts)?;
    for r in &report.results {
        println!("{r}");
    }
    for note in &report.notes {
        println!("NOTE {note}");
    }
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    if report.passed() {
        println!("all {} properties passed", report.results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&str> = report.failures().map(|r| r.check.name.as_str()).collect();
        eprintln!("{} of {} properties failed: {}", failed.len(), report.results.len(), failed.join("; "));
        Ok(ExitCode::from(2))
    }
}
