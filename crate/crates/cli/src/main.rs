//! `lbfgs-pi`: train step-size policies, run optimizer comparisons and
//! check gradients. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use lbfgs_pi::harness::{
    export_report, read_summary, read_traces, run_all, summarize, write_summary, ExperimentConfig,
    IndexVariant, Summary, SUMMARY_FILE,
};
use lbfgs_pi::trainer::{epoch_mean, train, write_log};
use lbfgs_pi::{gradcheck, PolicyParams};

const POLICY_FILE: &str = "policy.json";
const TRAIN_LOG_FILE: &str = "train_log.jsonl";
const COMPARE_FILE: &str = "compare.json";
const GRADCHECK_FILE: &str = "gradcheck.json";

#[derive(Debug, Parser)]
#[command(
    name = "lbfgs-pi",
    version,
    about = "L-BFGS with a learned step-size policy"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy on the configured training tasks.
    Train,
    /// Run the configured optimizers on the test tasks and export traces.
    Run {
        /// Policy for `lbfgs_pi` entries that do not name one.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Build a comparison report from an exported trace file.
    Compare {
        /// Trace CSV written by `run`.
        #[arg(long)]
        traces: PathBuf,
        /// Summary written alongside the traces; restores run status and
        /// warm-up flags. Defaults to `summary.json` next to the traces.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the gradient and two-loop oracle suites.
    Gradcheck,
}

/// Failures split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<lbfgs_pi::Error> for Failure {
    fn from(e: lbfgs_pi::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn cmd_train(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let source = cfg
        .train_tasks
        .as_ref()
        .ok_or_else(|| usage("config has no train_tasks"))?;
    let tasks = source.build(cfg.seed)?;
    let init = match &cfg.init_policy {
        Some(path) => PolicyParams::load(path)?,
        None => cfg.fresh_policy()?,
    };
    log::info!(
        "training on {} tasks: k={} t={} epochs={}",
        tasks.len(),
        cfg.train.k,
        cfg.train.t,
        cfg.train.epochs
    );
    let started = Instant::now();
    let outcome = train(&init, &tasks, &cfg.train)?;
    create_out(&cli.out)?;
    let policy_path = cli.out.join(POLICY_FILE);
    let log_path = cli.out.join(TRAIN_LOG_FILE);
    outcome.params.save(&policy_path)?;
    write_log(&log_path, &outcome.log)?;
    let last = cfg
        .train
        .epochs
        .checked_sub(1)
        .and_then(|e| epoch_mean(&outcome.log, e));
    println!(
        "trained {} epochs in {:.1}s, final epoch mean loss {}",
        cfg.train.epochs,
        started.elapsed().as_secs_f64(),
        last.map_or("n/a".to_owned(), |v| format!("{v:.6}"))
    );
    println!("policy: {}", policy_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn cmd_run(cli: &Cli, policy: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let source = cfg
        .test_tasks
        .as_ref()
        .ok_or_else(|| usage("config has no test_tasks"))?;
    let fallback = policy.map(PolicyParams::load).transpose()?.map(Arc::new);
    let specs = cfg
        .optimizers
        .iter()
        .map(|o| o.resolve(fallback.as_ref()))
        .collect::<lbfgs_pi::Result<Vec<_>>>()?;
    let tasks = source.build(cfg.seed.wrapping_add(1))?;
    log::info!(
        "running {} optimizers on {} tasks",
        specs.len(),
        tasks.len()
    );
    let records = run_all(&tasks, &specs, &cfg.stop, cfg.warmup)?;
    let (traces, summary) = export_report(&records, &cli.out, &cfg.report_options())?;
    print_table(&read_summary(&summary)?);
    println!("traces: {}", traces.display());
    println!("summary: {}", summary.display());
    Ok(())
}

fn cmd_compare(cli: &Cli, traces: &Path, summary: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let default_summary = traces.with_file_name(SUMMARY_FILE);
    let summary_path = summary
        .map(Path::to_path_buf)
        .or_else(|| default_summary.is_file().then_some(default_summary));
    let prior = summary_path.as_deref().map(read_summary).transpose()?;
    let records = read_traces(traces, prior.as_ref())?;
    let report = summarize(&records, &cfg.report_options());
    create_out(&cli.out)?;
    let path = cli.out.join(COMPARE_FILE);
    write_summary(&report, &path)?;
    print_table(&report);
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let suites = gradcheck::run_all(cfg.seed)?;
    for s in &suites {
        println!(
            "{} {}: {} cases, worst {:.3e} (tol {:.0e})",
            if s.passed { "ok  " } else { "FAIL" },
            s.name,
            s.cases,
            s.worst,
            s.tolerance
        );
    }
    create_out(&cli.out)?;
    let path = cli.out.join(GRADCHECK_FILE);
    let text = serde_json::to_string_pretty(&suites).context("serializing gradcheck results")?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    if suites.iter().all(|s| s.passed) {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check failed")))
    }
}

fn print_table(summary: &Summary) {
    println!(
        "{} vs competitors (win% / tie% / loss%, clock {:?})",
        summary.reference, summary.clock
    );
    for row in &summary.win_tie {
        let o = &row.outcome;
        println!(
            "  {:<16} eps {:<8.0e} {:>6.1} {:>6.1} {:>6.1}  ({} tasks)",
            row.competitor, row.eps, o.win_pct, o.tie_pct, o.loss_pct, o.tasks
        );
    }
    let mut competitors: Vec<&str> = summary
        .index
        .iter()
        .map(|e| e.competitor.as_str())
        .collect();
    competitors.dedup();
    for comp in competitors {
        let values: Vec<f64> = summary
            .index
            .iter()
            .filter(|e| e.competitor == comp && e.variant == IndexVariant::Min)
            .filter_map(|e| e.value)
            .collect();
        if let Some(m) = lbfgs_pi::harness::median(&values) {
            println!(
                "  median I_{comp} (min) = {m:.4e} over {} tasks",
                values.len()
            );
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Train => cmd_train(cli),
        Command::Run { policy } => cmd_run(cli, policy.as_deref()),
        Command::Compare { traces, summary } => cmd_compare(cli, traces, summary.as_deref()),
        Command::Gradcheck => cmd_gradcheck(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
