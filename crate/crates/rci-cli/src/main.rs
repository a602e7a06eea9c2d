//! `rci`: audit how much of a visual benchmark is solvable from single image
//! patches instead of the whole image.
//!
//! Exit codes: 0 success, 1 failure, 2 when the audit ran but at least one
//! granularity is invalid (full-image performance too close to chance for the
//! index to mean anything).

use std::error::Error;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rci_core::client::cache::list_cache_files;
use rci_core::engine::{BootstrapConfig, DEFAULT_DELTA, DEFAULT_RESAMPLES};
use rci_core::pipeline::{load_config, run_audit, run_score, AuditOutcome, ScoreRequest};
use rci_core::report::{
    compare_models, load_report, render_correlation, render_report, write_atomic, ReportFormat,
};
use rci_core::scoring::ScorerId;
use rci_core::synth::{expected_metrics, generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "rci",
    version,
    about = "Region comprehension audits for visual benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full audit: inference (cache-aware), scoring, indices, artifacts
    Audit(AuditArgs),
    /// Re-score a warm inference cache without any model access
    Score(ScoreArgs),
    /// Re-render a stored JSON report in another format
    Report(ReportArgs),
    /// Correlate per-dataset index vectors across model reports
    Compare(CompareArgs),
    /// Generate a synthetic benchmark with a geometric answer oracle
    Synth(SynthArgs),
    /// Inspect or clear inference caches
    Cache(CacheArgs),
}

#[derive(Args)]
struct AuditArgs {
    /// JSON audit config (manifest, model, grids, dirs)
    #[arg(long)]
    config: PathBuf,
    /// Override grid granularities, e.g. 2,3
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<u32>>,
    /// Override repetitions per cell
    #[arg(long)]
    repetitions: Option<u32>,
    /// Override the validity margin delta
    #[arg(long)]
    delta: Option<f64>,
    /// Override the artifact directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Enable bootstrap errors with this many resamples
    #[arg(long, value_name = "RESAMPLES")]
    bootstrap: Option<u32>,
    /// Bootstrap seed (implies --bootstrap with its default resamples)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Benchmark manifest (JSONL)
    #[arg(long)]
    manifest: PathBuf,
    /// Model id the cache was recorded under
    #[arg(long)]
    model_id: String,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Score with this scorer instead of the manifest's
    #[arg(long)]
    scorer: Option<ScorerId>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    grids: Vec<u32>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Repetitions recorded in the cache; probed when omitted
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long, value_name = "RESAMPLES")]
    bootstrap: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Terminal,
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(arg: FormatArg) -> ReportFormat {
        match arg {
            FormatArg::Terminal => ReportFormat::Terminal,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Stored report.json
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Terminal)]
    format: FormatArg,
    /// Write here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Granularity whose index vectors are correlated
    #[arg(long, default_value_t = 2)]
    n: u32,
    /// Write the rendering here as well as stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Two or more report.json files (one model each, same dataset list)
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic benchmark spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Directory receiving images/, manifest.jsonl, oracle.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CacheArgs {
    #[command(subcommand)]
    action: CacheAction,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Per-file record and byte counts
    Stats {
        #[arg(long)]
        cache_dir: PathBuf,
    },
    /// Delete every cache file in the directory
    Clear {
        #[arg(long)]
        cache_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE, which turns `rci ... | head` into a print panic.
    // Restore the default disposition so a closed pipe ends the process the
    // way it does for every other command-line tool.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Box<dyn Error>> {
    match command {
        Command::Audit(args) => cmd_audit(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Cache(args) => cmd_cache(args),
    }
}

fn bootstrap_config(resamples: Option<u32>, seed: Option<u64>) -> Option<BootstrapConfig> {
    if resamples.is_none() && seed.is_none() {
        return None;
    }
    Some(BootstrapConfig {
        resamples: resamples.unwrap_or(DEFAULT_RESAMPLES),
        seed: seed.unwrap_or(0),
    })
}

/// Flag-provided paths are relative to the invocation directory, not the
/// config file.
fn from_cwd(path: PathBuf) -> Result<PathBuf, Box<dyn Error>> {
    if path.is_absolute() {
        Ok(path)
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

fn finish_outcome(outcome: &AuditOutcome) -> Result<ExitCode, Box<dyn Error>> {
    print!("{}", outcome.terminal);
    println!(
        "dispatched {} model call(s), {} served from cache",
        outcome.dispatched, outcome.cache_hits
    );
    for file in &outcome.output_files {
        println!("wrote {}", file.display());
    }
    if outcome.any_invalid {
        eprintln!("warning: at least one granularity is invalid; exiting 2");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_audit(args: AuditArgs) -> Result<ExitCode, Box<dyn Error>> {
    let mut config = load_config(&args.config)?;
    if let Some(grids) = args.grids {
        config.grids = grids;
    }
    if let Some(repetitions) = args.repetitions {
        config.repetitions = repetitions;
    }
    if let Some(delta) = args.delta {
        config.delta = delta;
    }
    if let Some(dir) = args.output_dir {
        config.output_dir = from_cwd(dir)?;
    }
    if let Some(dir) = args.cache_dir {
        config.cache_dir = from_cwd(dir)?;
    }
    if let Some(bootstrap) = bootstrap_config(args.bootstrap, args.seed) {
        config.bootstrap = Some(bootstrap);
    }
    config.validate()?;
    let outcome = run_audit(&config)?;
    finish_outcome(&outcome)
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, Box<dyn Error>> {
    let request = ScoreRequest {
        manifest: from_cwd(args.manifest)?,
        model_id: args.model_id,
        cache_dir: from_cwd(args.cache_dir)?,
        output_dir: from_cwd(args.output_dir)?,
        scorer_override: args.scorer,
        grids: args.grids,
        delta: args.delta,
        bootstrap: bootstrap_config(args.bootstrap, args.seed),
        repetitions: args.repetitions,
    };
    let outcome = run_score(&request)?;
    finish_outcome(&outcome)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, Box<dyn Error>> {
    let report = load_report(&args.input)?;
    let bytes = render_report(&report, args.format.into());
    match args.output {
        Some(path) => {
            write_atomic(&path, &bytes)?;
            println!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Box<dyn Error>> {
    let reports = args
        .reports
        .iter()
        .map(|path| load_report(path))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = compare_models(&reports, args.n)?;
    let rendering = render_correlation(&matrix);
    print!("{rendering}");
    if let Some(path) = args.output {
        write_atomic(&path, rendering.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode, Box<dyn Error>> {
    let spec = SynthSpec::load(&args.spec)?;
    let (manifest, _) = generate(&spec, &args.out_dir)?;
    println!(
        "generated {} item(s) under {}",
        manifest.samples.len(),
        args.out_dir.display()
    );
    let expected = expected_metrics(&spec)?;
    println!(
        "expected fip {} (chance floor {})",
        expected.fip, expected.chance
    );
    if let Some(mpp) = expected.mpp(spec.n_design) {
        let n = spec.n_design;
        match expected.rci(n) {
            Some(rci) => println!("expected mpp_{n} {mpp}, rci_{n} {rci}"),
            None => println!("expected mpp_{n} {mpp}; rci_{n} undefined at fip 0"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(args: CacheArgs) -> Result<ExitCode, Box<dyn Error>> {
    match args.action {
        CacheAction::Stats { cache_dir } => {
            let files = list_cache_files(&cache_dir)?;
            if files.is_empty() {
                println!("no cache files under {}", cache_dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            let mut total_records = 0usize;
            let mut total_bytes = 0u64;
            for path in &files {
                let text = std::fs::read_to_string(path)?;
                let records = text.lines().filter(|l| !l.trim().is_empty()).count();
                let bytes = text.len() as u64;
                total_records += records;
                total_bytes += bytes;
                println!("{}: {records} record(s), {bytes} bytes", path.display());
            }
            println!(
                "total: {} file(s), {total_records} record(s), {total_bytes} bytes",
                files.len()
            );
        }
        CacheAction::Clear { cache_dir } => {
            let files = list_cache_files(&cache_dir)?;
            for path in &files {
                std::fs::remove_file(path)?;
            }
            println!(
                "removed {} cache file(s) from {}",
                files.len(),
                cache_dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
