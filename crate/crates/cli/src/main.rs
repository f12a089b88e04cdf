//! `scenofuzz -cn <name>`: runs one testing campaign described by
//! `<config-dir>/<name>.yaml` and writes its results under
//! `<output_root>/<run_id>/`.

mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use scenofuzz_core::config::{load_config, ConfigError, TestConfig};
use scenofuzz_core::engine::campaign::{run_campaign, CampaignError, RECORDINGS_DIR};
use scenofuzz_core::runner::recording_file_name;
use scenofuzz_core::svg::{export_svg, SvgError};
use thiserror::Error;
use tracing::Level;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, Parser)]
#[command(name = "scenofuzz", version, about = "Search-based scenario testing of driving agents")]
struct Args {
    /// Config name; `-cn` is accepted as a short form.
    #[arg(long = "config-name", short = 'c')]
    config_name: String,
    #[arg(long, default_value = "configs")]
    config_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; overrides `scenario_runner.parameters.worker_pool`.
    #[arg(long)]
    workers: Option<usize>,
    /// Stop after this many evaluations instead of the wall-clock budget.
    #[arg(long)]
    max_evals: Option<usize>,
    /// Write `svg/<id>.svg` for this scenario once the campaign ends.
    #[arg(long, value_name = "SCENARIO_ID")]
    export_svg: Option<String>,
    /// Use (and resume) this run directory name instead of a fresh one.
    #[arg(long)]
    run_id: Option<String>,
    /// Resume the latest unfinished run with the same config and seed.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("config file {0} does not exist")]
    MissingConfig(PathBuf),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("no recording for scenario {0} in this run")]
    UnknownScenario(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::MissingConfig(_) => EXIT_CONFIG,
            CliError::Campaign(CampaignError::Params(_) | CampaignError::Template(_) | CampaignError::Space(_)) => {
                EXIT_CONFIG
            }
            _ => EXIT_RUNTIME,
        }
    }
}

/// Maps the two-letter `-cn` flag onto `--config-name`.
fn normalize_args(args: impl IntoIterator<Item = String>) -> Vec<String> {
    args.into_iter()
        .map(|a| match a.strip_prefix("-cn") {
            Some("") => "--config-name".to_string(),
            Some(rest) if rest.starts_with('=') => format!("--config-name{rest}"),
            _ => a,
        })
        .collect()
}

fn init_logging(debug: bool) {
    let level = if debug { Level::DEBUG } else { Level::INFO };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn config_path(args: &Args) -> PathBuf {
    let p = args.config_dir.join(&args.config_name);
    if p.extension().is_some_and(|e| e == "yaml" || e == "yml") {
        p
    } else {
        args.config_dir.join(format!("{}.yaml", args.config_name))
    }
}

fn load(args: &Args) -> Result<TestConfig, CliError> {
    let path = config_path(args);
    if !path.exists() {
        return Err(CliError::MissingConfig(path));
    }
    load_config(&path).map_err(|source| CliError::Config { path, source })
}

fn run(args: Args, stop: Arc<AtomicBool>) -> Result<bool, CliError> {
    let config = load(&args)?;
    init_logging(config.system.debug);
    if config.scenario_runner.parameters.container_name.is_some() {
        tracing::warn!("scenario_runner.parameters.container_name is ignored by the local runner");
    }
    let path = config_path(&args);
    let mut setup = config
        .campaign_setup(Some(&args.config_dir))
        .map_err(|source| CliError::Config { path, source })?;
    setup.seed = args.seed;
    setup.max_evals = args.max_evals;
    if let Some(w) = args.workers {
        setup.workers = w.max(1);
    }
    setup.stop = Some(stop);

    let root = config.output_root();
    let resume = args.resume || config.system.resume;
    let run_dir = match &args.run_id {
        Some(id) => root.join(id),
        None => match resume.then(|| run_dir::latest_unfinished(&root, setup.algorithm.name, args.seed)).flatten() {
            Some(dir) => dir,
            None => root.join(run_dir::new_run_id(args.seed)),
        },
    };
    setup.resume = resume || args.run_id.is_some();
    std::fs::create_dir_all(&run_dir).map_err(|e| CliError::Io(format!("{}: {e}", run_dir.display())))?;
    tracing::info!("run directory {}", run_dir.display());
    setup.run_dir = Some(run_dir.clone());

    let result = run_campaign(&setup)?;
    println!("{} -> {}", result.report.summary_line(), run_dir.join("report.json").display());

    if let Some(id) = &args.export_svg {
        let recording = run_dir.join(RECORDINGS_DIR).join(recording_file_name(id));
        if !recording.exists() {
            return Err(CliError::UnknownScenario(id.clone()));
        }
        let svg = export_svg(&recording, &run_dir.join("svg"), Some(&args.config_dir))?;
        println!("wrote {}", svg.display());
    }
    Ok(!result.report.interrupted)
}

fn main() -> ExitCode {
    let args = match Args::try_parse_from(normalize_args(std::env::args())) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            eprintln!("interrupt received; finishing in-flight evaluations");
            stop.store(true, Ordering::SeqCst);
        }) {
            eprintln!("warning: cannot install Ctrl-C handler: {e}");
        }
    }
    match run(args, stop.clone()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if stop.load(Ordering::SeqCst) => ExitCode::from(EXIT_INTERRUPTED),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
