use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trace_repair::agents::Templates;
use trace_repair::batch::{map_parallel, run_tasks, sweep, sweep_table};
use trace_repair::executor::{Executor, ProcessExecutor, ScriptedExecutor};
use trace_repair::llm::{Backend, BackendConfig, BackendSource};
use trace_repair::metrics::run_report;
use trace_repair::orchestrator::{diff_transcripts, replay_session, SessionConfig, SessionTranscript, Stage};
use trace_repair::purity::{generate_case, load_corpus, purity_study, PurityCase};
use trace_repair::runner::{RunOptions, TraceRunner};
use trace_repair::task::{load_tasks, Task};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Executor(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Executor(_) => 5,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "trace-repair", version, about = "Trace-driven iterative repair of generated programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a repair session per task and write transcripts plus a summary report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a directory of transcripts into a report.
    Eval {
        /// Directory of transcript JSON files.
        #[arg(long)]
        transcripts: PathBuf,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-drive a recorded session offline and diff it against the recording.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// Defaults to the recorded value.
        #[arg(long)]
        max_attempts: Option<usize>,
        /// Defaults to the recorded value.
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Check that instrumentation leaves per-case verdicts unchanged.
    Purity {
        #[command(flatten)]
        common: Common,
        /// JSONL of {task_id, original, instrumented}; without it, pairs are
        /// generated through the backend.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        /// Where to save generated pairs.
        #[arg(long)]
        save_corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the task set over a grid of attempt budgets and patience values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        attempts_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        patience_grid: Vec<usize>,
        /// Rows as JSON; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Task set, one JSON object per line.
    #[arg(long)]
    tasks: PathBuf,
    /// Driver command, e.g. "python3 driver.py".
    #[arg(long, conflicts_with = "scripted_executor")]
    driver: Option<String>,
    /// JSON file of scripted per-case outcomes, used instead of a driver.
    #[arg(long)]
    scripted_executor: Option<PathBuf>,
    /// Per-case timeout in seconds, overriding each task's own.
    #[arg(long)]
    timeout: Option<f64>,
    /// Sessions run concurrently; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, default_value_t = 5)]
    max_attempts: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, conflicts_with = "seed_script")]
    backend_config: Option<PathBuf>,
    /// Scripted-backend response file.
    #[arg(long)]
    seed_script: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            common,
            session,
            backend,
            out,
        } => cmd_run(&common, &session, &backend, &out),
        Command::Eval { transcripts, out } => cmd_eval(&transcripts, out.as_deref()),
        Command::Replay {
            transcript,
            tasks,
            max_attempts,
            patience,
            templates,
        } => cmd_replay(&transcript, &tasks, max_attempts, patience, templates.as_deref()),
        Command::Purity {
            common,
            corpus,
            backend,
            save_corpus,
            out,
        } => cmd_purity(&common, corpus.as_deref(), &backend, save_corpus.as_deref(), out.as_deref()),
        Command::Sweep {
            common,
            backend,
            attempts_grid,
            patience_grid,
            out,
        } => cmd_sweep(&common, &backend, &attempts_grid, &patience_grid, out.as_deref()),
    }
}

fn tasks(path: &Path) -> Result<Vec<Task>> {
    load_tasks(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn templates(dir: Option<&Path>) -> Result<Templates> {
    let t = match dir {
        Some(d) => Templates::load_dir(d).map_err(|e| CliError::Input(e.to_string()))?,
        None => Templates::default(),
    };
    t.check().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(t)
}

fn executor(common: &Common) -> Result<Box<dyn Executor>> {
    match (&common.driver, &common.scripted_executor) {
        (Some(cmd), _) => ProcessExecutor::from_command_line(cmd)
            .map(|e| Box::new(e) as Box<dyn Executor>)
            .ok_or_else(|| CliError::Usage("--driver is empty".into())),
        (None, Some(path)) => ScriptedExecutor::load(path)
            .map(|e| Box::new(e) as Box<dyn Executor>)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        (None, None) => Err(CliError::Usage("one of --driver or --scripted-executor is required".into())),
    }
}

fn runner(common: &Common) -> Result<TraceRunner<Box<dyn Executor>>> {
    if let Some(t) = common.timeout {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage("--timeout must be a positive number of seconds".into()));
        }
    }
    let options = RunOptions {
        timeout_override_s: common.timeout,
        ..RunOptions::default()
    };
    Ok(TraceRunner::with_options(executor(common)?, options))
}

fn backend_source(args: &BackendArgs) -> Result<BackendSource> {
    let config = match (&args.backend_config, &args.seed_script) {
        (Some(path), _) => BackendConfig::load(path).map_err(|e| CliError::Backend(e.to_string()))?,
        (None, Some(script)) => BackendConfig::scripted(script.display().to_string()),
        (None, None) => return Err(CliError::Usage("one of --backend-config or --seed-script is required".into())),
    };
    BackendSource::from_config(&config).map_err(|e| CliError::Backend(e.to_string()))
}

fn session_config(max_attempts: usize, patience: usize) -> Result<SessionConfig> {
    let config = SessionConfig {
        max_attempts,
        patience,
        ..SessionConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| CliError::Input(format!("{}: {e}", path.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Task ids may contain path separators ("HumanEval/0").
fn file_stem(task_id: &str, taken: &mut HashSet<String>) -> String {
    let base: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    let mut stem = base.clone();
    let mut n = 1;
    while !taken.insert(stem.clone()) {
        n += 1;
        stem = format!("{base}-{n}");
    }
    stem
}

/// Exit code for the first session that aborted, if any.
fn abort_code(transcripts: &[SessionTranscript]) -> Option<CliError> {
    transcripts.iter().find_map(|t| {
        let a = t.abort.as_ref()?;
        let msg = format!("task {}: {} failed: {}", t.task_id, a.stage, a.message);
        Some(match a.stage {
            Stage::InitialExecution | Stage::ProbeExecution | Stage::CandidateExecution => CliError::Executor(msg),
            _ => CliError::Backend(msg),
        })
    })
}

fn cmd_run(common: &Common, session: &SessionArgs, backend: &BackendArgs, out: &Path) -> Result<u8> {
    let tasks = tasks(&common.tasks)?;
    let templates = templates(common.templates.as_deref())?;
    let config = session_config(session.max_attempts, session.patience)?;
    let runner = runner(common)?;
    let source = backend_source(backend)?;
    let factory = |t: &Task| source.for_task(&t.task_id);

    let transcripts = run_tasks(&tasks, &config, &templates, &factory, &runner, common.jobs);

    let mut taken = HashSet::new();
    for t in &transcripts {
        let stem = file_stem(&t.task_id, &mut taken);
        let path = out.join("transcripts").join(format!("{stem}.json"));
        write_atomic(&path, format!("{}\n", t.to_json()).as_bytes())?;
    }
    let report = run_report(&transcripts).map_err(|e| CliError::Input(e.to_string()))?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "solved {}/{} (pass@1 {:.2}%), transcripts in {}",
        transcripts.iter().filter(|t| t.is_solved()).count(),
        transcripts.len(),
        report.pass_at_1,
        out.join("transcripts").display()
    );
    match abort_code(&transcripts) {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

fn read_transcript(path: &Path) -> Result<SessionTranscript> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: not a transcript: {e}", path.display())))
}

fn cmd_eval(dir: &Path, out: Option<&Path>) -> Result<u8> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let transcripts = paths.iter().map(|p| read_transcript(p)).collect::<Result<Vec<_>>>()?;
    let report = run_report(&transcripts)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("serializes")),
    }
    Ok(0)
}

fn cmd_replay(
    transcript: &Path,
    tasks_path: &Path,
    max_attempts: Option<usize>,
    patience: Option<usize>,
    templates_dir: Option<&Path>,
) -> Result<u8> {
    let recorded = read_transcript(transcript)?;
    let tasks = tasks(tasks_path)?;
    let task = tasks
        .iter()
        .find(|t| t.task_id == recorded.task_id)
        .ok_or_else(|| CliError::Input(format!("task {} not in {}", recorded.task_id, tasks_path.display())))?;
    let config = SessionConfig {
        max_attempts: max_attempts.unwrap_or(recorded.config.max_attempts),
        patience: patience.unwrap_or(recorded.config.patience),
        ..recorded.config
    };
    let templates = templates(templates_dir)?;
    let replayed = replay_session(&recorded, task, &config, &templates).map_err(|e| CliError::Usage(e.to_string()))?;
    let diff = diff_transcripts(&recorded, &replayed);
    if diff.is_empty() {
        println!("replay matches: {} decisions, status {:?}", replayed.decisions().len(), replayed.final_status);
        Ok(0)
    } else {
        for line in &diff {
            println!("{line}");
        }
        Ok(1)
    }
}

fn cmd_purity(
    common: &Common,
    corpus: Option<&Path>,
    backend: &BackendArgs,
    save_corpus: Option<&Path>,
    out: Option<&Path>,
) -> Result<u8> {
    let tasks = tasks(&common.tasks)?;
    let runner = runner(common)?;
    let cases: Vec<PurityCase> = match corpus {
        Some(path) => load_corpus(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        None => {
            let templates = templates(common.templates.as_deref())?;
            let source = backend_source(backend)?;
            let generated = map_parallel(&tasks, common.jobs, |t| {
                let b: Box<dyn Backend> = source.for_task(&t.task_id);
                generate_case(t, &templates, b.as_ref(), &runner)
            });
            let mut cases = Vec::new();
            for g in generated {
                match g {
                    Ok(Some(c)) => cases.push(c),
                    Ok(None) => {}
                    Err(e @ trace_repair::purity::PurityError::Exec { .. }) => {
                        return Err(CliError::Executor(e.to_string()))
                    }
                    Err(e) => return Err(CliError::Backend(e.to_string())),
                }
            }
            if let Some(path) = save_corpus {
                let text: String = cases
                    .iter()
                    .map(|c| serde_json::to_string(c).expect("serializes") + "\n")
                    .collect();
                write_atomic(path, text.as_bytes())?;
            }
            cases
        }
    };
    let report = purity_study(&cases, &tasks, &runner, common.jobs).map_err(|e| match e {
        trace_repair::purity::PurityError::Exec { .. } => CliError::Executor(e.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("serializes")),
    }
    eprintln!(
        "preserved {}/{} ({:.2}%)",
        report.preserved, report.initially_correct, report.preservation_rate
    );
    Ok(0)
}

fn cmd_sweep(
    common: &Common,
    backend: &BackendArgs,
    attempts_grid: &[usize],
    patience_grid: &[usize],
    out: Option<&Path>,
) -> Result<u8> {
    if attempts_grid.is_empty() || patience_grid.is_empty() {
        return Err(CliError::Usage("grids must not be empty".into()));
    }
    if patience_grid.contains(&0) {
        return Err(CliError::Usage("patience must be at least 1".into()));
    }
    let tasks = tasks(&common.tasks)?;
    let templates = templates(common.templates.as_deref())?;
    let runner = runner(common)?;
    let source = backend_source(backend)?;
    let factory = |t: &Task| source.for_task(&t.task_id);
    let rows = sweep(
        &tasks,
        &SessionConfig::default(),
        attempts_grid,
        patience_grid,
        &templates,
        &factory,
        &runner,
        common.jobs,
    );
    print!("{}", sweep_table(&rows));
    if let Some(path) = out {
        write_json(path, &rows)?;
    }
    Ok(0)
}
