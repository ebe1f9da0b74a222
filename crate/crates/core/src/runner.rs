//! TraceRunner: executes candidate programs against a task's cases, classifies
//! verdicts, and assembles the runtime trace fed to analysis.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::driver::DriverVerdict;
use crate::executor::{code_digest, Executor, ExecutorError, Limits, RawCaseRun};
use crate::task::Task;

pub const DEBUG_PREFIX: &str = "DEBUG:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    WrongAnswer,
    RuntimeError,
    Timeout,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::WrongAnswer => "WRONG_ANSWER",
            Verdict::RuntimeError => "RUNTIME_ERROR",
            Verdict::Timeout => "TIMEOUT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecResult {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub verdict: Verdict,
    /// Exception type and message, or the assertion message. Empty on PASS.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub result: ExecResult,
    pub case_outcomes: Vec<CaseOutcome>,
    pub passed_count: usize,
    pub total_count: usize,
    pub trace: String,
    pub error_feedback: String,
    pub wall_time_ms: u64,
}

impl ExecutionReport {
    pub fn is_success(&self) -> bool {
        self.result == ExecResult::Success
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.case_outcomes.iter().map(|c| c.verdict).collect()
    }
}

/// Failure taxonomy used in error breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureClass {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "RE")]
    RuntimeError,
    #[serde(rename = "WA")]
    WrongAnswer,
    #[serde(rename = "TLE")]
    TimeLimitExceeded,
}

/// Priority TLE > RE > WA.
pub fn classify_failure(report: &ExecutionReport) -> FailureClass {
    if report.is_success() {
        return FailureClass::Pass;
    }
    let has = |v: Verdict| report.case_outcomes.iter().any(|c| c.verdict == v);
    if has(Verdict::Timeout) {
        FailureClass::TimeLimitExceeded
    } else if has(Verdict::RuntimeError) {
        FailureClass::RuntimeError
    } else {
        FailureClass::WrongAnswer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceBudget {
    pub max_lines: usize,
    pub max_chars: usize,
}

impl Default for TraceBudget {
    fn default() -> Self {
        Self {
            max_lines: 200,
            max_chars: 8_000,
        }
    }
}

fn line_cost(line: &str) -> usize {
    line.chars().count() + 1
}

fn clip_line(line: &str, max_chars: usize) -> String {
    if line.chars().count() <= max_chars {
        return line.to_string();
    }
    let mut out: String = line.chars().take(max_chars.saturating_sub(14)).collect();
    out.push_str(" …[truncated]");
    out
}

/// Drops lines until `window` fits in `max_chars`. Non-DEBUG lines go first,
/// starting from the end adjacent to the elision point.
fn shrink_window(window: &mut Vec<String>, max_chars: usize, from_back: bool) -> usize {
    let mut dropped = 0;
    while window.iter().map(|l| line_cost(l)).sum::<usize>() > max_chars && !window.is_empty() {
        let pick = |debug: bool| {
            let matches = |l: &String| l.starts_with(DEBUG_PREFIX) == debug;
            if from_back {
                window.iter().rposition(matches)
            } else {
                window.iter().position(matches)
            }
        };
        let idx = pick(false).or_else(|| pick(true)).expect("window non-empty");
        window.remove(idx);
        dropped += 1;
    }
    dropped
}

/// Bounds a captured log to the budget, keeping the head and tail halves
/// around a single elision marker. Text within budget is returned unchanged.
pub fn extract_trace(raw: &str, budget: &TraceBudget) -> String {
    let lines: Vec<&str> = raw.lines().collect();
    let total_chars: usize = lines.iter().map(|l| line_cost(l)).sum();
    if lines.len() <= budget.max_lines && total_chars <= budget.max_chars {
        return raw.to_string();
    }
    let n = lines.len();
    let (head_end, tail_start) = if n > budget.max_lines {
        let head = budget.max_lines / 2;
        (head, n - (budget.max_lines - head))
    } else {
        let mid = n.div_ceil(2);
        (mid, mid)
    };
    let head_chars = budget.max_chars / 2;
    let tail_chars = budget.max_chars - head_chars;
    let mut head: Vec<String> = lines[..head_end]
        .iter()
        .map(|l| clip_line(l, head_chars.saturating_sub(1)))
        .collect();
    let mut tail: Vec<String> = lines[tail_start..]
        .iter()
        .map(|l| clip_line(l, tail_chars.saturating_sub(1)))
        .collect();
    let mut elided = tail_start - head_end;
    elided += shrink_window(&mut head, head_chars, true);
    elided += shrink_window(&mut tail, tail_chars, false);

    let mut out = head;
    if elided > 0 {
        out.push(format!("... [{elided} lines elided] ..."));
    }
    out.extend(tail);
    out.join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("candidate code is empty")]
    EmptyCode,
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("no recorded execution for program {digest}")]
    NotRecorded { digest: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub budget: TraceBudget,
    /// Replaces each task's own `timeout_s` when set.
    pub timeout_override_s: Option<f64>,
}

fn outcome_from_raw(case_id: &str, raw: &RawCaseRun, limits: &Limits) -> Result<CaseOutcome, ExecError> {
    let (verdict, detail) = if raw.timed_out {
        (
            Verdict::Timeout,
            format!("TimeoutError: exceeded {:.3}s", limits.timeout.as_secs_f64()),
        )
    } else {
        let report = raw.report.as_ref().ok_or_else(|| ExecutorError::MissingReport {
            case_id: case_id.to_string(),
            status: "unknown".into(),
            stderr: String::new(),
        })?;
        let labelled = |default_type: &str| {
            let ty = if report.exception_type.is_empty() {
                default_type
            } else {
                report.exception_type.as_str()
            };
            if report.message.is_empty() {
                ty.to_string()
            } else {
                format!("{ty}: {}", report.message)
            }
        };
        match report.verdict {
            DriverVerdict::Pass => (Verdict::Pass, String::new()),
            DriverVerdict::AssertionFailure => (Verdict::WrongAnswer, labelled("AssertionError")),
            DriverVerdict::Exception => (Verdict::RuntimeError, labelled("Exception")),
            DriverVerdict::InternalError => {
                return Err(ExecutorError::Driver {
                    case_id: case_id.to_string(),
                    message: report.message.clone(),
                }
                .into())
            }
        }
    };
    Ok(CaseOutcome {
        case_id: case_id.to_string(),
        verdict,
        detail,
    })
}

/// Runs `code` against every case of `task`, one fresh executor invocation per case.
pub fn execute(
    code: &str,
    task: &Task,
    executor: &dyn Executor,
    options: &RunOptions,
) -> Result<ExecutionReport, ExecError> {
    if code.trim().is_empty() {
        return Err(ExecError::EmptyCode);
    }
    let limits = Limits::for_task(task, options.timeout_override_s);
    let mut outcomes = Vec::with_capacity(task.test_cases.len());
    let mut raw_trace = String::new();
    let mut feedback = Vec::new();
    let mut wall_time_ms = 0;

    for case in &task.test_cases {
        let raw = executor.run_case(code, task, case, &limits)?;
        let outcome = outcome_from_raw(&case.case_id, &raw, &limits)?;
        wall_time_ms += raw.wall_ms;

        raw_trace.push_str(&format!("--- case {}: {} ---\n", case.case_id, outcome.verdict));
        push_block(&mut raw_trace, &raw.stdout);
        if outcome.verdict != Verdict::Pass {
            match raw.report.as_ref().map(|r| r.traceback.as_str()) {
                Some(tb) if !tb.is_empty() => push_block(&mut raw_trace, tb),
                _ => push_block(&mut raw_trace, &outcome.detail),
            }
            feedback.push(format!(
                "case {} [{}]\n  test: {}\n  error: {}",
                case.case_id,
                outcome.verdict,
                case.body.trim(),
                outcome.detail
            ));
        }
        outcomes.push(outcome);
    }

    let passed_count = outcomes.iter().filter(|o| o.verdict == Verdict::Pass).count();
    let total_count = outcomes.len();
    Ok(ExecutionReport {
        result: if passed_count == total_count {
            ExecResult::Success
        } else {
            ExecResult::Failure
        },
        case_outcomes: outcomes,
        passed_count,
        total_count,
        trace: extract_trace(&raw_trace, &options.budget),
        error_feedback: feedback.join("\n"),
        wall_time_ms,
    })
}

fn push_block(buf: &mut String, text: &str) {
    if text.is_empty() {
        return;
    }
    buf.push_str(text);
    if !text.ends_with('\n') {
        buf.push('\n');
    }
}

/// Anything that turns a program into an [`ExecutionReport`] for a task.
pub trait SuiteRunner: Send + Sync {
    fn run(&self, code: &str, task: &Task) -> Result<ExecutionReport, ExecError>;
}

/// [`execute`] bound to an executor and run options.
pub struct TraceRunner<E> {
    executor: E,
    options: RunOptions,
}

impl<E: Executor> TraceRunner<E> {
    pub fn new(executor: E) -> Self {
        Self::with_options(executor, RunOptions::default())
    }

    pub fn with_options(executor: E, options: RunOptions) -> Self {
        Self { executor, options }
    }

    pub fn executor(&self) -> &E {
        &self.executor
    }
}

impl<E: Executor> SuiteRunner for TraceRunner<E> {
    fn run(&self, code: &str, task: &Task) -> Result<ExecutionReport, ExecError> {
        execute(code, task, &self.executor, &self.options)
    }
}

/// Answers with previously recorded reports, keyed by program digest.
#[derive(Debug, Clone, Default)]
pub struct ReplayRunner {
    reports: HashMap<String, ExecutionReport>,
}

impl ReplayRunner {
    /// The first report recorded for a program wins.
    pub fn record(&mut self, code: &str, report: ExecutionReport) {
        self.reports.entry(code_digest(code)).or_insert(report);
    }
}

impl SuiteRunner for ReplayRunner {
    fn run(&self, code: &str, _task: &Task) -> Result<ExecutionReport, ExecError> {
        let digest = code_digest(code);
        self.reports
            .get(&digest)
            .cloned()
            .ok_or(ExecError::NotRecorded { digest })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictChange {
    pub case_id: String,
    pub original: Verdict,
    pub instrumented: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "changes", rename_all = "snake_case")]
pub enum Preservation {
    Preserved,
    Broken(Vec<VerdictChange>),
}

impl Preservation {
    pub fn is_preserved(&self) -> bool {
        matches!(self, Preservation::Preserved)
    }
}

/// Compares two verdict vectors case by case; trace content is ignored.
pub fn compare_verdicts(original: &ExecutionReport, instrumented: &ExecutionReport) -> Preservation {
    let changes: Vec<VerdictChange> = original
        .case_outcomes
        .iter()
        .zip(&instrumented.case_outcomes)
        .filter(|(a, b)| a.verdict != b.verdict)
        .map(|(a, b)| VerdictChange {
            case_id: a.case_id.clone(),
            original: a.verdict,
            instrumented: b.verdict,
        })
        .collect();
    if changes.is_empty() {
        Preservation::Preserved
    } else {
        Preservation::Broken(changes)
    }
}

/// Checks that instrumentation left every per-case verdict unchanged.
pub fn validate_purity(
    original: &str,
    instrumented: &str,
    task: &Task,
    runner: &dyn SuiteRunner,
) -> Result<Preservation, ExecError> {
    let before = runner.run(original, task)?;
    let after = runner.run(instrumented, task)?;
    Ok(compare_verdicts(&before, &after))
}
