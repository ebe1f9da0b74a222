//! Instrumentation purity studies: re-run each suite on instrumented code and
//! compare per-case verdicts with the original.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{build_initial_prompt, build_instrumentation_prompt, parse_code_response, Templates};
use crate::batch::map_parallel;
use crate::llm::Backend;
use crate::metrics::percent;
use crate::runner::{compare_verdicts, ExecError, Preservation, SuiteRunner};
use crate::task::Task;

/// One (original, instrumented) pair; the corpus file is JSONL of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurityCase {
    pub task_id: String,
    pub original: String,
    pub instrumented: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PurityError {
    #[error("cannot read purity corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus line {line}: unknown task {task_id}")]
    UnknownTask { line: usize, task_id: String },
    #[error("task {task_id}: {source}")]
    Exec {
        task_id: String,
        #[source]
        source: ExecError,
    },
    #[error("task {task_id}: model call failed: {message}")]
    Backend { task_id: String, message: String },
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PurityCase>, PurityError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PurityError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurityOutcome {
    pub task_id: String,
    /// `None` when the original did not pass its suite and was skipped.
    pub preservation: Option<Preservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    /// Originals that pass every case; the denominator of the rate.
    pub initially_correct: usize,
    pub preserved: usize,
    /// preserved / initially_correct, in percent.
    pub preservation_rate: f64,
    /// Task ids whose instrumented variant changed some verdict.
    pub flagged: Vec<String>,
    pub outcomes: Vec<PurityOutcome>,
}

fn check_case(case: &PurityCase, task: &Task, runner: &dyn SuiteRunner) -> Result<PurityOutcome, PurityError> {
    let exec = |code: &str| {
        runner.run(code, task).map_err(|source| PurityError::Exec {
            task_id: case.task_id.clone(),
            source,
        })
    };
    let before = exec(&case.original)?;
    if !before.is_success() {
        return Ok(PurityOutcome {
            task_id: case.task_id.clone(),
            preservation: None,
        });
    }
    let after = exec(&case.instrumented)?;
    Ok(PurityOutcome {
        task_id: case.task_id.clone(),
        preservation: Some(compare_verdicts(&before, &after)),
    })
}

pub fn summarize(outcomes: Vec<PurityOutcome>) -> PurityReport {
    let checked: Vec<&PurityOutcome> = outcomes.iter().filter(|o| o.preservation.is_some()).collect();
    let preserved = checked
        .iter()
        .filter(|o| o.preservation.as_ref().is_some_and(Preservation::is_preserved))
        .count();
    let flagged = checked
        .iter()
        .filter(|o| !o.preservation.as_ref().is_some_and(Preservation::is_preserved))
        .map(|o| o.task_id.clone())
        .collect();
    PurityReport {
        initially_correct: checked.len(),
        preserved,
        preservation_rate: if checked.is_empty() { 0.0 } else { percent(preserved, checked.len()) },
        flagged,
        outcomes,
    }
}

/// Purity over a corpus of hand-written or recorded instrumentations.
pub fn purity_study(
    cases: &[PurityCase],
    tasks: &[Task],
    runner: &dyn SuiteRunner,
    jobs: usize,
) -> Result<PurityReport, PurityError> {
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    for (i, c) in cases.iter().enumerate() {
        if !by_id.contains_key(c.task_id.as_str()) {
            return Err(PurityError::UnknownTask {
                line: i + 1,
                task_id: c.task_id.clone(),
            });
        }
    }
    let outcomes = map_parallel(cases, jobs, |c| check_case(c, by_id[c.task_id.as_str()], runner));
    Ok(summarize(outcomes.into_iter().collect::<Result<_, _>>()?))
}

/// Feedback given to the instrumentation prompt when the code already passes.
pub const PASSING_FEEDBACK: &str = "All test cases passed. Instrument the code for observation only.";

/// Generates code for `task`, and if it passes, asks for an instrumented
/// variant. Returns `None` for originals that fail their suite.
pub fn generate_case(
    task: &Task,
    templates: &Templates,
    backend: &dyn Backend,
    runner: &dyn SuiteRunner,
) -> Result<Option<PurityCase>, PurityError> {
    let backend_err = |m: String| PurityError::Backend {
        task_id: task.task_id.clone(),
        message: m,
    };
    let ex = backend
        .complete(&build_initial_prompt(templates, task))
        .map_err(|e| backend_err(e.to_string()))?;
    let original = parse_code_response(&ex.response_text).map_err(|e| backend_err(e.to_string()))?;
    let report = runner.run(&original, task).map_err(|source| PurityError::Exec {
        task_id: task.task_id.clone(),
        source,
    })?;
    if !report.is_success() {
        return Ok(None);
    }
    let ex = backend
        .complete(&build_instrumentation_prompt(templates, &original, PASSING_FEEDBACK, ""))
        .map_err(|e| backend_err(e.to_string()))?;
    let instrumented = parse_code_response(&ex.response_text).map_err(|e| backend_err(e.to_string()))?;
    Ok(Some(PurityCase {
        task_id: task.task_id.clone(),
        original,
        instrumented,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ScriptedCase, ScriptedExecutor};
    use crate::runner::TraceRunner;
    use crate::task::parse_tasks;

    fn task(id: &str) -> Task {
        parse_tasks(&format!(
            r#"{{"task_id":"{id}","prompt":"p","entry_point":"f","test_cases":[{{"case_id":"c1","body":"assert f()"}}],"timeout_s":1}}"#
        ))
        .unwrap()
        .remove(0)
    }

    #[test]
    fn rate_counts_only_initially_correct() {
        let mut exec = ScriptedExecutor::new();
        exec.register("good", "c1", ScriptedCase::pass());
        exec.register("good+print", "c1", ScriptedCase::pass().with_stdout("DEBUG: x\n"));
        exec.register("bad", "c1", ScriptedCase::wrong_answer("no"));
        exec.register("good2", "c1", ScriptedCase::pass());
        let runner = TraceRunner::new(exec);
        let tasks = vec![task("a"), task("b"), task("c")];
        let cases = vec![
            PurityCase { task_id: "a".into(), original: "good".into(), instrumented: "good+print".into() },
            PurityCase { task_id: "b".into(), original: "bad".into(), instrumented: "bad".into() },
            PurityCase { task_id: "c".into(), original: "good2".into(), instrumented: "bad".into() },
        ];
        let report = purity_study(&cases, &tasks, &runner, 2).unwrap();
        assert_eq!(report.initially_correct, 2);
        assert_eq!(report.preserved, 1);
        assert_eq!(report.preservation_rate, 50.0);
        assert_eq!(report.flagged, vec!["c".to_string()]);
    }

    #[test]
    fn unknown_task_rejected() {
        let runner = TraceRunner::new(ScriptedExecutor::new());
        let cases = vec![PurityCase { task_id: "zz".into(), original: "x".into(), instrumented: "x".into() }];
        assert!(matches!(
            purity_study(&cases, &[task("a")], &runner, 1),
            Err(PurityError::UnknownTask { .. })
        ));
    }
}
