//! One debugging session end to end, plus deterministic replay.
//!
//! Each repair cycle instruments the current base, runs the instrumented
//! program for its trace, asks for an analysis, repairs the clean base,
//! scores the repaired candidate, records the lesson and lets the rollback
//! state machine pick the next base. Agents only see artifacts produced by
//! earlier steps.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{
    build_analysis_prompt, build_initial_prompt, build_instrumentation_prompt, build_repair_prompt,
    parse_analysis_response, parse_code_response, AnalysisResult, PromptBundle, Templates,
};
use crate::lessons::{record_outcome, render_lessons, AttemptMessage, LessonRecord};
use crate::llm::{aggregate_usage, Backend, ChatExchange, ReplayBackend, UsageSummary};
use crate::rollback::{self, decide, init_state, should_terminate, Decision, RepairState, StopReason, Termination};
use crate::runner::{ExecutionReport, ReplayRunner, SuiteRunner, TraceBudget};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Repair cycles after the initial generation; 0 is single-shot generation.
    pub max_attempts: usize,
    pub patience: usize,
    pub trace_budget: TraceBudget,
    /// Character budget for the rendered lesson record.
    pub lesson_budget: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            patience: 3,
            trace_budget: TraceBudget::default(),
            lesson_budget: 6_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("patience must be at least 1")]
    Patience,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.patience == 0 {
            return Err(ConfigError::Patience);
        }
        Ok(())
    }

    fn limits(&self) -> rollback::Limits {
        rollback::Limits {
            max_attempts: self.max_attempts,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Solved,
    Unsolved,
}

/// Where in the loop an operational error stopped the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialGeneration,
    InitialExecution,
    Instrumentation,
    ProbeExecution,
    Analysis,
    Repair,
    CandidateExecution,
    LessonRecording,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub attempt_index: usize,
    pub stage: Stage,
    pub message: String,
    /// Model calls completed within the interrupted iteration.
    pub model_calls: Vec<ChatExchange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub attempt_index: usize,
    /// The clean code this cycle instrumented and repaired.
    pub base_code: String,
    pub instrumented_code: String,
    pub probe_execution: ExecutionReport,
    pub trace: String,
    pub analysis: AnalysisResult,
    pub repaired_code: String,
    pub execution: ExecutionReport,
    pub decision: Decision,
    pub state_after: RepairState,
    /// Instrumentation, analysis and repair exchanges, in that order.
    pub model_calls: Vec<ChatExchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub task_id: String,
    pub config: SessionConfig,
    pub initial_call: Option<ChatExchange>,
    pub initial_code: Option<String>,
    pub initial_execution: Option<ExecutionReport>,
    pub iterations: Vec<IterationRecord>,
    pub lesson_record: LessonRecord,
    pub final_code: Option<String>,
    /// Execution report of `final_code`.
    pub final_execution: Option<ExecutionReport>,
    pub final_status: FinalStatus,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<AbortInfo>,
    pub usage: UsageSummary,
}

impl SessionTranscript {
    /// Every model exchange in call order.
    pub fn exchanges(&self) -> Vec<&ChatExchange> {
        self.initial_call
            .iter()
            .chain(self.iterations.iter().flat_map(|it| it.model_calls.iter()))
            .chain(self.abort.iter().flat_map(|a| a.model_calls.iter()))
            .collect()
    }

    pub fn decisions(&self) -> Vec<Decision> {
        self.iterations.iter().map(|it| it.decision).collect()
    }

    pub fn is_solved(&self) -> bool {
        self.final_status == FinalStatus::Solved
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

struct Aborted {
    stage: Stage,
    message: String,
}

fn fail(stage: Stage) -> impl FnOnce(&dyn fmt::Display) -> Aborted {
    move |e| Aborted {
        stage,
        message: e.to_string(),
    }
}

fn call(
    backend: &dyn Backend,
    bundle: &PromptBundle,
    stage: Stage,
    calls: &mut Vec<ChatExchange>,
) -> Result<String, Aborted> {
    let ex = backend.complete(bundle).map_err(|e| fail(stage)(&e))?;
    let text = ex.response_text.clone();
    calls.push(ex);
    Ok(text)
}

struct Loop<'a> {
    task: &'a Task,
    config: &'a SessionConfig,
    templates: &'a Templates,
    backend: &'a dyn Backend,
    runner: &'a dyn SuiteRunner,
    transcript: SessionTranscript,
    state: Option<RepairState>,
    best_execution: Option<ExecutionReport>,
}

impl Loop<'_> {
    fn initial(&mut self) -> Result<Option<StopReason>, Aborted> {
        let bundle = build_initial_prompt(self.templates, self.task);
        let mut calls = Vec::new();
        let response = call(self.backend, &bundle, Stage::InitialGeneration, &mut calls)?;
        self.transcript.initial_call = calls.pop();
        let code = parse_code_response(&response).map_err(|e| fail(Stage::InitialGeneration)(&e))?;
        self.transcript.initial_code = Some(code.clone());
        self.transcript.final_code = Some(code.clone());

        let report = self
            .runner
            .run(&code, self.task)
            .map_err(|e| fail(Stage::InitialExecution)(&e))?;
        self.transcript.initial_execution = Some(report.clone());
        self.best_execution = Some(report.clone());
        if report.is_success() {
            return Ok(Some(StopReason::AllTestsPassed));
        }
        self.state = Some(init_state(&code, report.passed_count));
        Ok(None)
    }

    fn iterate(&mut self, calls: &mut Vec<ChatExchange>, feedback: &str, suggestions: &str) -> Result<IterationRecord, Aborted> {
        let state = self.state.clone().expect("state initialised");
        let attempt_index = state.attempt_index + 1;
        let base = state.next_base.clone();

        let bundle = build_instrumentation_prompt(self.templates, &base, feedback, suggestions);
        let response = call(self.backend, &bundle, Stage::Instrumentation, calls)?;
        let instrumented = parse_code_response(&response).map_err(|e| fail(Stage::Instrumentation)(&e))?;
        let probe = self
            .runner
            .run(&instrumented, self.task)
            .map_err(|e| fail(Stage::ProbeExecution)(&e))?;

        let lessons = render_lessons(&self.transcript.lesson_record, self.config.lesson_budget);
        let bundle = build_analysis_prompt(self.templates, self.task, &instrumented, &probe.trace, &lessons);
        let response = call(self.backend, &bundle, Stage::Analysis, calls)?;
        let analysis = parse_analysis_response(&response).map_err(|e| fail(Stage::Analysis)(&e))?;

        let bundle = build_repair_prompt(self.templates, self.task, &base, feedback, &analysis.repair_plan);
        let response = call(self.backend, &bundle, Stage::Repair, calls)?;
        let repaired = parse_code_response(&response).map_err(|e| fail(Stage::Repair)(&e))?;
        let execution = self
            .runner
            .run(&repaired, self.task)
            .map_err(|e| fail(Stage::CandidateExecution)(&e))?;

        let message = AttemptMessage {
            attempt_index: Some(attempt_index),
            repair_plan: Some(analysis.repair_plan.clone()),
            error_feedback: Some(execution.error_feedback.clone()),
            repaired_code: Some(repaired.clone()),
            passed_count: Some(execution.passed_count),
        };
        self.transcript.lesson_record = record_outcome(&self.transcript.lesson_record, execution.result, &message)
            .map_err(|e| fail(Stage::LessonRecording)(&e))?;

        let (decision, state_after) = decide(&repaired, execution.passed_count, &state);
        if decision == Decision::Accept {
            self.best_execution = Some(execution.clone());
        }
        self.state = Some(state_after.clone());
        Ok(IterationRecord {
            attempt_index,
            base_code: base,
            instrumented_code: instrumented,
            trace: probe.trace.clone(),
            probe_execution: probe,
            analysis,
            repaired_code: repaired,
            execution,
            decision,
            state_after,
            model_calls: std::mem::take(calls),
        })
    }

    fn repair_loop(&mut self) -> Result<StopReason, Aborted> {
        let initial = self.transcript.initial_execution.as_ref().expect("initial run");
        let mut feedback = initial.error_feedback.clone();
        let mut suggestions = String::new();
        let limits = self.config.limits();
        if let Termination::Stop(reason) = should_terminate(self.state.as_ref().expect("state"), &limits) {
            return Ok(reason);
        }
        loop {
            let mut calls = Vec::new();
            let attempt = self.state.as_ref().expect("state").attempt_index + 1;
            let record = match self.iterate(&mut calls, &feedback, &suggestions) {
                Ok(r) => r,
                Err(e) => {
                    self.transcript.abort = Some(AbortInfo {
                        attempt_index: attempt,
                        stage: e.stage,
                        message: e.message.clone(),
                        model_calls: calls,
                    });
                    return Err(e);
                }
            };
            let solved = record.execution.is_success();
            feedback = record.execution.error_feedback.clone();
            suggestions = record.analysis.instrumentation_suggestions.clone();
            self.transcript.iterations.push(record);
            if solved {
                return Ok(StopReason::AllTestsPassed);
            }
            if let Termination::Stop(reason) = should_terminate(self.state.as_ref().expect("state"), &limits) {
                return Ok(reason);
            }
        }
    }
}

/// Runs one task to completion. Operational failures end the session with
/// `stop_reason = operational_error`; everything recorded so far is kept.
pub fn debug_session(
    task: &Task,
    config: &SessionConfig,
    templates: &Templates,
    backend: &dyn Backend,
    runner: &dyn SuiteRunner,
) -> SessionTranscript {
    let transcript = SessionTranscript {
        task_id: task.task_id.clone(),
        config: *config,
        initial_call: None,
        initial_code: None,
        initial_execution: None,
        iterations: Vec::new(),
        lesson_record: LessonRecord::new(&task.task_id, task.test_cases.len()),
        final_code: None,
        final_execution: None,
        final_status: FinalStatus::Unsolved,
        stop_reason: StopReason::OperationalError,
        abort: None,
        usage: aggregate_usage([], 1).expect("one problem"),
    };
    let mut lp = Loop {
        task,
        config,
        templates,
        backend,
        runner,
        transcript,
        state: None,
        best_execution: None,
    };

    let outcome = match lp.initial() {
        Ok(Some(reason)) => Ok(reason),
        Ok(None) => lp.repair_loop(),
        Err(e) => {
            lp.transcript.abort = Some(AbortInfo {
                attempt_index: 0,
                stage: e.stage,
                message: e.message.clone(),
                model_calls: Vec::new(),
            });
            Err(e)
        }
    };
    let mut t = lp.transcript;
    t.stop_reason = outcome.unwrap_or(StopReason::OperationalError);
    if let Some(state) = &lp.state {
        t.final_code = Some(state.best_code.clone());
    }
    t.final_execution = lp.best_execution;
    t.final_status = match &t.final_execution {
        Some(r) if r.is_success() => FinalStatus::Solved,
        _ => FinalStatus::Unsolved,
    };
    t.usage = aggregate_usage(t.exchanges(), 1).expect("one problem");
    t
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("transcript was recorded for task {recorded}, not {given}")]
    TaskMismatch { recorded: String, given: String },
    #[error("session config differs from the recorded one: {0}")]
    ConfigMismatch(String),
}

/// Re-drives a session from its own recorded responses and executions.
pub fn replay_session(
    transcript: &SessionTranscript,
    task: &Task,
    config: &SessionConfig,
    templates: &Templates,
) -> Result<SessionTranscript, ReplayError> {
    if transcript.task_id != task.task_id {
        return Err(ReplayError::TaskMismatch {
            recorded: transcript.task_id.clone(),
            given: task.task_id.clone(),
        });
    }
    if transcript.config != *config {
        let mut fields = Vec::new();
        if transcript.config.max_attempts != config.max_attempts {
            fields.push("max_attempts");
        }
        if transcript.config.patience != config.patience {
            fields.push("patience");
        }
        if transcript.config.trace_budget != config.trace_budget {
            fields.push("trace_budget");
        }
        if transcript.config.lesson_budget != config.lesson_budget {
            fields.push("lesson_budget");
        }
        return Err(ReplayError::ConfigMismatch(fields.join(", ")));
    }
    let backend = ReplayBackend::new(transcript.exchanges().into_iter().cloned());
    let mut runner = ReplayRunner::default();
    if let (Some(code), Some(report)) = (&transcript.initial_code, &transcript.initial_execution) {
        runner.record(code, report.clone());
    }
    for it in &transcript.iterations {
        runner.record(&it.instrumented_code, it.probe_execution.clone());
        runner.record(&it.repaired_code, it.execution.clone());
    }
    Ok(debug_session(task, config, templates, &backend, &runner))
}

/// Paths where two transcripts differ, as `path: left != right` lines.
pub fn diff_transcripts(left: &SessionTranscript, right: &SessionTranscript) -> Vec<String> {
    let a = serde_json::to_value(left).expect("transcript serializes");
    let b = serde_json::to_value(right).expect("transcript serializes");
    let mut out = Vec::new();
    diff_values("$", &a, &b, &mut out);
    out
}

fn short(v: &Value) -> String {
    let s = v.to_string();
    if s.chars().count() > 80 {
        format!("{}…", s.chars().take(79).collect::<String>())
    } else {
        s
    }
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let (va, vb) = (x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null));
                diff_values(&format!("{path}.{k}"), va, vb, out);
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                out.push(format!("{path}: length {} != {}", x.len(), y.len()));
            }
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{path}[{i}]"), va, vb, out);
            }
        }
        _ if a != b => out.push(format!("{path}: {} != {}", short(a), short(b))),
        _ => {}
    }
}
