#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use trace_repair::agents::Role;
use trace_repair::executor::{ScriptedCase, ScriptedExecutor};
use trace_repair::llm::{RoleQueues, ScriptedBackend};
use trace_repair::orchestrator::{debug_session, SessionConfig, SessionTranscript};
use trace_repair::runner::{ExecError, ExecutionReport, SuiteRunner, TraceRunner};
use trace_repair::task::{parse_tasks, Task};
use trace_repair::Templates;

pub fn task(task_id: &str, cases: usize) -> Task {
    let cases: Vec<_> = (1..=cases)
        .map(|i| serde_json::json!({"case_id": format!("c{i}"), "body": format!("assert solve({i}) == {}", i * 2)}))
        .collect();
    let line = serde_json::json!({
        "task_id": task_id,
        "prompt": format!("Write solve(x) returning twice x. ({task_id})"),
        "entry_point": "solve",
        "test_cases": cases,
        "timeout_s": 2,
    });
    parse_tasks(&line.to_string()).unwrap().remove(0)
}

pub fn candidate(tag: &str) -> String {
    format!("def solve(x):\n    return x * 2  # {tag}")
}

pub fn instrumented(tag: &str) -> String {
    format!("def solve(x):\n    print(f\"DEBUG: solve called with x={{x}}\")  # {tag}\n    return x * 2")
}

pub fn fence(code: &str) -> String {
    format!("Here is the program:\n```python\n{code}\n```\n")
}

pub fn analysis(i: usize) -> String {
    format!(
        "Diagnosis for attempt {i}.\n```json\n{{\"repair_plan\": \"Fix the arithmetic in step {i}. Keep the rest.\", \"instrumentation_suggestions\": \"probe branch {i}\"}}\n```\n"
    )
}

/// Registers `code` so that the first `score` of `total` cases pass.
pub fn register_score(exec: &mut ScriptedExecutor, code: &str, total: usize, score: usize, stdout: &str) {
    for i in 1..=total {
        let case = if i <= score {
            ScriptedCase::pass()
        } else if i % 3 == 0 {
            ScriptedCase::runtime_error("TypeError", "unsupported operand").with_traceback(
                "Traceback (most recent call last):\n  File \"<candidate>\", line 2\nTypeError: unsupported operand",
            )
        } else {
            ScriptedCase::wrong_answer(&format!("{} != {}", i, i * 2))
        };
        exec.register(code, &format!("c{i}"), case.with_stdout(stdout));
    }
}

/// A fully scripted session: initial code with `initial_score` passes, then
/// repair attempts scoring `attempt_scores` in order.
pub struct Scenario {
    pub task: Task,
    pub queues: RoleQueues,
    pub executor: ScriptedExecutor,
    pub initial_code: String,
    pub attempt_codes: Vec<String>,
}

impl Scenario {
    pub fn new(task_id: &str, total: usize, initial_score: usize, attempt_scores: &[usize]) -> Self {
        let task = task(task_id, total);
        let mut executor = ScriptedExecutor::new();
        let mut queues = RoleQueues::new();

        let initial_code = candidate(&format!("{task_id} v0"));
        register_score(&mut executor, &initial_code, total, initial_score, "");
        queues.insert(Role::Initial, vec![fence(&initial_code)]);

        let mut attempt_codes = Vec::new();
        for (i, &score) in attempt_scores.iter().enumerate() {
            let n = i + 1;
            let inst = instrumented(&format!("{task_id} probe {n}"));
            register_score(
                &mut executor,
                &inst,
                total,
                0,
                &format!("DEBUG: solve called with x=1\nDEBUG: attempt {n} probe\n"),
            );
            let code = candidate(&format!("{task_id} v{n}"));
            register_score(&mut executor, &code, total, score, "");
            queues.entry(Role::Instrument).or_default().push(fence(&inst));
            queues.entry(Role::Analyze).or_default().push(analysis(n));
            queues.entry(Role::Repair).or_default().push(fence(&code));
            attempt_codes.push(code);
        }
        Self {
            task,
            queues,
            executor,
            initial_code,
            attempt_codes,
        }
    }

    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.queues.clone(), true)
    }

    pub fn runner(&self) -> CountingRunner<TraceRunner<ScriptedExecutor>> {
        CountingRunner::new(TraceRunner::new(self.executor.clone()))
    }

    pub fn run(&self, config: &SessionConfig) -> SessionTranscript {
        debug_session(&self.task, config, &Templates::default(), &self.backend(), &self.runner())
    }

    pub fn run_counted(&self, config: &SessionConfig) -> (SessionTranscript, usize) {
        let runner = self.runner();
        let t = debug_session(&self.task, config, &Templates::default(), &self.backend(), &runner);
        (t, runner.count())
    }
}

pub struct CountingRunner<R> {
    inner: R,
    calls: AtomicUsize,
}

impl<R> CountingRunner<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<R: SuiteRunner> SuiteRunner for CountingRunner<R> {
    fn run(&self, code: &str, task: &Task) -> Result<ExecutionReport, ExecError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.run(code, task)
    }
}

/// Checks the per-iteration shape: three model calls in role order, two
/// executions recorded, and no probe lines in repaired code.
pub fn loop_shape_violations(t: &SessionTranscript) -> Vec<String> {
    let mut v = Vec::new();
    for it in &t.iterations {
        let roles: Vec<Role> = it.model_calls.iter().map(|c| c.bundle.role).collect();
        if roles != [Role::Instrument, Role::Analyze, Role::Repair] {
            v.push(format!("attempt {}: roles {roles:?}", it.attempt_index));
        }
        if it.probe_execution.total_count != t.lesson_record.total_cases
            || it.execution.total_count != t.lesson_record.total_cases
        {
            v.push(format!("attempt {}: execution missing", it.attempt_index));
        }
        if it.repaired_code.contains("DEBUG:") {
            v.push(format!("attempt {}: repaired code carries probes", it.attempt_index));
        }
        let repair_prompt = &it.model_calls[2].bundle.user_text;
        if repair_prompt.contains("print(f\"DEBUG:") {
            v.push(format!("attempt {}: repair prompt saw instrumented code", it.attempt_index));
        }
    }
    v
}
