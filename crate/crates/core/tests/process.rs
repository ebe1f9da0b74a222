//! Runs the process executor against small stand-in drivers.

use std::path::PathBuf;
use std::process::Command;

use trace_repair::executor::{ExecutorError, ProcessExecutor};
use trace_repair::runner::{ExecError, ExecResult, RunOptions, SuiteRunner, TraceRunner, Verdict};
use trace_repair::task::{parse_tasks, Task};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn python() -> Option<ProcessExecutor> {
    let ok = Command::new("python3").arg("-c").arg("pass").status().is_ok_and(|s| s.success());
    if !ok {
        eprintln!("python3 unavailable, skipping");
        return None;
    }
    Some(ProcessExecutor::new("python3", vec![fixture("fake_driver.py").display().to_string()]))
}

fn positive_task() -> Task {
    parse_tasks(
        r#"{"task_id":"pos","prompt":"Return True when x is strictly positive.","entry_point":"is_positive",
            "test_cases":[{"case_id":"c1","body":"assert is_positive(3) == True"},
                          {"case_id":"c2","body":"assert is_positive(0) == False, 'zero is not positive'"},
                          {"case_id":"c3","body":"assert is_positive(-2) == False"}],
            "timeout_s":5}"#
            .replace('\n', " ")
            .as_str(),
    )
    .unwrap()
    .remove(0)
}

const BUGGY: &str = "def is_positive(x):\n    print(f\"DEBUG: x={x}\")\n    print(f\"DEBUG: x >= 0 is {x >= 0}\")\n    return x >= 0\n";
const FIXED: &str = "def is_positive(x):\n    return x > 0\n";

#[test]
fn driver_verdicts_and_trace() {
    let Some(exec) = python() else { return };
    let runner = TraceRunner::new(exec);
    let task = positive_task();

    let report = runner.run(BUGGY, &task).unwrap();
    assert_eq!(report.result, ExecResult::Failure);
    assert_eq!(report.verdicts(), vec![Verdict::Pass, Verdict::WrongAnswer, Verdict::Pass]);
    assert_eq!(report.passed_count, 2);
    assert!(report.trace.contains("DEBUG: x=0\nDEBUG: x >= 0 is True"), "{}", report.trace);
    assert!(report.error_feedback.contains("zero is not positive"));
    assert!(report.error_feedback.contains("case c2 [WRONG_ANSWER]"));

    let report = runner.run(FIXED, &task).unwrap();
    assert!(report.is_success());
    assert_eq!(report.passed_count, 3);
}

#[test]
fn runtime_errors_carry_type() {
    let Some(exec) = python() else { return };
    let runner = TraceRunner::new(exec);
    let code = "def is_positive(x):\n    return {}[x]\n";
    let report = runner.run(code, &positive_task()).unwrap();
    assert_eq!(report.verdicts(), vec![Verdict::RuntimeError; 3]);
    assert!(report.case_outcomes[0].detail.starts_with("KeyError"));
    assert!(report.trace.contains("Traceback"));
}

#[test]
fn runaway_candidate_is_killed() {
    let Some(exec) = python() else { return };
    let runner = TraceRunner::with_options(
        exec,
        RunOptions {
            timeout_override_s: Some(0.5),
            ..RunOptions::default()
        },
    );
    let code = "def is_positive(x):\n    while True:\n        pass\n";
    let mut task = positive_task();
    task.test_cases.truncate(1);
    let report = runner.run(code, &task).unwrap();
    assert_eq!(report.verdicts(), vec![Verdict::Timeout]);
    assert!(report.wall_time_ms < 4000);
}

#[test]
fn missing_report_is_operational() {
    let exec = ProcessExecutor::new(fixture("silent_driver.sh"), vec![]);
    let err = TraceRunner::new(exec).run(FIXED, &positive_task()).unwrap_err();
    match err {
        ExecError::Executor(ExecutorError::MissingReport { stderr, .. }) => assert!(stderr.contains("driver broke")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_program_fails_to_spawn() {
    let exec = ProcessExecutor::new("/nonexistent/driver", vec![]);
    let err = TraceRunner::new(exec).run(FIXED, &positive_task()).unwrap_err();
    assert!(matches!(err, ExecError::Executor(ExecutorError::Spawn(_))));
}
