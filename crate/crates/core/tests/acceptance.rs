//! Acceptance checks, one line per criterion. Runs with the scripted backend
//! and scripted executor only.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trace_repair::executor::{ScriptedCase, ScriptedExecutor};
use trace_repair::lessons::{record_outcome, render_lessons, AttemptMessage, LessonRecord};
use trace_repair::llm::{RoleQueues, ScriptedBackend};
use trace_repair::metrics::{failure_breakdown, pass_at_1, pass_at_k};
use trace_repair::orchestrator::{debug_session, diff_transcripts, replay_session, FinalStatus, SessionConfig};
use trace_repair::rollback::{decide, init_state, Decision, RepairState, StopReason};
use trace_repair::runner::{ExecResult, TraceRunner};
use trace_repair::{Role, SessionTranscript, Templates};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Independent transcription of the branch table, on plain tuples.
/// Returns (decision, best_is_attempt, next_base_is_attempt, stagnation).
fn oracle(att: usize, best: usize, prev: usize, k: usize) -> (Decision, bool, bool, usize) {
    let delta = att as i64 - best as i64;
    if delta > 0 {
        (Decision::Accept, true, true, 0)
    } else if delta == 0 {
        (Decision::Continue, false, true, k + 1)
    } else if att < prev {
        (Decision::Rollback, false, false, k + 1)
    } else {
        (Decision::Continue, false, true, k + 1)
    }
}

fn rollback_oracle() -> Check {
    let start = Instant::now();
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for att in 0..=4 {
        for best in 0..=4 {
            for prev in 0..=4 {
                for k in 0..=3 {
                    cases += 1;
                    let state = RepairState {
                        best_code: "best".into(),
                        best_score: best,
                        previous_score: prev,
                        stagnation: k,
                        next_base: "base".into(),
                        attempt_index: 2,
                    };
                    let (d, next) = decide("attempt", att, &state);
                    let (od, best_is_att, base_is_att, ok) = oracle(att, best, prev, k);
                    let expected = RepairState {
                        best_code: if best_is_att { "attempt" } else { "best" }.into(),
                        best_score: if best_is_att { att } else { best },
                        previous_score: att,
                        stagnation: ok,
                        next_base: if base_is_att { "attempt" } else { "best" }.into(),
                        attempt_index: 3,
                    };
                    if d != od || next != expected {
                        mismatches.push((att, best, prev, k));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(cases == 500, || format!("enumerated {cases} cases"))?;
    ensure(mismatches.is_empty(), || format!("mismatches at {mismatches:?}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("500 cases, 0 mismatches, {elapsed:?}"))
}

fn monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rollbacks = 0;
    for seq in 0..1000 {
        let max = rng.gen_range(1..=10);
        let len = rng.gen_range(1..=12);
        let initial = rng.gen_range(0..=max);
        let mut state = init_state("code-0", initial);
        // The best-scoring code is the first one to reach the running maximum.
        let mut top = (initial, "code-0".to_string());
        for i in 1..=len {
            let score = rng.gen_range(0..=max);
            let code = format!("code-{i}");
            let before = state.best_score;
            let (d, next) = decide(&code, score, &state);
            ensure(next.best_score >= before, || format!("sequence {seq}: best_score dropped"))?;
            if score > top.0 {
                top = (score, code.clone());
            }
            ensure(next.best_score == top.0 && next.best_code == top.1, || {
                format!("sequence {seq} step {i}: best is not the best-scoring code")
            })?;
            if d == Decision::Rollback {
                rollbacks += 1;
                ensure(next.next_base == top.1, || {
                    format!("sequence {seq} step {i}: rollback base is not the best code")
                })?;
            }
            state = next;
        }
    }
    ensure(rollbacks > 0, || "no rollback exercised".into())?;
    Ok(format!("1000 sequences, {rollbacks} rollbacks, 0 violations"))
}

fn lesson_conformance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let expected_keys: BTreeSet<&str> =
        ["attempt_index", "repair_plan", "error_feedback", "repaired_code", "passed_count"].into();
    for seq in 0..300 {
        let mut record = LessonRecord::new("t", 6);
        let mut failures = 0;
        for i in 1..=rng.gen_range(0..=10usize) {
            let success = rng.gen_bool(0.3);
            let msg = AttemptMessage {
                attempt_index: Some(i),
                repair_plan: Some(format!("plan {seq}.{i}")),
                error_feedback: Some(format!("feedback {seq}.{i}")),
                repaired_code: Some(format!("code {seq}.{i}")),
                passed_count: Some(rng.gen_range(0..6)),
            };
            let result = if success { ExecResult::Success } else { ExecResult::Failure };
            record = record_outcome(&record, result, &msg).map_err(|e| e.to_string())?;
            if !success {
                failures += 1;
                let e = record.entries.last().unwrap();
                ensure(
                    e.attempt_index == i
                        && Some(&e.repair_plan) == msg.repair_plan.as_ref()
                        && Some(&e.error_feedback) == msg.error_feedback.as_ref()
                        && Some(&e.repaired_code) == msg.repaired_code.as_ref()
                        && Some(e.passed_count) == msg.passed_count,
                    || format!("sequence {seq}: entry {i} does not carry its attempt"),
                )?;
            }
        }
        ensure(record.len() == failures, || {
            format!("sequence {seq}: {} entries for {failures} failures", record.len())
        })?;
        for e in &record.entries {
            let v = serde_json::to_value(e).unwrap();
            let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            ensure(keys == expected_keys, || format!("entry fields {keys:?}"))?;
        }
    }

    let mut record = LessonRecord::new("t", 4);
    for i in 1..=8 {
        let msg = AttemptMessage {
            attempt_index: Some(i),
            repair_plan: Some(format!("Rewrite branch {i} of the loop. Then recheck bounds {}.", "x".repeat(200))),
            error_feedback: Some(format!("case c{i} [WRONG_ANSWER] {}", "detail ".repeat(60))),
            repaired_code: Some(format!("code {i}")),
            passed_count: Some(i % 4),
        };
        record = record_outcome(&record, ExecResult::Failure, &msg).map_err(|e| e.to_string())?;
    }
    let roomy = render_lessons(&record, 1_000_000);
    ensure((1..=8).all(|i| roomy.contains(&format!("Attempt {i} (passed"))), || {
        "under budget, all entries render in full".into()
    })?;
    let tight = render_lessons(&record, 4000);
    ensure(tight.chars().count() < roomy.chars().count(), || "render did not shrink".into())?;
    for i in 1..=3 {
        ensure(tight.contains(&format!("Attempt {i}: Rewrite branch {i} of the loop.")), || {
            format!("entry {i} not summarized")
        })?;
        ensure(!tight.contains(&format!("Attempt {i} (passed")), || format!("entry {i} kept in full"))?;
    }
    for i in 4..=8 {
        ensure(tight.contains(&format!("Attempt {i} (passed {}/4)\nPlan: Rewrite branch {i}", i % 4)), || {
            format!("recent entry {i} not in full")
        })?;
    }
    Ok("300 random sequences, 8-entry render keeps last 5 in full".into())
}

fn degradation_end_to_end() -> Check {
    let start = Instant::now();
    let s = Scenario::new("degrade", 2, 1, &[0, 2]);
    let config = SessionConfig::default();
    let a = s.run(&config);
    let b = s.run(&config);
    ensure(a.decisions() == [Decision::Rollback, Decision::Accept], || {
        format!("decisions {:?}", a.decisions())
    })?;
    ensure(a.final_status == FinalStatus::Solved, || format!("status {:?}", a.final_status))?;
    ensure(a.lesson_record.len() == 1, || format!("{} lessons", a.lesson_record.len()))?;
    ensure(a.to_json() == b.to_json(), || "transcripts differ across runs".into())?;
    let replayed = replay_session(&a, &s.task, &config, &Templates::default()).map_err(|e| e.to_string())?;
    let diff = diff_transcripts(&a, &replayed);
    ensure(diff.is_empty(), || format!("replay diff {diff:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("[rollback, accept], solved, 1 lesson, replay clean, {elapsed:?}"))
}

fn termination() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = SessionConfig::default();
    let mut longest = 0;
    for n in 0..200 {
        let total = rng.gen_range(1..=6);
        let initial = rng.gen_range(0..total);
        // Never fully solved, with more scripted attempts than the budget.
        let scores: Vec<usize> = (0..8).map(|_| rng.gen_range(0..total)).collect();
        let t = Scenario::new(&format!("term-{n}"), total, initial, &scores).run(&config);
        ensure(t.iterations.len() <= 5, || format!("term-{n}: {} iterations", t.iterations.len()))?;
        ensure(t.stop_reason != StopReason::OperationalError, || format!("term-{n} aborted"))?;
        longest = longest.max(t.iterations.len());
    }
    let t = Scenario::new("climb", 7, 0, &[1, 2, 3, 4, 5, 6, 7]).run(&config);
    ensure(t.iterations.len() == 5 && t.stop_reason == StopReason::MaxAttempts, || {
        format!("climb: {} iterations, {}", t.iterations.len(), t.stop_reason)
    })?;

    let flat = Scenario::new("flat", 2, 1, &[1, 1, 1, 1, 1]).run(&config);
    let ks: Vec<usize> = flat.iterations.iter().map(|i| i.state_after.stagnation).collect();
    ensure(flat.stop_reason == StopReason::Patience, || format!("flat stopped by {}", flat.stop_reason))?;
    ensure(ks == [1, 2, 3], || format!("flat stagnation {ks:?}"))?;
    Ok(format!("max {longest} iterations over 200 sessions, flat stops by patience after 3"))
}

/// Sessions that end unsolved in one execution, with a given verdict.
fn direct_transcript(id: &str, case: ScriptedCase) -> SessionTranscript {
    let task = task(id, 1);
    let code = candidate(id);
    let mut exec = ScriptedExecutor::new();
    exec.register(&code, "c1", case);
    let mut queues = RoleQueues::new();
    queues.insert(Role::Initial, vec![fence(&code)]);
    let config = SessionConfig {
        max_attempts: 0,
        ..SessionConfig::default()
    };
    debug_session(
        &task,
        &config,
        &Templates::default(),
        &ScriptedBackend::new(queues, true),
        &TraceRunner::new(exec),
    )
}

fn metrics() -> Check {
    let solved = |n: usize, total: usize| (0..total).map(|i| i < n).collect::<Vec<_>>();
    let he = pass_at_1(&solved(161, 164)).map_err(|e| e.to_string())?;
    let mbpp = pass_at_1(&solved(82, 100)).map_err(|e| e.to_string())?;
    ensure(format!("{he:.2}") == "98.17" && he == 98.17, || format!("161/164 gave {he}"))?;
    ensure(format!("{mbpp:.2}") == "82.00" && mbpp == 82.0, || format!("82/100 gave {mbpp}"))?;

    let pass = direct_transcript("p", ScriptedCase::pass());
    let re = direct_transcript("re", ScriptedCase::runtime_error("ValueError", "bad"));
    let wa = direct_transcript("wa", ScriptedCase::wrong_answer("1 != 2"));
    let tle = direct_transcript("tle", ScriptedCase::timeout());
    let mut fixture = Vec::with_capacity(10_000);
    for (t, n) in [(&pass, 8904), (&re, 423), (&wa, 634), (&tle, 39)] {
        fixture.extend(std::iter::repeat_n(t.clone(), n));
    }
    let b = failure_breakdown(&fixture);
    let got = [b.percents.pass, b.percents.runtime_error, b.percents.wrong_answer, b.percents.time_limit];
    ensure(got == [89.04, 4.23, 6.34, 0.39], || format!("breakdown {got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in 0..200 {
        let tasks = rng.gen_range(1..=30);
        let n = rng.gen_range(1..=10);
        let p: f64 = rng.gen_range(0.0..1.0);
        let matrix: Vec<Vec<bool>> = (0..tasks).map(|_| (0..n).map(|_| rng.gen_bool(p)).collect()).collect();
        let mut last = 0.0;
        for k in 1..=n {
            let v = pass_at_k(&matrix, k).map_err(|e| e.to_string())?;
            ensure(v >= last, || format!("matrix {m}: pass@{k} {v} < {last}"))?;
            last = v;
        }
    }
    Ok("98.17, 82.00, 89.04/4.23/6.34/0.39, pass@k monotone on 200 matrices".into())
}

fn loop_shape() -> Check {
    let mut fixtures: Vec<(String, usize, usize, Vec<usize>)> = vec![
        ("degrade".into(), 2, 1, vec![0, 2]),
        ("flat".into(), 2, 1, vec![1, 1, 1, 1]),
        ("climb".into(), 7, 0, vec![1, 2, 3, 4, 5, 6]),
        ("easy".into(), 3, 3, vec![]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in 0..100 {
        let total = rng.gen_range(1..=5);
        let scores = (0..6).map(|_| rng.gen_range(0..=total)).collect();
        fixtures.push((format!("shape-{n}"), total, rng.gen_range(0..=total), scores));
    }
    let mut iterations = 0;
    for (id, total, initial, scores) in &fixtures {
        let s = Scenario::new(id, *total, *initial, scores);
        let (t, executions) = s.run_counted(&SessionConfig::default());
        ensure(t.abort.is_none(), || format!("{id} aborted"))?;
        for it in &t.iterations {
            ensure(it.model_calls.len() == 3, || format!("{id}: {} model calls", it.model_calls.len()))?;
        }
        ensure(executions == 1 + 2 * t.iterations.len(), || {
            format!("{id}: {executions} executions for {} iterations", t.iterations.len())
        })?;
        let v = loop_shape_violations(&t);
        ensure(v.is_empty(), || format!("{id}: {v:?}"))?;
        iterations += t.iterations.len();
    }
    Ok(format!("{} sessions, {iterations} iterations, 3 calls and 2 executions each", fixtures.len()))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("rollback oracle equivalence", rollback_oracle),
        ("best score monotonicity", monotonicity),
        ("lesson record conformance", lesson_conformance),
        ("deterministic end-to-end degradation", degradation_end_to_end),
        ("termination", termination),
        ("metrics", metrics),
        ("loop shape", loop_shape),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name} ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
