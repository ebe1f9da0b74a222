//! Pluggable case executors: a real child-process executor and a scripted one.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::driver::{DriverJob, DriverReport, DriverVerdict};
use crate::task::{Task, TestCase};

/// Hex SHA-256 of a program text; the key scripted executors use.
pub fn code_digest(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub timeout: Duration,
}

impl Limits {
    pub fn for_task(task: &Task, override_s: Option<f64>) -> Self {
        let secs = override_s.unwrap_or(task.timeout_s);
        Self {
            timeout: Duration::from_secs_f64(secs.max(0.0)),
        }
    }
}

/// What came back from running one case, before verdict classification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCaseRun {
    /// `None` only when the run was killed for exceeding its time limit.
    pub report: Option<DriverReport>,
    pub stdout: String,
    pub timed_out: bool,
    pub wall_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("sandbox could not start: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("sandbox i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("driver wrote no report for case {case_id} (exit status {status}); stderr: {stderr}")]
    MissingReport {
        case_id: String,
        status: String,
        stderr: String,
    },
    #[error("driver report for case {case_id} does not parse: {message}")]
    BadReport { case_id: String, message: String },
    #[error("driver internal error on case {case_id}: {message}")]
    Driver { case_id: String, message: String },
    #[error("no scripted run for program {digest} case {case_id}")]
    Unscripted { digest: String, case_id: String },
}

pub trait Executor: Send + Sync {
    fn run_case(
        &self,
        code: &str,
        task: &Task,
        case: &TestCase,
        limits: &Limits,
    ) -> Result<RawCaseRun, ExecutorError>;
}

impl<E: Executor + ?Sized> Executor for &E {
    fn run_case(
        &self,
        code: &str,
        task: &Task,
        case: &TestCase,
        limits: &Limits,
    ) -> Result<RawCaseRun, ExecutorError> {
        (**self).run_case(code, task, case, limits)
    }
}

impl<E: Executor + ?Sized> Executor for Box<E> {
    fn run_case(
        &self,
        code: &str,
        task: &Task,
        case: &TestCase,
        limits: &Limits,
    ) -> Result<RawCaseRun, ExecutorError> {
        (**self).run_case(code, task, case, limits)
    }
}

/// Canned outcome of one case in the scripted executor's file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCase {
    pub verdict: ScriptedVerdict,
    #[serde(default)]
    pub exception_type: String,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub traceback: String,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedVerdict {
    Pass,
    AssertionFailure,
    Exception,
    Timeout,
    InternalError,
}

impl ScriptedCase {
    fn new(verdict: ScriptedVerdict, exception_type: &str, message: &str) -> Self {
        Self {
            verdict,
            exception_type: exception_type.into(),
            message: message.into(),
            traceback: String::new(),
            stdout: String::new(),
            wall_ms: 0,
        }
    }

    pub fn pass() -> Self {
        Self::new(ScriptedVerdict::Pass, "", "")
    }

    pub fn wrong_answer(message: &str) -> Self {
        Self::new(ScriptedVerdict::AssertionFailure, "AssertionError", message)
    }

    pub fn runtime_error(exception_type: &str, message: &str) -> Self {
        Self::new(ScriptedVerdict::Exception, exception_type, message)
    }

    pub fn timeout() -> Self {
        Self::new(ScriptedVerdict::Timeout, "", "")
    }

    pub fn with_stdout(mut self, stdout: &str) -> Self {
        self.stdout = stdout.into();
        self
    }

    pub fn with_traceback(mut self, traceback: &str) -> Self {
        self.traceback = traceback.into();
        self
    }

    fn to_raw(&self) -> RawCaseRun {
        let verdict = match self.verdict {
            ScriptedVerdict::Timeout => {
                return RawCaseRun {
                    report: None,
                    stdout: self.stdout.clone(),
                    timed_out: true,
                    wall_ms: self.wall_ms,
                }
            }
            ScriptedVerdict::Pass => DriverVerdict::Pass,
            ScriptedVerdict::AssertionFailure => DriverVerdict::AssertionFailure,
            ScriptedVerdict::Exception => DriverVerdict::Exception,
            ScriptedVerdict::InternalError => DriverVerdict::InternalError,
        };
        RawCaseRun {
            report: Some(DriverReport {
                verdict,
                exception_type: self.exception_type.clone(),
                message: self.message.clone(),
                traceback: self.traceback.clone(),
            }),
            stdout: self.stdout.clone(),
            timed_out: false,
            wall_ms: self.wall_ms,
        }
    }
}

/// One program entry of a scripted-executor file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedProgram {
    pub code: String,
    pub cases: BTreeMap<String, ScriptedCase>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecutorScript {
    pub programs: Vec<ScriptedProgram>,
}

/// Deterministic executor answering from outcomes registered per program digest.
#[derive(Debug, Clone, Default)]
pub struct ScriptedExecutor {
    programs: HashMap<String, BTreeMap<String, ScriptedCase>>,
}

impl ScriptedExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, code: &str, case_id: &str, case: ScriptedCase) -> &mut Self {
        self.programs
            .entry(code_digest(code))
            .or_default()
            .insert(case_id.to_string(), case);
        self
    }

    pub fn register_all<'a>(
        &mut self,
        code: &str,
        cases: impl IntoIterator<Item = (&'a str, ScriptedCase)>,
    ) -> &mut Self {
        for (id, case) in cases {
            self.register(code, id, case);
        }
        self
    }

    pub fn from_script(script: ExecutorScript) -> Self {
        let mut exec = Self::new();
        for program in script.programs {
            for (id, case) in program.cases {
                exec.register(&program.code, &id, case);
            }
        }
        exec
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExecutorError> {
        let text = fs::read_to_string(path)?;
        let script: ExecutorScript = serde_json::from_str(&text).map_err(|e| {
            ExecutorError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })?;
        Ok(Self::from_script(script))
    }
}

impl Executor for ScriptedExecutor {
    fn run_case(
        &self,
        code: &str,
        _task: &Task,
        case: &TestCase,
        _limits: &Limits,
    ) -> Result<RawCaseRun, ExecutorError> {
        let digest = code_digest(code);
        self.programs
            .get(&digest)
            .and_then(|cases| cases.get(&case.case_id))
            .map(ScriptedCase::to_raw)
            .ok_or(ExecutorError::Unscripted {
                digest,
                case_id: case.case_id.clone(),
            })
    }
}

/// Runs each case in a fresh driver child process inside a throwaway directory.
///
/// Isolation beyond a temp working directory and a scrubbed environment (no
/// network, filesystem jails) is expected from the OS layer the process runs under.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    program: PathBuf,
    args: Vec<String>,
}

impl ProcessExecutor {
    /// `program` plus leading `args` form the driver entry; report and job
    /// paths are appended.
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a whitespace-separated command such as `python3 driver.py`.
    pub fn from_command_line(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

impl Executor for ProcessExecutor {
    fn run_case(
        &self,
        code: &str,
        task: &Task,
        case: &TestCase,
        limits: &Limits,
    ) -> Result<RawCaseRun, ExecutorError> {
        let dir = tempfile::tempdir()?;
        let job_path = dir.path().join("job.json");
        let report_path = dir.path().join("report.json");
        let job = DriverJob {
            code: code.to_string(),
            case_body: case.body.clone(),
            entry_point: task.entry_point.clone(),
        };
        fs::write(&job_path, serde_json::to_vec(&job).expect("job serializes"))?;

        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg(&report_path)
            .arg(&job_path)
            .current_dir(dir.path())
            .env_clear()
            .env("HOME", dir.path())
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(ExecutorError::Spawn)?;
        let mut stdout_pipe = child.stdout.take().expect("stdout piped");
        let mut stderr_pipe = child.stderr.take().expect("stderr piped");
        let stdout_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout_pipe.read_to_end(&mut buf);
            buf
        });
        let stderr_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr_pipe.read_to_end(&mut buf);
            buf
        });

        let status = child.wait_timeout(limits.timeout)?;
        let timed_out = status.is_none();
        let status = match status {
            Some(s) => s,
            None => {
                let _ = child.kill();
                child.wait()?
            }
        };
        let wall_ms = started.elapsed().as_millis() as u64;
        let stdout = String::from_utf8_lossy(&stdout_reader.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&stderr_reader.join().unwrap_or_default()).into_owned();

        if timed_out {
            return Ok(RawCaseRun {
                report: None,
                stdout,
                timed_out: true,
                wall_ms,
            });
        }
        let text = match fs::read_to_string(&report_path) {
            Ok(t) => t,
            Err(_) => {
                return Err(ExecutorError::MissingReport {
                    case_id: case.case_id.clone(),
                    status: status.to_string(),
                    stderr,
                })
            }
        };
        let report: DriverReport =
            serde_json::from_str(&text).map_err(|e| ExecutorError::BadReport {
                case_id: case.case_id.clone(),
                message: e.to_string(),
            })?;
        Ok(RawCaseRun {
            report: Some(report),
            stdout,
            timed_out: false,
            wall_ms,
        })
    }
}
