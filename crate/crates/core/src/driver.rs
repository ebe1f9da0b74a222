//! Wire types shared with the in-sandbox driver process.
//!
//! The driver is launched as `<driver-entry> <report-file> <job-file>`. It
//! reads a [`DriverJob`] from the job file, runs one test case, lets all
//! candidate output flow to stdout untouched, and writes a [`DriverReport`]
//! to the report file. It exits 0 whenever a report was written.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverJob {
    pub code: String,
    pub case_body: String,
    pub entry_point: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverVerdict {
    Pass,
    AssertionFailure,
    Exception,
    /// The driver itself could not run the job (garbled job file and similar).
    InternalError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverReport {
    pub verdict: DriverVerdict,
    #[serde(default)]
    pub exception_type: String,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub traceback: String,
}

impl DriverReport {
    pub fn pass() -> Self {
        Self {
            verdict: DriverVerdict::Pass,
            exception_type: String::new(),
            message: String::new(),
            traceback: String::new(),
        }
    }
}
