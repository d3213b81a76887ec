//! Sandboxed subprocess adapter for external engines.
//!
//! Wire contract: the input table is written as CSV to a temporary path,
//! the configured command is invoked with that path appended as its final
//! argument, and the result is read back as CSV from stdout. A nonzero
//! exit becomes a runtime error, and the process is killed at the timeout.
//! Not registered by default.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::exec::{ExecLimits, ExecPhase, ExecResult, Executor};
use crate::table::{parse_table_csv, serialize_table_csv, Table};

pub struct SubprocessExecutor {
    /// Command and fixed arguments; the CSV path is appended as one more
    /// argument. The program source is passed via the `TABLETUNE_SOURCE`
    /// environment variable so shell quoting never mangles it.
    pub command: Vec<String>,
}

impl SubprocessExecutor {
    pub fn new(command: Vec<String>) -> SubprocessExecutor {
        SubprocessExecutor { command }
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&self, source: &str, table: &Table, limits: ExecLimits) -> ExecResult {
        if self.command.is_empty() {
            return ExecResult::runtime_error("subprocess executor has no command configured");
        }
        let dir = match tempdir() {
            Ok(d) => d,
            Err(e) => return ExecResult::runtime_error(format!("tempdir: {e}")),
        };
        let csv_path = dir.join("input.csv");
        if let Err(e) = std::fs::write(&csv_path, serialize_table_csv(table)) {
            let _ = std::fs::remove_dir_all(&dir);
            return ExecResult::runtime_error(format!("write input: {e}"));
        }

        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg(&csv_path)
            .env("TABLETUNE_SOURCE", source)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());

        let result = run_with_timeout(cmd, Duration::from_millis(limits.timeout_ms));
        let _ = std::fs::remove_dir_all(&dir);
        match result {
            RunOutcome::TimedOut => ExecResult::Error {
                phase: ExecPhase::Timeout,
                message: format!("killed after {} ms", limits.timeout_ms),
            },
            RunOutcome::Failed(msg) => ExecResult::runtime_error(msg),
            RunOutcome::Completed { status, stdout, stderr } => {
                if !status.success() {
                    return ExecResult::runtime_error(format!(
                        "exit status {status}: {}",
                        stderr.trim()
                    ));
                }
                match parse_table_csv(stdout.as_bytes(), "result") {
                    Ok(t) => ExecResult::Table { table: t, ordered: false }.collapse(),
                    Err(e) => ExecResult::runtime_error(format!("bad result csv: {e}")),
                }
            }
        }
    }

    fn has_explicit_ordering(&self, _source: &str) -> bool {
        // External engines make no ordering promise we can inspect.
        false
    }
}

enum RunOutcome {
    Completed {
        status: std::process::ExitStatus,
        stdout: String,
        stderr: String,
    },
    TimedOut,
    Failed(String),
}

fn run_with_timeout(mut cmd: Command, budget: Duration) -> RunOutcome {
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return RunOutcome::Failed(format!("spawn: {e}")),
    };
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                let mut stdout = String::new();
                let mut stderr = String::new();
                if let Some(mut s) = child.stdout.take() {
                    let _ = s.read_to_string(&mut stdout);
                }
                if let Some(mut s) = child.stderr.take() {
                    let _ = s.read_to_string(&mut stderr);
                }
                return RunOutcome::Completed { status, stdout, stderr };
            }
            Ok(None) => {
                if start.elapsed() > budget {
                    let _ = child.kill();
                    let _ = child.wait();
                    return RunOutcome::TimedOut;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return RunOutcome::Failed(format!("wait: {e}")),
        }
    }
}

fn tempdir() -> std::io::Result<std::path::PathBuf> {
    let base = std::env::temp_dir();
    // Unique-enough name from pid + a monotonic counter.
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = base.join(format!("tabletune-exec-{}-{n}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
