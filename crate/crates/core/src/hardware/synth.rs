//! External synthesis hook.
//!
//! Physical area/delay numbers come from whatever tool the user points
//! `PREFIXFORGE_SYNTH_CMD` at. The contract is minimal: the hook command is
//! invoked as `<command...> <netlist-path>`, must exit zero within the
//! timeout, and must print a JSON object `{"area": <float>, "delay": <float>}`
//! on standard output (extra fields and surrounding log lines are tolerated;
//! the last parseable line wins).

use super::export_netlist;
use crate::graph::{GraphError, PrefixGraph};
use serde::Deserialize;
use std::io::{Read, Write as _};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Environment variable naming the hook command line.
pub const SYNTH_CMD_ENV: &str = "PREFIXFORGE_SYNTH_CMD";

/// Default wall-clock budget for one synthesis run.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no synthesis hook configured; set {SYNTH_CMD_ENV} or pass a command")]
    NotConfigured,
    #[error("synthesis hook command is empty")]
    EmptyCommand,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("failed to run synthesis hook '{command}': {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("synthesis hook timed out after {timeout:?}; partial output:\n{log}")]
    Timeout { timeout: Duration, log: String },
    #[error("synthesis hook exited with {status}; output:\n{log}")]
    Failed { status: String, log: String },
    #[error("synthesis hook output is not usable ({reason}); output:\n{log}")]
    MalformedOutput { reason: String, log: String },
}

/// Area/delay report from the external tool, with its captured output kept
/// for diagnostics.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub area: f64,
    pub delay: f64,
    pub tool_log: String,
}

#[derive(Deserialize)]
struct HookOutput {
    area: f64,
    delay: f64,
}

/// A configured synthesis command plus timeout.
#[derive(Debug, Clone)]
pub struct SynthHook {
    argv: Vec<String>,
    timeout: Duration,
}

impl SynthHook {
    /// Splits the command line on whitespace (paths with spaces are not
    /// supported; wrap them in a script if needed).
    pub fn new(command: &str, timeout: Duration) -> Result<Self, SynthError> {
        let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(SynthError::EmptyCommand);
        }
        Ok(Self { argv, timeout })
    }

    /// Reads the hook from `PREFIXFORGE_SYNTH_CMD`; `Ok(None)` when unset.
    pub fn from_env() -> Result<Option<Self>, SynthError> {
        match std::env::var(SYNTH_CMD_ENV) {
            Ok(cmd) => Self::new(&cmd, DEFAULT_TIMEOUT).map(Some),
            Err(_) => Ok(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Writes the netlist to a temporary `.v` file and runs the hook on it.
    pub fn run(&self, netlist: &str) -> Result<SynthesisResult, SynthError> {
        let mut file = tempfile::Builder::new()
            .prefix("prefixforge_")
            .suffix(".v")
            .tempfile()
            .map_err(|source| SynthError::Spawn {
                command: self.argv.join(" "),
                source,
            })?;
        file.write_all(netlist.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|source| SynthError::Spawn {
                command: self.argv.join(" "),
                source,
            })?;

        let mut child = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(file.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SynthError::Spawn {
                command: self.argv.join(" "),
                source,
            })?;

        // Drain the pipes on threads so a chatty tool cannot deadlock against
        // a full pipe buffer while we poll for exit. The threads append into
        // shared buffers and are never joined: a grandchild holding the pipe
        // open (a tool that leaks a daemon) must not be able to wedge us.
        let stdout_buf = drain_on_thread(child.stdout.take().expect("stdout piped"));
        let stderr_buf = drain_on_thread(child.stderr.take().expect("stderr piped"));

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    let log = combine_log(&snapshot(&stdout_buf), &snapshot(&stderr_buf));
                    return Err(SynthError::Timeout {
                        timeout: self.timeout,
                        log,
                    });
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(20)),
                Err(source) => {
                    return Err(SynthError::Spawn {
                        command: self.argv.join(" "),
                        source,
                    })
                }
            }
        };

        // Give the drains a moment to observe EOF; a leaked grandchild can
        // keep the pipe open, in which case we take what arrived so far.
        let grace = Instant::now() + Duration::from_millis(500);
        while Instant::now() < grace {
            if Arc::strong_count(&stdout_buf) == 1 && Arc::strong_count(&stderr_buf) == 1 {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let stdout = snapshot(&stdout_buf);
        let stderr = snapshot(&stderr_buf);
        let log = combine_log(&stdout, &stderr);
        if !status.success() {
            return Err(SynthError::Failed {
                status: status.to_string(),
                log,
            });
        }
        let parsed = parse_hook_output(&stdout).ok_or_else(|| SynthError::MalformedOutput {
            reason: "no JSON object with \"area\" and \"delay\" found on stdout".into(),
            log: log.clone(),
        })?;
        if !(parsed.area.is_finite() && parsed.area > 0.0)
            || !(parsed.delay.is_finite() && parsed.delay > 0.0)
        {
            return Err(SynthError::MalformedOutput {
                reason: format!(
                    "area and delay must be positive finite numbers, got area={} delay={}",
                    parsed.area, parsed.delay
                ),
                log,
            });
        }
        Ok(SynthesisResult {
            area: parsed.area,
            delay: parsed.delay,
            tool_log: log,
        })
    }
}

/// Reads a pipe to exhaustion on a detached thread, accumulating into a
/// shared buffer. The thread drops its `Arc` clone when the pipe closes,
/// which doubles as the "drained" signal.
fn drain_on_thread<R: Read + Send + 'static>(mut pipe: R) -> Arc<Mutex<Vec<u8>>> {
    let buf = Arc::new(Mutex::new(Vec::new()));
    let writer = Arc::clone(&buf);
    std::thread::spawn(move || {
        let mut chunk = [0u8; 4096];
        while let Ok(read) = pipe.read(&mut chunk) {
            if read == 0 {
                break;
            }
            writer.lock().expect("log buffer poisoned").extend_from_slice(&chunk[..read]);
        }
    });
    buf
}

fn snapshot(buf: &Arc<Mutex<Vec<u8>>>) -> String {
    String::from_utf8_lossy(&buf.lock().expect("log buffer poisoned")).into_owned()
}

fn combine_log(stdout: &str, stderr: &str) -> String {
    if stderr.is_empty() {
        stdout.to_string()
    } else {
        format!("{stdout}\n--- stderr ---\n{stderr}")
    }
}

/// The whole stdout first, then individual lines from the end; tools often
/// print progress noise before the final report.
fn parse_hook_output(stdout: &str) -> Option<HookOutput> {
    if let Ok(parsed) = serde_json::from_str::<HookOutput>(stdout.trim()) {
        return Some(parsed);
    }
    stdout
        .lines()
        .rev()
        .find_map(|line| serde_json::from_str::<HookOutput>(line.trim()).ok())
}

/// Exports the graph as a netlist and measures it through the hook.
pub fn synthesize_external(
    graph: &PrefixGraph,
    hook: &SynthHook,
) -> Result<SynthesisResult, SynthError> {
    let netlist = export_netlist(graph, "prefixforge_dut")?;
    hook.run(&netlist)
}
