//! Transports carrying one JSON object per line to an external evaluator.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::OracleError;

/// A line-oriented request/response channel. Responses may arrive in any
/// order; matching by id is the caller's job.
pub trait OracleTransport: Send {
    /// Send one newline-terminated request line. `id` is the request id, for
    /// transports that address messages by name.
    fn submit(&mut self, id: u64, line: &str) -> Result<(), OracleError>;

    /// Wait up to `timeout` for any single response line.
    fn receive(&mut self, timeout: Duration) -> Result<String, OracleError>;
}

/// Child process speaking the protocol on its standard streams.
///
/// stdout is drained by a background thread so a slow reader can never
/// deadlock the child; stderr passes through for the evaluator's own logs.
pub struct SubprocessTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl SubprocessTransport {
    pub fn spawn(command: &[String]) -> Result<Self, OracleError> {
        if command.is_empty() {
            return Err(OracleError::Config("subprocess command must be nonempty".into()));
        }
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| OracleError::Spawn { command: command.to_vec(), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            use std::io::BufRead;
            let reader = std::io::BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        Ok(Self { child, stdin, lines: rx })
    }
}

impl OracleTransport for SubprocessTransport {
    fn submit(&mut self, _id: u64, line: &str) -> Result<(), OracleError> {
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| OracleError::Transport(format!("writing request: {e}")))
    }

    fn receive(&mut self, timeout: Duration) -> Result<String, OracleError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(OracleError::Transport(format!("reading reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(OracleError::ReceiveTimeout { timeout }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(OracleError::Transport("oracle closed its output stream".into()))
            }
        }
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// File-exchange transport for batch schedulers: request `req-<id>.json`
/// goes into one directory, any `resp-*.json` appearing in the other is a
/// response. Files are claimed (renamed) before reading so concurrent
/// pollers never race on a half-taken response.
pub struct DirectoryTransport {
    requests_dir: PathBuf,
    responses_dir: PathBuf,
    poll_interval: Duration,
}

impl DirectoryTransport {
    pub fn new(
        requests_dir: PathBuf,
        responses_dir: PathBuf,
        poll_interval: Duration,
    ) -> Result<Self, OracleError> {
        for dir in [&requests_dir, &responses_dir] {
            std::fs::create_dir_all(dir)
                .map_err(|e| OracleError::Config(format!("creating {}: {e}", dir.display())))?;
        }
        Ok(Self { requests_dir, responses_dir, poll_interval })
    }
}

impl OracleTransport for DirectoryTransport {
    fn submit(&mut self, id: u64, line: &str) -> Result<(), OracleError> {
        let staged = self.requests_dir.join(format!(".req-{id}.json.tmp"));
        let target = self.requests_dir.join(format!("req-{id}.json"));
        std::fs::write(&staged, format!("{line}\n"))
            .and_then(|_| std::fs::rename(&staged, &target))
            .map_err(|e| OracleError::Transport(format!("writing {}: {e}", target.display())))
    }

    fn receive(&mut self, timeout: Duration) -> Result<String, OracleError> {
        let deadline = Instant::now() + timeout;
        loop {
            let mut names: Vec<PathBuf> = std::fs::read_dir(&self.responses_dir)
                .map_err(|e| OracleError::Transport(format!("listing responses: {e}")))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("resp-") && n.ends_with(".json"))
                })
                .collect();
            names.sort();
            for path in names {
                let claimed = path.with_extension("json.claimed");
                if std::fs::rename(&path, &claimed).is_ok() {
                    let text = std::fs::read_to_string(&claimed).map_err(|e| {
                        OracleError::Transport(format!("reading {}: {e}", claimed.display()))
                    })?;
                    let _ = std::fs::remove_file(&claimed);
                    return Ok(text.trim_end().to_string());
                }
            }
            if Instant::now() >= deadline {
                return Err(OracleError::ReceiveTimeout { timeout });
            }
            std::thread::sleep(self.poll_interval.min(deadline - Instant::now()));
        }
    }
}
