//! Child-process scorer adapter speaking a line-delimited JSON protocol
//! over standard streams.
//!
//! Handshake (child -> parent, first line):
//!   {"protocol": "iqa-score/1", "name": str, "higher_is_better": bool}
//! Request:  {"id": str, "path": str}
//! Response: {"id": str, "score": number} or {"id": str, "error": str}
//! Shutdown: parent closes the child's stdin; child must exit 0.
//!
//! Each instance is one serial conversation. Parallelism means spawning
//! more instances, never interleaving requests on one pipe.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ScorerError;

pub const EXTERNAL_PROTOCOL: &str = "iqa-score/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub name: String,
    pub higher_is_better: bool,
}

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    path: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: String,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

pub struct ExternalScorer {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    reader: Option<JoinHandle<()>>,
    handshake: Handshake,
    timeout: Duration,
}

impl ExternalScorer {
    /// Spawn `command` via `sh -c` and complete the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::SpawnFailure(format!("{command}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });

        let first = match rx.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ScorerError::ProtocolError(format!("read failure: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(ScorerError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScorerError::ProtocolError(
                    "scorer exited before handshake".into(),
                ))
            }
        };
        let handshake: Handshake = serde_json::from_str(first.trim()).map_err(|e| {
            ScorerError::ProtocolError(format!("malformed handshake {first:?}: {e}"))
        })?;
        if handshake.protocol != EXTERNAL_PROTOCOL {
            return Err(ScorerError::ProtocolError(format!(
                "unsupported protocol {:?}",
                handshake.protocol
            )));
        }
        Ok(ExternalScorer {
            child,
            stdin: Some(stdin),
            lines: rx,
            reader: Some(reader),
            handshake,
            timeout,
        })
    }

    pub fn name(&self) -> &str {
        &self.handshake.name
    }

    pub fn higher_is_better(&self) -> bool {
        self.handshake.higher_is_better
    }

    /// One request/response exchange. The response must echo the request id;
    /// any other id is a protocol violation.
    pub fn score(&mut self, id: &str, path: &Path) -> Result<f64, ScorerError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ScorerError::ProtocolError("scorer already shut down".into()))?;
        let request = serde_json::to_string(&Request {
            id,
            path: &path.to_string_lossy(),
        })
        .expect("request serializes");
        writeln!(stdin, "{request}")
            .and_then(|_| stdin.flush())
            .map_err(|e| ScorerError::ProtocolError(format!("write failure: {e}")))?;

        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ScorerError::ProtocolError(format!("read failure: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(ScorerError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScorerError::ProtocolError(
                    "scorer exited mid-conversation".into(),
                ))
            }
        };
        let response: Response = serde_json::from_str(line.trim())
            .map_err(|e| ScorerError::ProtocolError(format!("malformed line {line:?}: {e}")))?;
        if response.id != id {
            return Err(ScorerError::ProtocolError(format!(
                "response id {:?} does not match request id {id:?}",
                response.id
            )));
        }
        if let Some(msg) = response.error {
            return Err(ScorerError::ProtocolError(format!(
                "scorer error for {id:?}: {msg}"
            )));
        }
        response
            .score
            .ok_or_else(|| ScorerError::ProtocolError(format!("response for {id:?} has no score")))
    }

    /// Close the child's stdin and wait for it to exit; returns its status.
    pub fn shutdown(mut self) -> Result<std::process::ExitStatus, ScorerError> {
        drop(self.stdin.take());
        let status = self
            .child
            .wait()
            .map_err(|e| ScorerError::ProtocolError(format!("wait failed: {e}")))?;
        if let Some(handle) = self.reader.take() {
            let _ = handle.join();
        }
        Ok(status)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        drop(self.stdin.take());
        // Give a well-behaved child a moment to exit, then force it. The
        // reader thread is detached rather than joined: a killed shell can
        // leave grandchildren holding the pipe open, and the thread exits
        // on its own once the last writer goes away.
        let deadline = std::time::Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if std::time::Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break;
                }
            }
        }
        drop(self.reader.take());
    }
}
