//! Scorers reached over the line-delimited JSON scoring protocol.
//!
//! Request: `{"qid": str, "query": str, "passages": [{"pid": str, "text": str}]}`.
//! Response: `{"qid": str, "scores": [float]}`, aligned with the request and
//! each within `[0, 1]`. Transport failures (timeouts, dead processes, HTTP
//! errors) are retried; a malformed response fails immediately.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreError, Scorer, ScoringRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageJson {
    pub pid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequestJson {
    pub qid: String,
    pub query: String,
    pub passages: Vec<PassageJson>,
}

impl ScoreRequestJson {
    pub fn from_request(request: &ScoringRequest<'_>) -> Self {
        ScoreRequestJson {
            qid: request.qid.to_string(),
            query: request.query.to_string(),
            passages: request
                .passages
                .iter()
                .map(|p| PassageJson {
                    pid: p.pid.clone(),
                    text: p.text.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponseJson {
    pub qid: String,
    pub scores: Vec<f64>,
}

impl ScoreResponseJson {
    /// Parse one response line and check it against the request.
    pub fn parse_for(line: &str, request: &ScoreRequestJson) -> Result<Vec<f64>, ScoreError> {
        let resp: ScoreResponseJson = serde_json::from_str(line.trim())
            .map_err(|e| ScoreError(format!("malformed response: {e}")))?;
        if resp.qid != request.qid {
            return Err(ScoreError(format!(
                "response for query {:?} while scoring {:?}",
                resp.qid, request.qid
            )));
        }
        if resp.scores.len() != request.passages.len() {
            return Err(ScoreError(format!(
                "{} scores for {} passages",
                resp.scores.len(),
                request.passages.len()
            )));
        }
        if let Some(bad) = resp.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(ScoreError(format!("score {bad} outside [0, 1]")));
        }
        Ok(resp.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalOptions {
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            timeout: Duration::from_secs(60),
            retries: 2,
        }
    }
}

enum Attempt {
    Transport(String),
    Fatal(ScoreError),
}

/// Talks to a long-lived child process over its standard input and output,
/// one JSON object per line.
pub struct ProcessScorer {
    program: String,
    args: Vec<String>,
    options: ExternalOptions,
    name: String,
    conn: Mutex<Option<Connection>>,
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl ProcessScorer {
    pub fn new(program: impl Into<String>, args: Vec<String>, options: ExternalOptions) -> Self {
        let program = program.into();
        ProcessScorer {
            name: format!("process:{program}"),
            program,
            args,
            options,
            conn: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Connection, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start {}: {e}", self.program))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Connection { child, stdin, lines: rx })
    }

    fn attempt(&self, slot: &mut Option<Connection>, payload: &str, request: &ScoreRequestJson) -> Result<Vec<f64>, Attempt> {
        if slot.is_none() {
            *slot = Some(self.spawn().map_err(Attempt::Transport)?);
        }
        let conn = slot.as_mut().expect("connection");
        writeln!(conn.stdin, "{payload}")
            .and_then(|_| conn.stdin.flush())
            .map_err(|e| Attempt::Transport(format!("write failed: {e}")))?;
        match conn.lines.recv_timeout(self.options.timeout) {
            Ok(Ok(line)) => ScoreResponseJson::parse_for(&line, request).map_err(Attempt::Fatal),
            Ok(Err(e)) => Err(Attempt::Transport(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Attempt::Transport(format!(
                "no response within {:?}",
                self.options.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Attempt::Transport("scorer process exited".into())),
        }
    }
}

impl Scorer for ProcessScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        let body = ScoreRequestJson::from_request(request);
        let payload = serde_json::to_string(&body).expect("request serializes");
        let mut slot = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut last = String::new();
        for attempt in 0..=self.options.retries {
            match self.attempt(&mut slot, &payload, &body) {
                Ok(scores) => return Ok(scores),
                Err(Attempt::Fatal(e)) => {
                    *slot = None;
                    return Err(e);
                }
                Err(Attempt::Transport(msg)) => {
                    log::warn!("{}: attempt {} failed: {msg}", self.name, attempt + 1);
                    // The stream may be out of step; start a fresh process.
                    *slot = None;
                    last = msg;
                }
            }
        }
        Err(ScoreError(format!("giving up after {} attempts: {last}", self.options.retries + 1)))
    }
}

/// POSTs each request as JSON to an HTTP endpoint.
pub struct HttpScorer {
    endpoint: String,
    options: ExternalOptions,
    agent: ureq::Agent,
    name: String,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, options: ExternalOptions) -> Self {
        let endpoint = endpoint.into();
        HttpScorer {
            name: format!("http:{endpoint}"),
            agent: ureq::AgentBuilder::new().timeout(options.timeout).build(),
            endpoint,
            options,
        }
    }
}

impl Scorer for HttpScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        let body = ScoreRequestJson::from_request(request);
        let payload = serde_json::to_string(&body).expect("request serializes");
        let mut last = String::new();
        for attempt in 0..=self.options.retries {
            let result = self
                .agent
                .post(&self.endpoint)
                .set("Content-Type", "application/json")
                .send_string(&payload);
            match result {
                Ok(resp) => {
                    let text = resp
                        .into_string()
                        .map_err(|e| ScoreError(format!("unreadable response body: {e}")))?;
                    return ScoreResponseJson::parse_for(&text, &body);
                }
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(ScoreError(format!("endpoint answered HTTP {code}")));
                }
                Err(e) => {
                    log::warn!("{}: attempt {} failed: {e}", self.name, attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(ScoreError(format!("giving up after {} attempts: {last}", self.options.retries + 1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ScoreRequestJson {
        ScoreRequestJson {
            qid: "q1".into(),
            query: "black death".into(),
            passages: vec![
                PassageJson { pid: "d1#0".into(), text: "a".into() },
                PassageJson { pid: "d1#1".into(), text: "b".into() },
            ],
        }
    }

    #[test]
    fn request_wire_shape() {
        let json = serde_json::to_string(&request()).unwrap();
        assert_eq!(
            json,
            r#"{"qid":"q1","query":"black death","passages":[{"pid":"d1#0","text":"a"},{"pid":"d1#1","text":"b"}]}"#
        );
    }

    #[test]
    fn response_validation() {
        let req = request();
        assert_eq!(
            ScoreResponseJson::parse_for(r#"{"qid":"q1","scores":[0.25,1.0]}"#, &req).unwrap(),
            [0.25, 1.0]
        );
        for bad in [
            r#"{"qid":"q2","scores":[0.25,1.0]}"#,
            r#"{"qid":"q1","scores":[0.25]}"#,
            r#"{"qid":"q1","scores":[0.25,1.5]}"#,
            r#"{"qid":"q1","scores":[0.25,-0.1]}"#,
            "not json",
        ] {
            assert!(ScoreResponseJson::parse_for(bad, &req).is_err(), "{bad}");
        }
    }
}
