//! Backends that delegate to an external process or HTTP service.
//!
//! Both speak the same JSON messages. A request carries the item, the
//! rendered prompt and the cell seed; generation requests add the ability
//! and decoding settings, scoring requests add the response text. The reply
//! is `{"ok": true, "text": ...}` or `{"ok": true, "score": ...}`, or
//! `{"ok": false, "error": ...}`.
//!
//! The subprocess form writes one request per line to the child's stdin and
//! reads one reply per line from its stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, Decoding, GeneratorBackend, Item, ScorerBackend};
use crate::prompt::{format_ability, PromptTemplate, TemplateError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub kind: String,
    pub item: Item,
    pub prompt: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoding: Option<Decoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    #[serde(default = "yes")]
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn yes() -> bool {
    true
}

/// Templates used to render the `prompt` field of outgoing requests.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    student: PromptTemplate,
    scorer: PromptTemplate,
}

const STUDENT_SLOTS: [&str; 3] = ["ability", "passage", "question"];
const SCORER_SLOTS: [&str; 5] = ["max_score", "rubric", "passage", "question", "response"];

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            student: PromptTemplate::simulated_student(),
            scorer: PromptTemplate::scorer(),
        }
    }
}

impl PromptSet {
    /// Fails if a template uses a placeholder its request kind cannot fill.
    pub fn new(student: PromptTemplate, scorer: PromptTemplate) -> Result<Self, TemplateError> {
        for (t, allowed) in [(&student, &STUDENT_SLOTS[..]), (&scorer, &SCORER_SLOTS[..])] {
            if let Some(bad) = t.placeholders().into_iter().find(|p| !allowed.contains(p)) {
                return Err(TemplateError::Missing(bad.to_string()));
            }
        }
        Ok(Self { student, scorer })
    }
}

impl BackendRequest {
    pub fn generate(item: &Item, theta: f64, decoding: &Decoding, seed: u64, prompts: &PromptSet) -> Self {
        let ability = format_ability(theta);
        let prompt = prompts
            .student
            .render(&[
                ("ability", &ability),
                ("passage", &item.passage),
                ("question", &item.question),
            ])
            .expect("placeholders checked by PromptSet");
        Self {
            kind: "generate".into(),
            item: item.clone(),
            prompt,
            seed,
            theta: Some(theta),
            decoding: Some(decoding.clone()),
            text: None,
        }
    }

    pub fn score(item: &Item, text: &str, seed: u64, prompts: &PromptSet) -> Self {
        let max_score = (item.num_categories.saturating_sub(1)).to_string();
        let prompt = prompts
            .scorer
            .render(&[
                ("max_score", &max_score),
                ("rubric", &item.rubric),
                ("passage", &item.passage),
                ("question", &item.question),
                ("response", text),
            ])
            .expect("placeholders checked by PromptSet");
        Self {
            kind: "score".into(),
            item: item.clone(),
            prompt,
            seed,
            theta: None,
            decoding: None,
            text: Some(text.to_string()),
        }
    }
}

impl BackendResponse {
    fn into_text(self) -> Result<String, BackendError> {
        self.check()?;
        self.text
            .ok_or_else(|| BackendError::Protocol("reply has no `text`".into()))
    }

    fn into_score(self) -> Result<usize, BackendError> {
        self.check()?;
        self.score
            .ok_or_else(|| BackendError::Protocol("reply has no `score`".into()))
    }

    fn check(&self) -> Result<(), BackendError> {
        if self.ok {
            Ok(())
        } else {
            Err(BackendError::Rejected(
                self.error.clone().unwrap_or_else(|| "unspecified error".into()),
            ))
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Long-lived child process answering one JSON request per line. Calls are
/// serialized through a mutex.
pub struct SubprocessBackend {
    worker: Mutex<Worker>,
    prompts: PromptSet,
}

impl std::fmt::Debug for SubprocessBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessBackend").finish_non_exhaustive()
    }
}

impl SubprocessBackend {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            worker: Mutex::new(Worker { child, stdin, stdout }),
            prompts: PromptSet::default(),
        })
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut line = serde_json::to_string(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        let mut w = self
            .worker
            .lock()
            .map_err(|_| BackendError::Transport("worker lock poisoned".into()))?;
        w.stdin
            .write_all(line.as_bytes())
            .and_then(|_| w.stdin.flush())
            .map_err(|e| BackendError::Transport(format!("write to worker: {e}")))?;
        let mut reply = String::new();
        let n = w
            .stdout
            .read_line(&mut reply)
            .map_err(|e| BackendError::Transport(format!("read from worker: {e}")))?;
        if n == 0 {
            return Err(BackendError::Transport("worker closed its output".into()));
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| BackendError::Protocol(format!("bad reply: {e}")))
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        if let Ok(w) = self.worker.get_mut() {
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }
}

impl GeneratorBackend for SubprocessBackend {
    fn generate(&self, item: &Item, theta: f64, decoding: &Decoding, seed: u64) -> Result<String, BackendError> {
        self.call(&BackendRequest::generate(item, theta, decoding, seed, &self.prompts))?
            .into_text()
    }
}

impl ScorerBackend for SubprocessBackend {
    fn score(&self, item: &Item, text: &str, seed: u64) -> Result<usize, BackendError> {
        self.call(&BackendRequest::score(item, text, seed, &self.prompts))?.into_score()
    }
}

/// Service exposing `POST {base}/generate` and `POST {base}/score`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    prompts: PromptSet,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            prompts: PromptSet::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let url = format!("{}/{}", self.base_url, request.kind);
        let mut resp = self.agent.post(&url).send_json(request).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) => {
                BackendError::Rejected(format!("{url} returned {code}"))
            }
            other => BackendError::Transport(format!("{url}: {other}")),
        })?;
        resp.body_mut()
            .read_json::<BackendResponse>()
            .map_err(|e| BackendError::Protocol(format!("bad reply from {url}: {e}")))
    }
}

impl GeneratorBackend for HttpBackend {
    fn generate(&self, item: &Item, theta: f64, decoding: &Decoding, seed: u64) -> Result<String, BackendError> {
        self.call(&BackendRequest::generate(item, theta, decoding, seed, &self.prompts))?
            .into_text()
    }
}

impl ScorerBackend for HttpBackend {
    fn score(&self, item: &Item, text: &str, seed: u64) -> Result<usize, BackendError> {
        self.call(&BackendRequest::score(item, text, seed, &self.prompts))?.into_score()
    }
}
