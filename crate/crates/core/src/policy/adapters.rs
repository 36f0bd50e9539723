use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{PolicyBackend, PolicyError, PolicyRequest, RequestKind, Semaphore};

/// Runs a shell command per call: one JSON request on stdin, one
/// `{"completion": str}` object expected on stdout.
#[derive(Debug)]
pub struct SubprocessPolicy {
    command: String,
    timeout: Duration,
    slots: Semaphore,
}

#[derive(Deserialize)]
struct CompletionReply {
    completion: String,
}

impl SubprocessPolicy {
    pub fn new(command: String, timeout: Duration, parallelism: usize) -> Self {
        Self {
            command,
            timeout,
            slots: Semaphore::new(parallelism),
        }
    }
}

impl PolicyBackend for SubprocessPolicy {
    fn complete(&self, _problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError> {
        let _permit = self.slots.acquire();
        let payload = serde_json::to_vec(req).expect("request serializes");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| PolicyError::Config(format!("cannot start policy command: {e}")))?;

        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });
        let mut stdout = child.stdout.take().expect("piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let mut stderr = child.stderr.take().expect("piped");
        let err_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });

        let start = Instant::now();
        let status = loop {
            if let Some(status) = child
                .try_wait()
                .map_err(|e| PolicyError::Transient(format!("waiting on policy command: {e}")))?
            {
                break status;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(PolicyError::Transient(format!(
                    "policy command timed out after {:?}",
                    self.timeout
                )));
            }
            thread::sleep(Duration::from_millis(5));
        };
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(PolicyError::Transient(format!(
                "policy command exited with {status}: {}",
                err.trim()
            )));
        }
        let reply: CompletionReply = serde_json::from_slice(&out)
            .map_err(|e| PolicyError::Protocol(format!("expected {{\"completion\": str}}: {e}")))?;
        Ok(reply.completion)
    }
}

/// Chat-completions style endpoint: POST `{model, messages, temperature}`,
/// read `choices[0].message.content`.
#[derive(Debug)]
pub struct HttpPolicy {
    url: String,
    model: String,
    bearer_token: Option<String>,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl HttpPolicy {
    pub fn new(
        url: String,
        model: String,
        bearer_token: Option<String>,
        timeout: Duration,
        parallelism: usize,
    ) -> Self {
        Self {
            url,
            model,
            bearer_token,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            slots: Semaphore::new(parallelism),
        }
    }

    pub(crate) fn body(&self, req: &PolicyRequest) -> serde_json::Value {
        let content = match (&req.kind, &req.prefix) {
            (RequestKind::PrefixCompletion, Some(prefix)) => format!(
                "{}\n\nContinue the partial program below. Reply with only the code that comes after it.\n\n{}",
                req.prompt, prefix
            ),
            _ => req.prompt.clone(),
        };
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": req.temperature,
        })
    }
}

/// Drop a surrounding Markdown code fence if the model added one.
pub(crate) fn strip_code_fence(text: &str) -> String {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        if let Some(body) = rest.strip_suffix("```") {
            let body = body.split_once('\n').map_or("", |(_, b)| b);
            return body.to_owned();
        }
    }
    text.to_owned()
}

impl PolicyBackend for HttpPolicy {
    fn complete(&self, _problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError> {
        let _permit = self.slots.acquire();
        let mut call = self.agent.post(&self.url);
        if let Some(token) = &self.bearer_token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = match call.send_json(self.body(req)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(PolicyError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(PolicyError::Config(format!("HTTP {code}: {text}")));
            }
            Err(e) => return Err(PolicyError::Transient(e.to_string())),
        };
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| PolicyError::Protocol(e.to_string()))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| PolicyError::Protocol("missing choices[0].message.content".into()))?;
        Ok(strip_code_fence(content))
    }
}
