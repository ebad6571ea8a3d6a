//! OpenAI-compatible HTTP backends.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};
use ureq::Agent;

use super::{ChatProvider, ChatRequest, Embedder, ProviderError};

const ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions or embeddings endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-4o-mini".into(),
            max_concurrency: 4,
            timeout_secs: 120,
            backoff_ms: 500,
        }
    }
}

/// Counting semaphore over a mutex and condvar.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

struct Client {
    agent: Agent,
    key: Option<String>,
    cfg: HttpConfig,
    gate: Gate,
}

enum Failure {
    Retry(String),
    Fatal(ProviderError),
}

impl Client {
    fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        if cfg.endpoint.is_empty() {
            return Err(ProviderError::Config("empty endpoint".into()));
        }
        let key = if cfg.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&cfg.api_key_env).ok()
        };
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            key,
            gate: Gate::new(cfg.max_concurrency),
            cfg,
        })
    }

    fn post_once(&self, body: &Json) -> Result<Json, Failure> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<Json>()
                .map_err(|e| Failure::Fatal(ProviderError::Response(e.to_string()))),
            401 | 403 => Err(Failure::Fatal(ProviderError::Auth(format!("status {status}")))),
            429 | 500..=599 => Err(Failure::Retry(format!("status {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(Failure::Fatal(ProviderError::Http(format!(
                    "status {status}: {}",
                    text.chars().take(300).collect::<String>()
                ))))
            }
        }
    }

    fn post(&self, body: &Json) -> Result<Json, ProviderError> {
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!("{} attempt {}: {msg}", self.cfg.endpoint, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ProviderError::Http(format!("{ATTEMPTS} attempts failed: {last}")))
    }
}

pub struct HttpChatProvider {
    client: Client,
}

impl HttpChatProvider {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(cfg)?,
        })
    }

    pub fn model(&self) -> &str {
        &self.client.cfg.model
    }
}

pub(crate) fn chat_body(req: &ChatRequest, default_model: &str) -> Json {
    let model = if req.model.is_empty() {
        default_model
    } else {
        &req.model
    };
    json!({
        "model": model,
        "temperature": req.temperature,
        "messages": [
            {"role": "system", "content": req.system},
            {"role": "user", "content": req.user},
        ],
    })
}

pub(crate) fn chat_reply(v: &Json) -> Result<String, ProviderError> {
    v.pointer("/choices/0/message/content")
        .and_then(Json::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Response("missing choices[0].message.content".into()))
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let v = self.client.post(&chat_body(req, &self.client.cfg.model))?;
        chat_reply(&v)
    }
}

pub struct HttpEmbedder {
    client: Client,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(cfg)?,
        })
    }
}

pub(crate) fn embedding_reply(v: &Json) -> Result<Vec<f64>, ProviderError> {
    v.pointer("/data/0/embedding")
        .and_then(Json::as_array)
        .and_then(|xs| xs.iter().map(Json::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| ProviderError::Response("missing data[0].embedding".into()))
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.is_empty() {
            log::warn!("embedding empty text");
        }
        let v = self.client.post(&json!({
            "model": self.client.cfg.model,
            "input": text,
        }))?;
        embedding_reply(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn wire_shapes() {
        let mut req = ChatRequest::new("sys", "usr");
        let body = chat_body(&req, "m0");
        assert_eq!(body["model"], "m0");
        assert_eq!(body["messages"][1]["content"], "usr");
        req.model = "m1".into();
        assert_eq!(chat_body(&req, "m0")["model"], "m1");
        let reply = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(chat_reply(&reply).unwrap(), "hi");
        assert!(chat_reply(&json!({})).is_err());
        let emb = json!({"data": [{"embedding": [0.5, 1.0]}]});
        assert_eq!(embedding_reply(&emb).unwrap(), vec![0.5, 1.0]);
    }

    /// Serves one canned response per connection, in order.
    fn serve(responses: Vec<(u16, &'static str)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut s, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = s.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| {
                                let (k, v) = l.split_once(':')?;
                                k.eq_ignore_ascii_case("content-length")
                                    .then(|| v.trim().parse::<usize>().ok())?
                            })
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                s.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn cfg(endpoint: String) -> HttpConfig {
        HttpConfig {
            endpoint,
            api_key_env: String::new(),
            backoff_ms: 1,
            timeout_secs: 5,
            ..HttpConfig::default()
        }
    }

    #[test]
    fn retries_transient_status() {
        let url = serve(vec![
            (503, "{}"),
            (200, r#"{"choices":[{"message":{"content":"MATCH (n) RETURN n"}}]}"#),
        ]);
        let p = HttpChatProvider::new(cfg(url)).unwrap();
        assert_eq!(p.chat(&ChatRequest::new("s", "u")).unwrap(), "MATCH (n) RETURN n");
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let url = serve(vec![(401, "{}")]);
        let p = HttpChatProvider::new(cfg(url)).unwrap();
        assert!(matches!(
            p.chat(&ChatRequest::new("s", "u")),
            Err(ProviderError::Auth(_))
        ));
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let url = serve(vec![(500, "{}"), (502, "{}"), (429, "{}")]);
        let p = HttpChatProvider::new(cfg(url)).unwrap();
        let err = p.chat(&ChatRequest::new("s", "u")).unwrap_err();
        assert!(err.to_string().contains("3 attempts"), "{err}");
    }
}
