//! Chat-completion and embedding backends.
//!
//! Every provider is `Send + Sync`; the HTTP providers cap concurrent
//! requests internally.

mod http;

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpChatProvider, HttpConfig, HttpEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub model: String,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            model: String::new(),
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.system, &self.user)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("script: {0}")]
    Script(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("configuration: {0}")]
    Config(String),
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Hex sha256 of `system`, a NUL byte and `user`.
pub fn fingerprint(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Text between the first pair of triple backticks, minus a language tag.
/// Without a fence the trimmed input comes back.
pub fn extract_code_fence(text: &str) -> String {
    let Some(start) = text.find("```") else {
        return text.trim().to_string();
    };
    let after = &text[start + 3..];
    let body = match after.find('\n') {
        Some(nl) if !after[..nl].trim().contains(' ') => &after[nl + 1..],
        _ => after,
    };
    let end = body.find("```").unwrap_or(body.len());
    body[..end].trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub reply: String,
}

/// Replays canned replies. Entries with a fingerprint answer matching
/// requests (in script order per fingerprint); the rest answer any request in
/// order.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    keyed: Mutex<HashMap<String, VecDeque<String>>>,
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedProvider {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let p = Self::default();
        {
            let mut keyed = p.keyed.lock().expect("fresh mutex");
            let mut queue = p.queue.lock().expect("fresh mutex");
            for e in entries {
                match e.fingerprint {
                    Some(fp) => keyed.entry(fp).or_default().push_back(e.reply),
                    None => queue.push_back(e.reply),
                }
            }
        }
        p
    }

    pub fn from_replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|r| ScriptEntry {
            fingerprint: None,
            reply: r.into(),
        }))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Script(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::Script(format!("line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        let keyed: usize = self
            .keyed
            .lock()
            .expect("script lock")
            .values()
            .map(VecDeque::len)
            .sum();
        keyed + self.queue.lock().expect("script lock").len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let fp = req.fingerprint();
        if let Some(reply) = self
            .keyed
            .lock()
            .expect("script lock")
            .get_mut(&fp)
            .and_then(VecDeque::pop_front)
        {
            return Ok(reply);
        }
        self.queue
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(ProviderError::ScriptExhausted)
    }
}

/// Marker that checklist-validator prompts carry.
pub const CHECKLIST_MARKER: &str = "<checklist>";

/// Answers with the gold query of the question found in the prompt, and
/// approves every checklist validation.
#[derive(Debug, Default)]
pub struct GoldEchoProvider {
    gold: HashMap<String, String>,
}

impl GoldEchoProvider {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            gold: pairs.into_iter().collect(),
        }
    }
}

pub fn question_in_prompt(user: &str) -> Option<&str> {
    let start = user.rfind("<user_question>")? + "<user_question>".len();
    let end = start + user[start..].find("</user_question>")?;
    Some(user[start..end].trim())
}

impl ChatProvider for GoldEchoProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        if req.system.contains(CHECKLIST_MARKER) || req.user.contains(CHECKLIST_MARKER) {
            return Ok("OK".to_string());
        }
        let q = question_in_prompt(&req.user)
            .ok_or_else(|| ProviderError::Script("no question in prompt".into()))?;
        self.gold
            .get(q)
            .map(|c| format!("```cypher\n{c}\n```"))
            .ok_or_else(|| ProviderError::Script(format!("no gold query for question {q:?}")))
    }
}

/// Counts calls to the wrapped provider.
pub struct CountingProvider<P> {
    pub inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for CountingProvider<P> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
}

pub const LOCAL_EMBEDDING_DIM: usize = 512;

/// Hashed character-trigram term frequencies, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalTrigramEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for LocalTrigramEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut v = vec![0.0; LOCAL_EMBEDDING_DIM];
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        if chars.is_empty() {
            log::warn!("embedding empty text as a zero vector");
            return Ok(v);
        }
        let mut buf = String::new();
        let grams = if chars.len() < 3 {
            vec![&chars[..]]
        } else {
            chars.windows(3).collect()
        };
        for g in grams {
            buf.clear();
            buf.extend(g);
            v[(fnv1a(buf.as_bytes()) % LOCAL_EMBEDDING_DIM as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replies_then_exhausts() {
        let p = ScriptedProvider::from_replies(["only"]);
        let req = ChatRequest::new("s", "u");
        assert_eq!(p.chat(&req).unwrap(), "only");
        assert_eq!(p.chat(&req), Err(ProviderError::ScriptExhausted));
    }

    #[test]
    fn scripted_fingerprints_take_priority() {
        let req = ChatRequest::new("sys", "user");
        let p = ScriptedProvider::new([
            ScriptEntry {
                fingerprint: None,
                reply: "fallback".into(),
            },
            ScriptEntry {
                fingerprint: Some(req.fingerprint()),
                reply: "keyed".into(),
            },
        ]);
        assert_eq!(p.chat(&ChatRequest::new("x", "y")).unwrap(), "fallback");
        assert_eq!(p.chat(&req).unwrap(), "keyed");
        assert_eq!(p.remaining(), 0);
        assert_ne!(fingerprint("a", "bc"), fingerprint("ab", "c"));
    }

    #[test]
    fn fences() {
        assert_eq!(extract_code_fence("```cypher\nMATCH (n)\nRETURN n\n```"), "MATCH (n)\nRETURN n");
        assert_eq!(extract_code_fence("Here:\n```\nRETURN 1\n```\nbye"), "RETURN 1");
        assert_eq!(extract_code_fence("```RETURN 1```"), "RETURN 1");
        assert_eq!(extract_code_fence("  RETURN 1 "), "RETURN 1");
    }

    #[test]
    fn gold_echo() {
        let p = GoldEchoProvider::new([("Q?".to_string(), "RETURN 1".to_string())]);
        let req = ChatRequest::new("s", "<user_question>\nQ?\n</user_question>");
        assert_eq!(extract_code_fence(&p.chat(&req).unwrap()), "RETURN 1");
        let check = ChatRequest::new("s <checklist>", "anything");
        assert_eq!(p.chat(&check).unwrap(), "OK");
    }

    #[test]
    fn local_embeddings() {
        let e = LocalTrigramEmbedder;
        let a = e.embed("reaction products").unwrap();
        assert_eq!(a, e.embed("reaction products").unwrap());
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let b = e.embed("xyz").unwrap();
        let c = e.embed("abc").unwrap();
        assert_eq!(cosine(&b, &c), Some(0.0));
        assert_eq!(cosine(&e.embed("").unwrap(), &a), None);
        let s = cosine(&a, &e.embed("reactant products").unwrap()).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }
}
