//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::prompts::{Strategy, VERSIONS};
use crate::providers::HttpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Replays a JSONL script of `{fingerprint?, reply}` lines.
    Scripted,
    /// Answers every question with its gold query.
    GoldEcho,
    /// OpenAI-compatible chat-completions endpoint.
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub temperature: f64,
}

impl ProviderConfig {
    pub fn http(&self, default_endpoint: &str) -> HttpConfig {
        let d = HttpConfig::default();
        HttpConfig {
            endpoint: self.endpoint.clone().unwrap_or_else(|| default_endpoint.to_string()),
            api_key_env: self.api_key_env.clone().unwrap_or(d.api_key_env),
            model: self.model.clone().unwrap_or(d.model),
            max_concurrency: self.max_concurrency.unwrap_or(d.max_concurrency),
            timeout_secs: self.timeout_secs.unwrap_or(d.timeout_secs),
            backoff_ms: d.backoff_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Hashed character trigrams; offline and deterministic.
    Local,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Local,
            endpoint: None,
            api_key_env: None,
            model: None,
        }
    }
}

/// Optional replacements for the shipped prompt assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    /// Directory with `single-p{1..5}.md` and `multi-p{1..5}.md`.
    pub prompts_dir: Option<PathBuf>,
    pub single_bank: Option<PathBuf>,
    pub multi_bank: Option<PathBuf>,
    pub single_checklist: Option<PathBuf>,
    pub multi_checklist: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub suite: PathBuf,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "all_versions")]
    pub versions: Vec<u8>,
    #[serde(default)]
    pub cove: bool,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub assets: AssetConfig,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn all_versions() -> Vec<u8> {
    VERSIONS.collect()
}

fn default_concurrency() -> usize {
    4
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, RunError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.graph);
        fix(&mut self.suite);
        fix(&mut self.output);
        if let Some(s) = self.provider.script.as_mut() {
            fix(s);
        }
        let a = &mut self.assets;
        for p in [
            &mut a.prompts_dir,
            &mut a.single_bank,
            &mut a.multi_bank,
            &mut a.single_checklist,
            &mut a.multi_checklist,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let missing = |p: &Path, what: &str| {
            (!p.exists()).then(|| RunError::Config(format!("{what} {} does not exist", p.display())))
        };
        if let Some(e) = missing(&self.graph, "graph").or_else(|| missing(&self.suite, "suite")) {
            return Err(e);
        }
        if self.concurrency == 0 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        if self.strategies.is_empty() || self.versions.is_empty() {
            return Err(RunError::Config("strategies and versions must be nonempty".into()));
        }
        if let Some(v) = self.versions.iter().find(|v| !VERSIONS.contains(v)) {
            return Err(RunError::Config(format!("prompt version {v} outside 1..=5")));
        }
        match self.provider.kind {
            ProviderKind::Scripted => match &self.provider.script {
                None => return Err(RunError::Config("scripted provider needs `script`".into())),
                Some(p) => {
                    if let Some(e) = missing(p, "script") {
                        return Err(e);
                    }
                }
            },
            ProviderKind::Openai => {
                let env = self.provider.http("").api_key_env;
                if !env.is_empty() && std::env::var(&env).is_err() {
                    return Err(RunError::Config(format!(
                        "provider credentials missing: set {env}"
                    )));
                }
            }
            ProviderKind::GoldEcho => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let text = r#"
            graph = "g.jsonl"
            suite = "s.jsonl"
            output = "out"
            seed = 7
            strategies = ["zs", "1s-d-s"]
            versions = [1, 5]
            [provider]
            kind = "gold-echo"
        "#;
        let cfg = RunConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.graph, PathBuf::from("/base/g.jsonl"));
        assert_eq!(cfg.strategies, vec![Strategy::ZeroShot, Strategy::OneShotSemantic]);
        assert_eq!(cfg.embedder.kind, EmbedderKind::Local);
        assert_eq!(cfg.concurrency, 4);
        assert!(matches!(cfg.validate(), Err(RunError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "graph = 'g'\nsuite = 's'\noutput = 'o'\nbogus = 1\n[provider]\nkind = 'gold-echo'\n";
        assert!(RunConfig::from_toml(text, Path::new(".")).is_err());
    }
}
