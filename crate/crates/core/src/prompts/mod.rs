//! Prompt ladder rendering and one-shot exemplar selection.
//!
//! Each template is markdown: guideline blocks headed by a bold line, then a
//! final `**User Question**` block. Everything before that heading becomes the
//! system prompt; the exemplar (if any) and the question block form the user
//! prompt.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cypher::{find_smiles_literals, mask_question};
use crate::providers::{cosine, Embedder, ProviderError};
use crate::tasks::Setting;

pub const VERSIONS: std::ops::RangeInclusive<u8> = 1..=5;

const QUESTION_HEADING: &str = "**User Question**";

const SINGLE_TEMPLATES: [&str; 5] = [
    include_str!("../../assets/prompts/single-p1.md"),
    include_str!("../../assets/prompts/single-p2.md"),
    include_str!("../../assets/prompts/single-p3.md"),
    include_str!("../../assets/prompts/single-p4.md"),
    include_str!("../../assets/prompts/single-p5.md"),
];

const MULTI_TEMPLATES: [&str; 5] = [
    include_str!("../../assets/prompts/multi-p1.md"),
    include_str!("../../assets/prompts/multi-p2.md"),
    include_str!("../../assets/prompts/multi-p3.md"),
    include_str!("../../assets/prompts/multi-p4.md"),
    include_str!("../../assets/prompts/multi-p5.md"),
];

const SINGLE_BANK: &str = include_str!("../../assets/banks/single.jsonl");
const MULTI_BANK: &str = include_str!("../../assets/banks/multi.jsonl");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unresolved slot {{{0}}}")]
    UnresolvedSlot(String),
    #[error("no prompt version {0} (expected 1..=5)")]
    UnknownVersion(u8),
    #[error("template has no {QUESTION_HEADING} block")]
    MissingQuestionBlock,
    #[error("empty question")]
    EmptyQuestion,
    #[error("empty exemplar bank")]
    EmptyBank,
    #[error("bank entry {title:?}: {reason}")]
    BadEntry { title: String, reason: String },
    #[error("designated exemplar {0:?} missing from bank")]
    MissingDesignated(String),
    #[error("semantic selection needs an embedder")]
    NoEmbedder,
    #[error("zero-norm embedding for {0:?}")]
    ZeroNorm(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptVersion {
    pub setting: Setting,
    pub version: u8,
    /// Text before the question heading; has a `{schema}` slot.
    pub system_template: String,
    /// Question block; has a `{question}` slot.
    pub user_template: String,
}

impl PromptVersion {
    pub fn builtin(setting: Setting, version: u8) -> Result<Self, PromptError> {
        if !VERSIONS.contains(&version) {
            return Err(PromptError::UnknownVersion(version));
        }
        let idx = usize::from(version - 1);
        let text = match setting {
            Setting::SingleStep => SINGLE_TEMPLATES[idx],
            Setting::MultiStep => MULTI_TEMPLATES[idx],
        };
        Self::from_text(setting, version, text)
    }

    pub fn from_text(setting: Setting, version: u8, text: &str) -> Result<Self, PromptError> {
        let at = text
            .find(&format!("\n{QUESTION_HEADING}"))
            .map(|i| i + 1)
            .or_else(|| text.starts_with(QUESTION_HEADING).then_some(0))
            .ok_or(PromptError::MissingQuestionBlock)?;
        Ok(Self {
            setting,
            version,
            system_template: text[..at].trim_end().to_string(),
            user_template: text[at..].trim_end().to_string(),
        })
    }

    /// Reads `{single,multi}-p{version}.md` from `dir`.
    pub fn load(dir: &Path, setting: Setting, version: u8) -> Result<Self, PromptError> {
        let prefix = match setting {
            Setting::SingleStep => "single",
            Setting::MultiStep => "multi",
        };
        let path = dir.join(format!("{prefix}-p{version}.md"));
        let text = fs::read_to_string(&path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_text(setting, version, &text)
    }

    /// Stable ids of the instruction blocks, in template order.
    pub fn block_ids(&self) -> Vec<&'static str> {
        self.system_template
            .lines()
            .chain(self.user_template.lines())
            .filter_map(heading)
            .map(block_id)
            .collect()
    }
}

fn heading(line: &str) -> Option<&str> {
    let rest = line.strip_prefix("**")?;
    let end = rest.find("**")?;
    let h = rest[..end].trim();
    Some(h.strip_suffix(':').unwrap_or(h).trim())
}

fn block_id(heading: &str) -> &'static str {
    match heading {
        "General Guidelines" => "general-guidelines",
        "Contextual Retrieval" => "contextual-retrieval",
        "Relationship Directionality (Mandatory)" => "directionality",
        "Yield Handling" => "yield-handling",
        "Important Assumptions" => "assumptions",
        "Graph Constraints" | "Graph Structure and Path Lengths" => "graph-structure",
        "Query Constraints" => "query-constraints",
        "Output constraint" => "output-constraint",
        "User Question" => "user-question",
        _ => "other",
    }
}

/// Single-pass slot filling. `{{` and `}}` are literal braces; `{ident}`
/// must name a slot.
pub fn fill_slots(template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if let Some(inner) = tail.strip_prefix('{') {
            let ident_len = inner
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(inner.len());
            if ident_len > 0 && inner[ident_len..].starts_with('}') {
                let name = &inner[..ident_len];
                let value = slots
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnresolvedSlot(name.to_string()))?;
                out.push_str(value);
                rest = &tail[ident_len + 2..];
                continue;
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankEntry {
    pub title: String,
    pub question: String,
    pub intent: String,
    pub cypher: String,
}

impl BankEntry {
    /// Text embedded for semantic retrieval.
    pub fn retrieval_text(&self) -> String {
        format!("{} {}", self.question, self.intent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarBank {
    pub setting: Setting,
    pub entries: Vec<BankEntry>,
}

impl ExemplarBank {
    pub fn parse(setting: Setting, jsonl: &str) -> Result<Self, PromptError> {
        let mut entries = Vec::new();
        for (i, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: BankEntry = serde_json::from_str(line).map_err(|e| PromptError::BadEntry {
                title: format!("line {}", i + 1),
                reason: e.to_string(),
            })?;
            entries.push(e);
        }
        let bank = Self { setting, entries };
        bank.check()?;
        Ok(bank)
    }

    pub fn load(path: &Path, setting: Setting) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(setting, &text)
    }

    /// Entries must be SMILES-free with a nonempty intent.
    pub fn check(&self) -> Result<(), PromptError> {
        if self.entries.is_empty() {
            return Err(PromptError::EmptyBank);
        }
        for e in &self.entries {
            let bad = |reason: String| PromptError::BadEntry {
                title: e.title.clone(),
                reason,
            };
            if e.intent.trim().is_empty() {
                return Err(bad("empty intent".into()));
            }
            for text in [&e.question, &e.cypher] {
                let found = find_smiles_literals(text);
                if !found.is_empty() {
                    return Err(bad(format!("contains SMILES literal {:?}", found[0])));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, title: &str) -> Option<&BankEntry> {
        self.entries.iter().find(|e| e.title == title)
    }

    /// Titles used by the static one-shot strategy.
    pub fn static_titles(&self) -> &'static [&'static str] {
        match self.setting {
            Setting::SingleStep => &["Product Identification"],
            Setting::MultiStep => &[
                "Multi-Step Product Discovery",
                "Forward Synthesis Intermediate Identification",
            ],
        }
    }
}

pub fn default_banks() -> (ExemplarBank, ExemplarBank) {
    (
        ExemplarBank::parse(Setting::SingleStep, SINGLE_BANK).expect("shipped single-step bank"),
        ExemplarBank::parse(Setting::MultiStep, MULTI_BANK).expect("shipped multi-step bank"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "zs")]
    ZeroShot,
    #[serde(rename = "1s")]
    OneShotStatic,
    #[serde(rename = "1s-d-r")]
    OneShotRandom,
    #[serde(rename = "1s-d-s")]
    OneShotSemantic,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ZeroShot,
        Strategy::OneShotStatic,
        Strategy::OneShotRandom,
        Strategy::OneShotSemantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zs",
            Strategy::OneShotStatic => "1s",
            Strategy::OneShotRandom => "1s-d-r",
            Strategy::OneShotSemantic => "1s-d-s",
        }
    }

    pub fn is_one_shot(self) -> bool {
        self != Strategy::ZeroShot
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

/// The question with every quoted SMILES replaced by a generic `<SMILES>`
/// placeholder, matching the bank's notation.
pub fn masked_question(question: &str) -> String {
    let (masked, map) = mask_question(question, &|_| false);
    let mut out = masked;
    for k in 0..map.len() {
        out = out.replace(&crate::cypher::placeholder(k), "<SMILES>");
    }
    out
}

/// Precomputed entry embeddings for semantic selection.
pub struct SemanticIndex<'a> {
    bank: &'a ExemplarBank,
    vectors: Vec<Vec<f64>>,
}

impl<'a> SemanticIndex<'a> {
    pub fn new(bank: &'a ExemplarBank, embedder: &dyn Embedder) -> Result<Self, PromptError> {
        if bank.entries.is_empty() {
            return Err(PromptError::EmptyBank);
        }
        let vectors = bank
            .entries
            .iter()
            .map(|e| embedder.embed(&e.retrieval_text()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { bank, vectors })
    }

    /// Top-1 cosine match; the earliest entry wins ties.
    pub fn select(&self, question: &str, embedder: &dyn Embedder) -> Result<&'a BankEntry, PromptError> {
        let masked = masked_question(question);
        let q = embedder.embed(&masked)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.vectors.iter().enumerate() {
            let s = cosine(&q, v).ok_or_else(|| {
                let text = if q.iter().all(|x| *x == 0.0) {
                    masked.clone()
                } else {
                    self.bank.entries[i].title.clone()
                };
                PromptError::ZeroNorm(text)
            })?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.ok_or(PromptError::EmptyBank)?;
        Ok(&self.bank.entries[i])
    }
}

/// Exemplars to show for `strategy`: none for zero-shot, the designated
/// entries for static, one entry otherwise.
pub fn select_exemplar<'a>(
    strategy: Strategy,
    bank: &'a ExemplarBank,
    question: &str,
    embedder: Option<&dyn Embedder>,
    seed: u64,
) -> Result<Vec<&'a BankEntry>, PromptError> {
    if strategy.is_one_shot() && bank.entries.is_empty() {
        return Err(PromptError::EmptyBank);
    }
    match strategy {
        Strategy::ZeroShot => Ok(Vec::new()),
        Strategy::OneShotStatic => bank
            .static_titles()
            .iter()
            .map(|t| {
                bank.entry(t)
                    .ok_or_else(|| PromptError::MissingDesignated(t.to_string()))
            })
            .collect(),
        Strategy::OneShotRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(vec![&bank.entries[rng.random_range(0..bank.entries.len())]])
        }
        Strategy::OneShotSemantic => {
            let embedder = embedder.ok_or(PromptError::NoEmbedder)?;
            let index = SemanticIndex::new(bank, embedder)?;
            Ok(vec![index.select(question, embedder)?])
        }
    }
}

fn exemplar_block(exemplars: &[&BankEntry]) -> String {
    let mut out = String::from(if exemplars.len() == 1 {
        "**Example**\n"
    } else {
        "**Examples**\n"
    });
    for (i, e) in exemplars.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "Question: {}\nIntent: {}\n```cypher\n{}\n```\n",
            e.question, e.intent, e.cypher
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

pub fn render_prompt(
    version: &PromptVersion,
    schema_text: &str,
    question: &str,
    exemplars: &[&BankEntry],
) -> Result<RenderedPrompt, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let slots = [("schema", schema_text), ("question", question)];
    let system = fill_slots(&version.system_template, &slots)?;
    let question_block = fill_slots(&version.user_template, &slots)?;
    let user = if exemplars.is_empty() {
        question_block
    } else {
        format!("{}\n{}", exemplar_block(exemplars), question_block)
    };
    Ok(RenderedPrompt { system, user })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::LocalTrigramEmbedder;
    use std::collections::BTreeSet;

    const SCHEMA: &str = "(:Molecule {name})-[:REACTS_IN]->(:Reaction {id})";

    fn render(setting: Setting, v: u8, ex: &[&BankEntry]) -> RenderedPrompt {
        render_prompt(&PromptVersion::builtin(setting, v).unwrap(), SCHEMA, "Q?", ex).unwrap()
    }

    #[test]
    fn single_v3_has_directionality_lines() {
        let p = render(Setting::SingleStep, 3, &[]);
        for line in [
            "- (:Molecule)-[:REACTS_IN]->(:Reaction)",
            "- (:Reaction)-[:PRODUCES]->(:Molecule)",
            "- (:Reaction)-[:USES_AGENT]->(:Molecule)",
            "- (:Reaction)-[:USES_SOLVENT]->(:Molecule)",
        ] {
            assert!(p.system.contains(line), "{line}");
        }
        assert!(p.system.contains("Relationship Directionality (Mandatory)"));
        assert!(!render(Setting::SingleStep, 2, &[]).system.contains("Directionality"));
    }

    #[test]
    fn multi_v2_has_exact_length_guidance() {
        let p = render(Setting::MultiStep, 2, &[]);
        assert!(p.system.contains("WHERE size(relationships(p)) = Y"));
    }

    #[test]
    fn slots_filled_and_split() {
        for setting in [Setting::SingleStep, Setting::MultiStep] {
            for v in VERSIONS {
                let p = render(setting, v, &[]);
                assert!(p.system.contains(SCHEMA));
                assert!(p.user.starts_with(QUESTION_HEADING));
                assert!(p.user.contains("<user_question>\nQ?\n</user_question>"));
                for t in [&p.system, &p.user] {
                    assert!(!t.contains("{schema}") && !t.contains("{question}"));
                }
                assert_eq!(p, render(setting, v, &[]));
            }
        }
        let s5 = render(Setting::SingleStep, 5, &[]);
        assert!(s5.system.contains(r#"{name: "..."}"#));
    }

    #[test]
    fn ladder_is_monotone() {
        for setting in [Setting::SingleStep, Setting::MultiStep] {
            let sets: Vec<BTreeSet<&str>> = VERSIONS
                .map(|v| PromptVersion::builtin(setting, v).unwrap().block_ids().into_iter().collect())
                .collect();
            for w in sets.windows(2) {
                assert!(w[0].is_subset(&w[1]), "{setting:?}: {:?} vs {:?}", w[0], w[1]);
            }
            assert!(sets.iter().all(|s| !s.contains("other")));
        }
    }

    #[test]
    fn slot_errors_and_escapes() {
        assert_eq!(fill_slots("a {{b}} {x}", &[("x", "{y}")]).unwrap(), "a {b} {y}");
        assert!(matches!(fill_slots("{nope}", &[]), Err(PromptError::UnresolvedSlot(s)) if s == "nope"));
        assert_eq!(fill_slots("{ not a slot }", &[]).unwrap(), "{ not a slot }");
        let v = PromptVersion::builtin(Setting::SingleStep, 1).unwrap();
        assert!(matches!(render_prompt(&v, SCHEMA, " ", &[]), Err(PromptError::EmptyQuestion)));
        assert!(PromptVersion::builtin(Setting::SingleStep, 6).is_err());
    }

    #[test]
    fn banks_are_smiles_free_with_designated_entries() {
        let (single, multi) = default_banks();
        assert!(single.entry("Product Identification").is_some());
        assert!(multi.entry("Multi-Step Product Discovery").is_some());
        assert!(multi.entry("Forward Synthesis Intermediate Identification").is_some());
        for e in single.entries.iter().chain(&multi.entries) {
            assert!(find_smiles_literals(&e.question).is_empty(), "{}", e.title);
            assert!(find_smiles_literals(&e.cypher).is_empty(), "{}", e.title);
            assert!(!e.intent.trim().is_empty());
            crate::cypher::parse(&e.cypher).unwrap();
        }
        let bad = r#"{"title":"t","question":"q","intent":"i","cypher":"MATCH (m {name: 'CCO'}) RETURN m"}"#;
        assert!(ExemplarBank::parse(Setting::SingleStep, bad).is_err());
    }

    #[test]
    fn strategies() {
        let (single, multi) = default_banks();
        let e = LocalTrigramEmbedder;
        let q = r#"Which reactions produce "CCO"?"#;
        let stat = select_exemplar(Strategy::OneShotStatic, &single, q, None, 0).unwrap();
        assert_eq!(stat[0].title, "Product Identification");
        assert_eq!(select_exemplar(Strategy::OneShotStatic, &multi, q, None, 0).unwrap().len(), 2);
        assert!(select_exemplar(Strategy::ZeroShot, &single, q, None, 0).unwrap().is_empty());
        let r1 = select_exemplar(Strategy::OneShotRandom, &single, q, None, 9).unwrap();
        let r2 = select_exemplar(Strategy::OneShotRandom, &single, q, None, 9).unwrap();
        assert_eq!(r1, r2);
        assert!(matches!(
            select_exemplar(Strategy::OneShotSemantic, &single, q, None, 0),
            Err(PromptError::NoEmbedder)
        ));
        for target in &single.entries {
            let got = select_exemplar(Strategy::OneShotSemantic, &single, &target.retrieval_text(), Some(&e), 0)
                .unwrap();
            assert_eq!(got[0].title, target.title);
        }
        let a = select_exemplar(Strategy::OneShotSemantic, &single, r#"Which reactions produce "CCO"?"#, Some(&e), 0).unwrap();
        let b = select_exemplar(Strategy::OneShotSemantic, &single, r#"Which reactions produce "c1ccccc1Br"?"#, Some(&e), 0)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!("1s-d-s".parse::<Strategy>().unwrap(), Strategy::OneShotSemantic);
    }

    #[test]
    fn exemplar_goes_into_user_prompt() {
        let (single, _) = default_banks();
        let ex = single.entry("Product Identification").unwrap();
        let p = render(Setting::SingleStep, 1, &[ex]);
        assert!(p.user.starts_with("**Example**\nQuestion: "));
        assert!(p.user.contains(&ex.cypher));
        assert!(p.user.ends_with("</user_question>"));
        assert!(!p.system.contains(&ex.cypher));
    }
}
