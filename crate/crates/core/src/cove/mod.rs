//! Chain-of-verification loop around query generation.
//!
//! Order per attempt: executability check, then either the deterministic
//! arrow rewrite plus checklist validation (executable) or an LLM correction
//! from the diagnostics (not executable). Flagged findings go to the
//! corrector. Corrections are capped; the validator and explain passes are not.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cypher::{explain, mask_smiles, placeholder, rewrite_text, unmask_smiles, MaskMap, Schema};
use crate::prompts::{fill_slots, PromptError, RenderedPrompt};
use crate::providers::{extract_code_fence, ChatProvider, ChatRequest, ProviderError};
use crate::tasks::Setting;

const SINGLE_CHECKLIST: &str = include_str!("../../assets/cove/checklist-single.jsonl");
const MULTI_CHECKLIST: &str = include_str!("../../assets/cove/checklist-multi.jsonl");
pub const VALIDATOR_TEMPLATE: &str = include_str!("../../assets/cove/validator.md");
pub const CORRECTOR_TEMPLATE: &str = include_str!("../../assets/cove/corrector.md");

#[derive(Debug, Error)]
pub enum CoveError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("checklist: {0}")]
    Checklist(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub setting: Setting,
    pub items: Vec<ChecklistItem>,
}

impl Checklist {
    pub fn parse(setting: Setting, jsonl: &str) -> Result<Self, CoveError> {
        let mut items: Vec<ChecklistItem> = Vec::new();
        for (i, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: ChecklistItem = serde_json::from_str(line)
                .map_err(|e| CoveError::Checklist(format!("line {}: {e}", i + 1)))?;
            if items.iter().any(|x| x.id == item.id) {
                return Err(CoveError::Checklist(format!("duplicate id {}", item.id)));
            }
            items.push(item);
        }
        if items.is_empty() {
            return Err(CoveError::Checklist("no items".into()));
        }
        Ok(Self { setting, items })
    }

    pub fn load(path: &Path, setting: Setting) -> Result<Self, CoveError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoveError::Checklist(format!("{}: {e}", path.display())))?;
        Self::parse(setting, &text)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    fn render(&self) -> String {
        self.items
            .iter()
            .map(|i| format!("- {}: {}", i.id, i.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn default_checklists() -> (Checklist, Checklist) {
    (
        Checklist::parse(Setting::SingleStep, SINGLE_CHECKLIST).expect("shipped single checklist"),
        Checklist::parse(Setting::MultiStep, MULTI_CHECKLIST).expect("shipped multi checklist"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub item_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub findings: Vec<Finding>,
    /// Set when the reply could not be parsed and was treated as a pass.
    pub warning: Option<String>,
}

/// Parses a validator reply: `OK`, or one `- id: message` line per finding.
pub fn parse_validator_reply(reply: &str, checklist: &Checklist) -> Validation {
    let body = if reply.contains("```") {
        extract_code_fence(reply)
    } else {
        reply.trim().to_string()
    };
    let bare = body.trim_matches(|c: char| c.is_whitespace() || c == '.' || c == '!');
    if bare.eq_ignore_ascii_case("ok") {
        return Validation::default();
    }
    let mut findings = Vec::new();
    for line in body.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((id, msg)) = line.split_once(':') else {
            continue;
        };
        let id = id.trim().trim_matches('`');
        if checklist.ids().any(|k| k == id) {
            findings.push(Finding {
                item_id: id.to_string(),
                message: msg.trim().to_string(),
            });
        }
    }
    if findings.is_empty() {
        let shown: String = body.chars().take(120).collect();
        let warning = format!("unparseable validator reply treated as pass: {shown:?}");
        log::warn!("{warning}");
        return Validation {
            findings,
            warning: Some(warning),
        };
    }
    Validation {
        findings,
        warning: None,
    }
}

/// Masks the question with the same placeholders as the query.
fn mask_with_map(text: &str, map: &MaskMap) -> String {
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(map.literals[k].len()));
    let mut out = text.to_string();
    for k in order {
        out = out.replace(&map.literals[k], &placeholder(k));
    }
    out
}

/// Shared inputs for the validator and corrector prompts.
pub struct CoveContext<'a> {
    pub schema_text: &'a str,
    pub schema: &'a Schema,
    pub question: &'a str,
    /// Molecule names to mask wherever they appear in a query.
    pub known: &'a (dyn Fn(&str) -> bool + Sync),
    pub model: &'a str,
    pub temperature: f64,
}

impl CoveContext<'_> {
    fn request(&self, user: String) -> ChatRequest {
        ChatRequest {
            system: String::new(),
            user,
            temperature: self.temperature,
            model: self.model.to_string(),
        }
    }
}

pub fn checklist_validate(
    query_masked: &str,
    question_masked: &str,
    checklist: &Checklist,
    ctx: &CoveContext,
    provider: &dyn ChatProvider,
) -> Result<Validation, CoveError> {
    let user = fill_slots(
        VALIDATOR_TEMPLATE,
        &[
            ("schema", ctx.schema_text),
            ("checklist", &checklist.render()),
            ("question", question_masked),
            ("query", query_masked),
        ],
    )?;
    let reply = provider.chat(&ctx.request(user))?;
    Ok(parse_validator_reply(&reply, checklist))
}

fn correct(
    query_masked: &str,
    question_masked: &str,
    issues: &str,
    ctx: &CoveContext,
    provider: &dyn ChatProvider,
) -> Result<String, CoveError> {
    let user = fill_slots(
        CORRECTOR_TEMPLATE,
        &[
            ("schema", ctx.schema_text),
            ("question", question_masked),
            ("query", query_masked),
            ("issues", issues),
        ],
    )?;
    Ok(extract_code_fence(&provider.chat(&ctx.request(user))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveConfig {
    pub enabled: bool,
    pub max_attempts: usize,
}

impl Default for CoveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveAttempt {
    pub query_text: String,
    pub explain_ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    pub direction_fixed: bool,
    pub checklist_findings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Whether this attempt's query was sent to the corrector.
    pub corrected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveStatus {
    /// Passed the checks; the final query is executed.
    Valid,
    /// Correction budget spent without a passing query.
    Exhausted,
    /// A provider call failed mid-loop.
    Errored,
    /// Verification disabled and the generated query is not executable.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveTrace {
    pub attempts: Vec<CoveAttempt>,
    pub terminal_status: CoveStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CoveTrace {
    pub fn corrections(&self) -> usize {
        self.attempts.iter().filter(|a| a.corrected).count()
    }

    /// Whether the validator flagged anything at any point.
    pub fn flagged(&self) -> bool {
        self.attempts.iter().any(|a| !a.checklist_findings.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveOutcome {
    /// Raw text of the generation reply.
    pub raw_reply: String,
    /// Query to execute, if any.
    pub final_query: Option<String>,
    pub trace: CoveTrace,
}

/// Generates a query for `prompt` and verifies it. With verification
/// disabled this is a single generation plus the executability check, and
/// the generated text is returned unchanged.
pub fn run_cove(
    prompt: &RenderedPrompt,
    checklist: &Checklist,
    ctx: &CoveContext,
    provider: &dyn ChatProvider,
    cfg: &CoveConfig,
) -> Result<CoveOutcome, ProviderError> {
    let req = ChatRequest {
        system: prompt.system.clone(),
        user: prompt.user.clone(),
        temperature: ctx.temperature,
        model: ctx.model.to_string(),
    };
    let raw_reply = provider.chat(&req)?;
    let query = extract_code_fence(&raw_reply);
    let (final_query, trace) = if cfg.enabled {
        verify(query, checklist, ctx, provider, cfg.max_attempts)
    } else {
        let report = explain(&query, ctx.schema);
        let attempt = CoveAttempt {
            explain_ok: report.executable,
            diagnostics: report.errors().map(|d| d.to_string()).collect(),
            query_text: query.clone(),
            ..CoveAttempt::default()
        };
        let status = if report.executable {
            CoveStatus::Valid
        } else {
            CoveStatus::Invalid
        };
        (
            // Direct prompting executes whatever came back.
            Some(query),
            CoveTrace {
                attempts: vec![attempt],
                terminal_status: status,
                error: None,
            },
        )
    };
    Ok(CoveOutcome {
        raw_reply,
        final_query,
        trace,
    })
}

fn verify(
    mut query: String,
    checklist: &Checklist,
    ctx: &CoveContext,
    provider: &dyn ChatProvider,
    max_corrections: usize,
) -> (Option<String>, CoveTrace) {
    let mut attempts = Vec::new();
    let mut corrections = 0;
    let finish = |attempts, status, error: Option<String>| CoveTrace {
        attempts,
        terminal_status: status,
        error,
    };
    loop {
        let mut attempt = CoveAttempt::default();
        let report = explain(&query, ctx.schema);
        attempt.explain_ok = report.executable;
        let issues = if report.executable {
            if let Ok(rw) = rewrite_text(&query) {
                if rw.changed > 0 {
                    attempt.direction_fixed = true;
                    query = rw.text;
                }
            }
            attempt.query_text = query.clone();
            let (masked, map) = mask_smiles(&query, ctx.known);
            let question = mask_with_map(ctx.question, &map);
            match checklist_validate(&masked, &question, checklist, ctx, provider) {
                Ok(v) => {
                    attempt.checklist_findings = v.findings;
                    attempt.warning = v.warning;
                }
                Err(e) => {
                    attempts.push(attempt);
                    return (None, finish(attempts, CoveStatus::Errored, Some(e.to_string())));
                }
            }
            if attempt.checklist_findings.is_empty() {
                attempts.push(attempt);
                return (Some(query), finish(attempts, CoveStatus::Valid, None));
            }
            attempt
                .checklist_findings
                .iter()
                .map(|f| format!("- {}: {}", f.item_id, f.message))
                .collect::<Vec<_>>()
                .join("\n")
        } else {
            attempt.query_text = query.clone();
            attempt.diagnostics = report.errors().map(|d| d.to_string()).collect();
            format!("The query is not executable:\n{}", report.error_summary())
        };
        if corrections >= max_corrections {
            attempts.push(attempt);
            return (None, finish(attempts, CoveStatus::Exhausted, None));
        }
        let (masked, map) = mask_smiles(&query, ctx.known);
        let question = mask_with_map(ctx.question, &map);
        attempt.corrected = true;
        corrections += 1;
        let fixed = match correct(&masked, &question, &issues, ctx, provider) {
            Ok(f) => f,
            Err(e) => {
                attempts.push(attempt);
                return (None, finish(attempts, CoveStatus::Errored, Some(e.to_string())));
            }
        };
        attempts.push(attempt);
        query = match unmask_smiles(&fixed, &map) {
            Ok(q) => q,
            Err(e) => {
                log::warn!("corrector output: {e}");
                fixed
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{render_prompt, PromptVersion};
    use crate::providers::{CountingProvider, ScriptedProvider};

    fn no_known(_: &str) -> bool {
        false
    }

    fn ctx<'a>(schema: &'a Schema) -> CoveContext<'a> {
        CoveContext {
            schema_text: "schema",
            schema,
            question: r#"Which reactions produce "CCO"?"#,
            known: &no_known,
            model: "",
            temperature: 0.0,
        }
    }

    fn prompt() -> RenderedPrompt {
        let v = PromptVersion::builtin(Setting::SingleStep, 1).unwrap();
        render_prompt(&v, "schema", r#"Which reactions produce "CCO"?"#, &[]).unwrap()
    }

    const GOOD: &str = r#"MATCH (m:Molecule {name: "CCO"})<-[:PRODUCES]-(r:Reaction) RETURN r.id"#;

    fn fenced(q: &str) -> String {
        format!("```cypher\n{q}\n```")
    }

    #[test]
    fn missing_return_is_corrected() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let p = ScriptedProvider::from_replies([
            fenced(r#"MATCH (m:Molecule {name: "CCO"})<-[:PRODUCES]-(r:Reaction)"#),
            fenced(r#"MATCH (m:Molecule {name: "<SMILES_0>"})<-[:PRODUCES]-(r:Reaction) RETURN r.id"#),
            "OK".to_string(),
        ]);
        let out = run_cove(&prompt(), &single, &ctx(&schema), &p, &CoveConfig::default()).unwrap();
        assert_eq!(out.trace.terminal_status, CoveStatus::Valid);
        assert_eq!(out.final_query.as_deref(), Some(GOOD));
        assert_eq!(out.trace.corrections(), 1);
        assert!(!out.trace.attempts[0].explain_ok);
        assert!(!out.trace.attempts[0].diagnostics.is_empty());
    }

    #[test]
    fn reversed_arrow_fixed_without_llm_correction() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let reversed = r#"MATCH (m:Molecule {name: "CCO"})-[:PRODUCES]->(r:Reaction) RETURN r.id"#;
        let p = CountingProvider::new(ScriptedProvider::from_replies([fenced(reversed), "OK".into()]));
        let out = run_cove(&prompt(), &single, &ctx(&schema), &p, &CoveConfig::default()).unwrap();
        assert_eq!(out.trace.terminal_status, CoveStatus::Valid);
        assert_eq!(out.final_query.as_deref(), Some(GOOD));
        assert!(out.trace.attempts[0].direction_fixed);
        assert_eq!(out.trace.corrections(), 0);
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn never_converging_exhausts_after_three() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let mut replies = vec![fenced(GOOD)];
        for _ in 0..4 {
            replies.push("- full-context-missing: no agents".into());
            replies.push(fenced(GOOD));
        }
        let p = CountingProvider::new(ScriptedProvider::from_replies(replies));
        let out = run_cove(&prompt(), &single, &ctx(&schema), &p, &CoveConfig::default()).unwrap();
        assert_eq!(out.trace.terminal_status, CoveStatus::Exhausted);
        assert_eq!(out.trace.corrections(), 3);
        assert_eq!(out.trace.attempts.len(), 4);
        assert_eq!(out.final_query, None);
        // generation, 4 validations, 3 corrections
        assert_eq!(p.calls(), 8);
    }

    #[test]
    fn disabled_is_direct_prompting() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let reversed = r#"MATCH (m:Molecule {name: "CCO"})-[:PRODUCES]->(r:Reaction) RETURN r.id"#;
        let p = CountingProvider::new(ScriptedProvider::from_replies([fenced(reversed)]));
        let cfg = CoveConfig {
            enabled: false,
            ..CoveConfig::default()
        };
        let out = run_cove(&prompt(), &single, &ctx(&schema), &p, &cfg).unwrap();
        assert_eq!(out.final_query.as_deref(), Some(reversed));
        assert_eq!(p.calls(), 1);
        assert_eq!(out.trace.attempts.len(), 1);
        assert!(!out.trace.attempts[0].direction_fixed);
    }

    #[test]
    fn provider_failure_keeps_trace() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let p = ScriptedProvider::from_replies([fenced(GOOD)]);
        let out = run_cove(&prompt(), &single, &ctx(&schema), &p, &CoveConfig::default()).unwrap();
        assert_eq!(out.trace.terminal_status, CoveStatus::Errored);
        assert_eq!(out.trace.attempts.len(), 1);
        assert!(out.trace.error.is_some());
    }

    #[test]
    fn validator_sees_masked_query() {
        let schema = Schema::default();
        let (single, _) = default_checklists();
        let c = ctx(&schema);
        let (masked, map) = mask_smiles(GOOD, c.known);
        let q = mask_with_map(c.question, &map);
        assert_eq!(q, r#"Which reactions produce "<SMILES_0>"?"#);
        let p = ScriptedProvider::from_replies(["OK"]);
        assert!(checklist_validate(&masked, &q, &single, &c, &p).unwrap().findings.is_empty());
    }

    #[test]
    fn reply_parsing() {
        let (single, multi) = default_checklists();
        assert_eq!(parse_validator_reply("OK", &single), Validation::default());
        assert_eq!(parse_validator_reply(" ok. ", &single), Validation::default());
        let v = parse_validator_reply("- full-context-missing: agents not bound", &single);
        assert_eq!(
            v.findings,
            vec![Finding {
                item_id: "full-context-missing".into(),
                message: "agents not bound".into()
            }]
        );
        let v = parse_validator_reply("looks fine to me I guess", &single);
        assert!(v.findings.is_empty() && v.warning.is_some());
        let v = parse_validator_reply("* `hop-count`: wrong\n- bogus: x\n- single-return: two", &multi);
        assert_eq!(v.findings.len(), 2);
    }

    #[test]
    fn checklists_cover_reported_failure_modes() {
        let (single, multi) = default_checklists();
        let m: Vec<&str> = multi.ids().collect();
        assert!(m.contains(&"endpoint-anchoring") && m.contains(&"traversal-direction"));
        assert!(m.contains(&"hop-count") && m.contains(&"bipartite-alternation"));
        let s: Vec<&str> = single.ids().collect();
        assert!(s.contains(&"full-context-missing") && s.contains(&"collect-distinct-missing"));
        assert!(Checklist::parse(Setting::SingleStep, "").is_err());
        let dup = "{\"id\":\"a\",\"description\":\"x\"}\n{\"id\":\"a\",\"description\":\"y\"}";
        assert!(Checklist::parse(Setting::SingleStep, dup).is_err());
    }
}
