//! Benchmark task catalog, gold answers and suite files.

mod generate;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cypher::render::quote;
use crate::cypher::{self, ExecError, ExecOptions, ParseError, ResultTable, Value};
use crate::graph::KnowledgeGraph;

pub use generate::{generate_suite, generate_suite_with, multi_step_reachable, SuiteCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SingleStep,
    MultiStep,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::SingleStep => "single_step",
            Setting::MultiStep => "multi_step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerShape {
    ContextRows,
    PathList,
}

/// Which molecules (or reactions) can fill the `{target}` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eligibility {
    /// Molecules with at least one producing reaction.
    Produced,
    /// Molecules used as a solvent.
    Solvent,
    /// Molecules with a yield recorded on some producing edge.
    Yielded,
    /// Any reaction id.
    Reaction,
    /// Molecules at the end of an `n`-step forward chain.
    ChainEnd,
    /// Like `ChainEnd`, plus a `{source}` at the chain start.
    ChainBetween,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskType {
    pub key: &'static str,
    pub title: &'static str,
    pub setting: Setting,
    pub nl_template: &'static str,
    pub gold_cypher_template: &'static str,
    pub answer_shape: AnswerShape,
    pub eligibility: Eligibility,
}

impl TaskType {
    pub fn needs_steps(&self) -> bool {
        self.setting == Setting::MultiStep
    }

    /// Slots as written in a template, e.g. `target` for `{target}`.
    pub fn slots(template: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (i, _) in template.match_indices('{') {
            let rest = &template[i + 1..];
            let len = rest
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(rest.len());
            if len > 0 && rest[len..].starts_with('}') && !out.iter().any(|s| s == &rest[..len]) {
                out.push(rest[..len].to_string());
            }
        }
        out.sort();
        out
    }

    pub fn question(&self, p: &Params) -> String {
        fill(self.nl_template, p, |s| s.to_string())
    }

    pub fn cypher(&self, p: &Params) -> String {
        fill(self.gold_cypher_template, p, quote)
    }
}

/// Replaces slots in one pass; `{hops}` is derived as twice `{n}`.
fn fill(template: &str, p: &Params, literal: impl Fn(&str) -> String) -> String {
    let n = p.n.unwrap_or(0);
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let value = after.find('}').and_then(|end| {
            let v = match &after[..end] {
                "target" => literal(&p.target),
                "source" => literal(p.source.as_deref().unwrap_or("")),
                "hops" => (2 * n).to_string(),
                "n" => n.to_string(),
                _ => return None,
            };
            Some((v, end))
        });
        match value {
            Some((v, end)) => {
                out.push_str(&v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub type AnswerRow = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldAnswer {
    Rows(Vec<AnswerRow>),
    Paths(Vec<Vec<String>>),
}

impl GoldAnswer {
    pub fn is_empty(&self) -> bool {
        match self {
            GoldAnswer::Rows(r) => r.is_empty(),
            GoldAnswer::Paths(p) => p.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub task_type: String,
    pub params: Params,
    pub nl_question: String,
    pub gold_cypher: String,
    pub gold_answer: GoldAnswer,
}

impl TaskInstance {
    pub fn task(&self) -> Option<&'static TaskType> {
        task_type(&self.task_type)
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("gold query does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("gold query failed: {0}")]
    Exec(#[from] ExecError),
    #[error("gold query is not executable: {0}")]
    Invalid(String),
    #[error("empty gold answer")]
    EmptyAnswer,
    #[error("unknown task type `{0}`")]
    UnknownType(String),
    #[error("not enough eligible targets for {task}{}", n.map(|n| format!(" (n={n})")).unwrap_or_default())]
    Insufficient { task: String, n: Option<u32> },
    #[error("suite io: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("instance {id} does not match the graph: {reason}")]
    Mismatch { id: String, reason: String },
}

macro_rules! context_query {
    ($anchor:expr) => {
        concat!(
            $anchor,
            "\nOPTIONAL MATCH (reactant:Molecule)-[:REACTS_IN]->(r)
OPTIONAL MATCH (r)-[:PRODUCES]->(product:Molecule)
OPTIONAL MATCH (r)-[:USES_AGENT]->(agent:Molecule)
OPTIONAL MATCH (r)-[:USES_SOLVENT]->(solvent:Molecule)
RETURN r.id,
       collect(DISTINCT reactant.name) AS reactants,
       collect(DISTINCT product.name)  AS products,
       collect(DISTINCT agent.name)    AS agents,
       collect(DISTINCT solvent.name)  AS solvents"
        )
    };
}

macro_rules! path_query {
    ($start:expr) => {
        concat!(
            "MATCH p = (start:Molecule",
            $start,
            ")-[:REACTS_IN|PRODUCES*..{hops}]-(target:Molecule {name: {target}})
WHERE size(relationships(p)) = {hops}
  AND all(i IN range(0, size(nodes(p)) - 1) WHERE (i % 2 = 0 AND 'Molecule' IN labels(nodes(p)[i])) OR (i % 2 = 1 AND 'Reaction' IN labels(nodes(p)[i])))
  AND all(j IN range(0, size(relationships(p)) - 1) WHERE (j % 2 = 0 AND type(relationships(p)[j]) = 'REACTS_IN') OR (j % 2 = 1 AND type(relationships(p)[j]) = 'PRODUCES'))
WITH [x IN nodes(p) WHERE 'Reaction' IN labels(x)] AS reaction_nodes
RETURN DISTINCT reaction_nodes"
        )
    };
}

static CATALOG: [TaskType; 10] = [
    TaskType {
        key: "product_identification_retro",
        title: "Product Identification (Retro)",
        setting: Setting::SingleStep,
        nl_template: "Which reactions produce \"{target}\"? Give each reaction with its full context.",
        gold_cypher_template: context_query!(
            "MATCH (target:Molecule {name: {target}})<-[:PRODUCES]-(r:Reaction)"
        ),
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Produced,
    },
    TaskType {
        key: "precursor_identification",
        title: "Precursor Identification",
        setting: Setting::SingleStep,
        nl_template: "What precursors are used to make \"{target}\"? List the reactants of every reaction that yields it, with full reaction context.",
        gold_cypher_template: context_query!(
            "MATCH (target:Molecule {name: {target}})<-[:PRODUCES]-(r:Reaction)"
        ),
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Produced,
    },
    TaskType {
        key: "agent_identification",
        title: "Agent Identification",
        setting: Setting::SingleStep,
        nl_template: "Which agents are used in the reactions that synthesize \"{target}\"? Include the full reaction context.",
        gold_cypher_template: context_query!(
            "MATCH (target:Molecule {name: {target}})<-[:PRODUCES]-(r:Reaction)"
        ),
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Produced,
    },
    TaskType {
        key: "solvent_identification",
        title: "Solvent Identification",
        setting: Setting::SingleStep,
        nl_template: "In which reactions is \"{target}\" used as a solvent? Give each reaction with its full context.",
        gold_cypher_template: context_query!(
            "MATCH (target:Molecule {name: {target}})<-[:USES_SOLVENT]-(r:Reaction)"
        ),
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Solvent,
    },
    TaskType {
        key: "best_yielding_reaction",
        title: "Best-Yielding Reaction",
        setting: Setting::SingleStep,
        nl_template: "Which reaction gives the highest yield of \"{target}\"? Return that reaction, its yield and its full context.",
        gold_cypher_template: "MATCH (target:Molecule {name: {target}})<-[rel:PRODUCES]-(r:Reaction)
WHERE rel.yield IS NOT NULL
WITH r, rel ORDER BY rel.yield DESC LIMIT 1
OPTIONAL MATCH (reactant:Molecule)-[:REACTS_IN]->(r)
OPTIONAL MATCH (r)-[:PRODUCES]->(product:Molecule)
OPTIONAL MATCH (r)-[:USES_AGENT]->(agent:Molecule)
OPTIONAL MATCH (r)-[:USES_SOLVENT]->(solvent:Molecule)
RETURN r.id,
       rel.yield AS yield,
       collect(DISTINCT reactant.name) AS reactants,
       collect(DISTINCT product.name)  AS products,
       collect(DISTINCT agent.name)    AS agents,
       collect(DISTINCT solvent.name)  AS solvents",
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Yielded,
    },
    TaskType {
        key: "reaction_context_by_id",
        title: "Reaction Context by ID",
        setting: Setting::SingleStep,
        nl_template: "What is the full context of reaction \"{target}\": its reactants, products, agents and solvents?",
        gold_cypher_template: context_query!("MATCH (r:Reaction {id: {target}})"),
        answer_shape: AnswerShape::ContextRows,
        eligibility: Eligibility::Reaction,
    },
    TaskType {
        key: "multi_step_precursor_discovery",
        title: "Multi-Step Precursor Discovery",
        setting: Setting::MultiStep,
        nl_template: "Which {n}-step reaction routes lead to \"{target}\"?",
        gold_cypher_template: path_query!(""),
        answer_shape: AnswerShape::PathList,
        eligibility: Eligibility::ChainEnd,
    },
    TaskType {
        key: "intermediate_molecule_identification",
        title: "Intermediate Molecule Identification",
        setting: Setting::MultiStep,
        nl_template: "Which intermediates appear along synthesis pathways of exactly {n} steps ending in \"{target}\"?",
        gold_cypher_template: path_query!(""),
        answer_shape: AnswerShape::PathList,
        eligibility: Eligibility::ChainEnd,
    },
    TaskType {
        key: "starting_material_identification",
        title: "Starting Material Identification",
        setting: Setting::MultiStep,
        nl_template: "From which starting materials can \"{target}\" be synthesized in {n} reaction steps?",
        gold_cypher_template: path_query!(""),
        answer_shape: AnswerShape::PathList,
        eligibility: Eligibility::ChainEnd,
    },
    TaskType {
        key: "pathway_between_molecules",
        title: "Pathway Between Molecules",
        setting: Setting::MultiStep,
        nl_template: "Find the {n}-step synthesis pathways that convert \"{source}\" into \"{target}\".",
        gold_cypher_template: path_query!(" {name: {source}}"),
        answer_shape: AnswerShape::PathList,
        eligibility: Eligibility::ChainBetween,
    },
];

pub fn catalog() -> &'static [TaskType] {
    &CATALOG
}

pub fn task_type(key: &str) -> Option<&'static TaskType> {
    CATALOG.iter().find(|t| t.key == key)
}

/// Answer key for a result column: `x.id` becomes `reaction_id`, `x.name`
/// becomes `x`, anything else is kept.
pub fn column_key(column: &str) -> String {
    if let Some((var, prop)) = column.rsplit_once('.') {
        if !var.contains(['(', ')', '[', ' ']) {
            match prop {
                "id" => return "reaction_id".to_string(),
                "name" => return var.to_string(),
                _ => {}
            }
        }
    }
    column.to_string()
}

/// One map per result row: column key to deduplicated string values.
pub fn table_rows(t: &ResultTable, g: &KnowledgeGraph) -> Vec<AnswerRow> {
    let keys: Vec<String> = t.columns.iter().map(|c| column_key(c)).collect();
    t.rows
        .iter()
        .map(|row| {
            let mut out: AnswerRow = BTreeMap::new();
            for (k, v) in keys.iter().zip(row) {
                let mut vals = Vec::new();
                v.flatten_strings(g, &mut vals);
                let entry = out.entry(k.clone()).or_default();
                for s in vals {
                    if !entry.contains(&s) {
                        entry.push(s);
                    }
                }
            }
            out
        })
        .collect()
}

fn reaction_ids(v: &Value, g: &KnowledgeGraph, out: &mut Vec<String>) {
    match v {
        Value::Node(n) => {
            let node = g.node(*n);
            if node.label == cypher::Label::Reaction {
                out.push(node.key.clone());
            }
        }
        Value::String(s) if g.reaction(s).is_some() => out.push(s.clone()),
        Value::List(items) => items.iter().for_each(|i| reaction_ids(i, g, out)),
        Value::Path(p) => {
            for n in &p.nodes {
                reaction_ids(&Value::Node(*n), g, out);
            }
        }
        _ => {}
    }
}

/// Reaction-id sequences, one per row, deduplicated in first-seen order.
/// Each row contributes its first list or path column (all columns when it
/// has none).
pub fn table_paths(t: &ResultTable, g: &KnowledgeGraph) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in &t.rows {
        let mut ids = Vec::new();
        match row
            .iter()
            .find(|v| matches!(v, Value::List(_) | Value::Path(_)))
        {
            Some(v) => reaction_ids(v, g, &mut ids),
            None => row.iter().for_each(|v| reaction_ids(v, g, &mut ids)),
        }
        if !ids.is_empty() && seen.insert(ids.clone()) {
            out.push(ids);
        }
    }
    out
}

pub fn normalize(shape: AnswerShape, t: &ResultTable, g: &KnowledgeGraph) -> GoldAnswer {
    match shape {
        AnswerShape::ContextRows => GoldAnswer::Rows(table_rows(t, g)),
        AnswerShape::PathList => GoldAnswer::Paths(table_paths(t, g)),
    }
}

/// Executes a gold query and normalizes its result. Paths come back sorted.
pub fn compute_gold(
    task: &TaskType,
    gold_cypher: &str,
    g: &KnowledgeGraph,
) -> Result<GoldAnswer, TaskError> {
    compute_gold_with(task, gold_cypher, g, &ExecOptions::default())
}

pub fn compute_gold_with(
    task: &TaskType,
    gold_cypher: &str,
    g: &KnowledgeGraph,
    opts: &ExecOptions,
) -> Result<GoldAnswer, TaskError> {
    let q = cypher::parse(gold_cypher)?;
    let report = cypher::validate(&q, &cypher::Schema::default());
    if !report.executable {
        return Err(TaskError::Invalid(report.error_summary()));
    }
    let table = cypher::execute_with(&q, g, opts)?;
    let mut answer = normalize(task.answer_shape, &table, g);
    if let GoldAnswer::Paths(p) = &mut answer {
        p.sort();
    }
    if answer.is_empty() {
        return Err(TaskError::EmptyAnswer);
    }
    Ok(answer)
}

pub fn save_suite(instances: &[TaskInstance], path: &Path) -> Result<(), TaskError> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a suite; with a graph, every gold answer is recomputed and compared.
pub fn load_suite(path: &Path, verify: Option<&KnowledgeGraph>) -> Result<Vec<TaskInstance>, TaskError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: TaskInstance = serde_json::from_str(&line).map_err(|e| TaskError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    if let Some(g) = verify {
        verify_suite(&out, g)?;
    }
    Ok(out)
}

pub fn verify_suite(instances: &[TaskInstance], g: &KnowledgeGraph) -> Result<(), TaskError> {
    for inst in instances {
        let task = inst
            .task()
            .ok_or_else(|| TaskError::UnknownType(inst.task_type.clone()))?;
        let mismatch = |reason: String| TaskError::Mismatch {
            id: inst.id.clone(),
            reason,
        };
        match compute_gold(task, &inst.gold_cypher, g) {
            Ok(a) if a == inst.gold_answer => {}
            Ok(_) => return Err(mismatch("gold answer differs".into())),
            Err(e) => return Err(mismatch(e.to_string())),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::ingest::ReactionRecord;

    fn rec(id: &str, re: &[&str], pr: &[&str]) -> ReactionRecord {
        ReactionRecord {
            id: id.into(),
            reactants: re.iter().map(|s| s.to_string()).collect(),
            products: pr.iter().map(|s| s.to_string()).collect(),
            agents: vec![],
            solvents: vec![],
            yields: None,
        }
    }

    fn params(target: &str, n: Option<u32>) -> Params {
        Params {
            target: target.into(),
            n,
            source: None,
        }
    }

    #[test]
    fn catalog_shape() {
        let single = catalog()
            .iter()
            .filter(|t| t.setting == Setting::SingleStep)
            .count();
        assert_eq!((single, catalog().len() - single), (6, 4));
        assert!(task_type("best_yielding_reaction").is_some());
        assert!(task_type("intermediate_molecule_identification").is_some());
        for t in catalog() {
            let derived = |s: Vec<String>| -> Vec<String> {
                let mut s: Vec<String> = s
                    .into_iter()
                    .map(|x| if x == "hops" { "n".into() } else { x })
                    .collect();
                s.dedup();
                s
            };
            assert_eq!(
                derived(TaskType::slots(t.nl_template)),
                derived(TaskType::slots(t.gold_cypher_template)),
                "{}",
                t.key
            );
        }
    }

    #[test]
    fn gold_for_toy_graph() {
        let g = build_graph(&[rec("R1", &["A", "B"], &["C"])]).unwrap();
        let t = task_type("product_identification_retro").unwrap();
        let gold = compute_gold(t, &t.cypher(&params("C", None)), &g).unwrap();
        let row: AnswerRow = [
            ("reaction_id", vec!["R1"]),
            ("reactants", vec!["A", "B"]),
            ("products", vec!["C"]),
            ("agents", vec![]),
            ("solvents", vec![]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
        .collect();
        assert_eq!(gold, GoldAnswer::Rows(vec![row]));
        assert!(matches!(
            compute_gold(t, &t.cypher(&params("A", None)), &g),
            Err(TaskError::EmptyAnswer)
        ));
    }

    #[test]
    fn two_step_chain_paths() {
        let g = build_graph(&[rec("R1", &["A"], &["B"]), rec("R2", &["B"], &["C"])]).unwrap();
        let t = task_type("multi_step_precursor_discovery").unwrap();
        let gold = compute_gold(t, &t.cypher(&params("C", Some(2))), &g).unwrap();
        assert_eq!(
            gold,
            GoldAnswer::Paths(vec![vec!["R1".to_string(), "R2".to_string()]])
        );
        assert!(t.question(&params("C", Some(2))).contains("\"C\""));
    }

    #[test]
    fn column_keys() {
        assert_eq!(column_key("r.id"), "reaction_id");
        assert_eq!(column_key("reactant.name"), "reactant");
        assert_eq!(column_key("yield"), "yield");
        assert_eq!(column_key("collect(DISTINCT x.name)"), "collect(DISTINCT x.name)");
    }

    #[test]
    fn suite_round_trip() {
        let g = build_graph(&[rec("R1", &["A", "B"], &["C"])]).unwrap();
        let t = task_type("reaction_context_by_id").unwrap();
        let p = params("R1", None);
        let cy = t.cypher(&p);
        let inst = TaskInstance {
            id: "x-0".into(),
            task_type: t.key.into(),
            params: p.clone(),
            nl_question: t.question(&p),
            gold_answer: compute_gold(t, &cy, &g).unwrap(),
            gold_cypher: cy,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.jsonl");
        save_suite(std::slice::from_ref(&inst), &path).unwrap();
        assert_eq!(load_suite(&path, Some(&g)).unwrap(), vec![inst]);
        let other = build_graph(&[rec("R1", &["A"], &["C"])]).unwrap();
        assert!(matches!(
            load_suite(&path, Some(&other)),
            Err(TaskError::Mismatch { .. })
        ));
    }
}
