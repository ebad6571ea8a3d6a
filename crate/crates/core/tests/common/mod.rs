//! Helpers shared by the integration tests: random small graphs, a
//! brute-force answer enumerator for the catalog templates, result
//! canonicalization and a prompt-keyed deterministic chat provider.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use retrocypher::cypher::{Label, RelKind, ResultTable, Value};
use retrocypher::graph::{build_graph, KnowledgeGraph, NodeId};
use retrocypher::ingest::synth::molecule_name;
use retrocypher::ingest::ReactionRecord;
use retrocypher::providers::{ChatProvider, ChatRequest, ProviderError, CHECKLIST_MARKER};
use retrocypher::tasks::{catalog, Params, TaskInstance, TaskType};

/// Random reaction set whose graph has at most 50 nodes. Yields are
/// distinct across the whole graph so `ORDER BY yield` has no ties.
pub fn random_records(seed: u64) -> Vec<ReactionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..rng.random_range(6..=30)).map(molecule_name).collect();
    let reactions = rng.random_range(2..=18);
    let mut yields: Vec<f64> = (0..200).map(|i| 5.0 + 0.45 * i as f64).collect();
    yields.shuffle(&mut rng);
    let mut next_yield = yields.into_iter();
    let pick = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
        let k = rng.random_range(lo..=hi).min(pool.len());
        pool.choose_multiple(rng, k).cloned().collect()
    };
    (0..reactions)
        .map(|i| {
            let reactants = pick(&mut rng, 1, 3);
            let products = pick(&mut rng, 1, 2);
            let agents = pick(&mut rng, 0, 1);
            let solvents = pick(&mut rng, 0, 2);
            let mut y = BTreeMap::new();
            for p in &products {
                if rng.random_bool(0.6) {
                    y.insert(p.clone(), next_yield.next().unwrap());
                }
            }
            ReactionRecord {
                id: format!("R{i}"),
                reactants,
                products,
                agents,
                solvents,
                yields: (!y.is_empty()).then_some(y),
            }
        })
        .collect()
}

pub fn random_graph(seed: u64) -> KnowledgeGraph {
    let g = build_graph(&random_records(seed)).expect("random graph");
    assert!(g.node_count() <= 50);
    g
}

/// Rows as sorted string tuples. List cells are sorted when `ordered_lists`
/// is false (collected values have no defined order).
pub type Canon = Vec<Vec<String>>;

fn cell(v: &Value, g: &KnowledgeGraph, ordered_lists: bool) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => format!("{:?}", *i as f64),
        Value::Float(f) => format!("{f:?}"),
        Value::String(s) => s.clone(),
        Value::Node(n) => g.node(*n).key.clone(),
        Value::List(items) => {
            let mut parts: Vec<String> = items.iter().map(|i| cell(i, g, ordered_lists)).collect();
            if !ordered_lists {
                parts.sort();
            }
            format!("[{}]", parts.join(","))
        }
        other => format!("{other:?}"),
    }
}

pub fn canon_table(t: &ResultTable, g: &KnowledgeGraph, ordered_lists: bool) -> Canon {
    let mut rows: Canon = t
        .rows
        .iter()
        .map(|r| r.iter().map(|v| cell(v, g, ordered_lists)).collect())
        .collect();
    rows.sort();
    rows
}

fn list(mut items: Vec<String>) -> String {
    items.sort();
    items.dedup();
    format!("[{}]", items.join(","))
}

/// Every (edge kind, source, target, yield) in the graph.
fn all_edges(g: &KnowledgeGraph) -> Vec<(RelKind, NodeId, NodeId, Option<f64>)> {
    g.edges().map(|(_, e)| (e.kind, e.source, e.target, e.yield_pct)).collect()
}

fn context_cells(g: &KnowledgeGraph, edges: &[(RelKind, NodeId, NodeId, Option<f64>)], r: NodeId) -> [String; 4] {
    let key = |n: NodeId| g.node(n).key.clone();
    let collect = |kind: RelKind, incoming: bool| {
        list(
            edges
                .iter()
                .filter(|(k, s, t, _)| *k == kind && if incoming { *t == r } else { *s == r })
                .map(|(_, s, t, _)| key(if incoming { *s } else { *t }))
                .collect(),
        )
    };
    [
        collect(RelKind::ReactsIn, true),
        collect(RelKind::Produces, false),
        collect(RelKind::UsesAgent, false),
        collect(RelKind::UsesSolvent, false),
    ]
}

/// Expected rows of a catalog template, found by enumerating bindings
/// directly over the node and edge lists.
pub fn oracle_rows(task: &TaskType, p: &Params, g: &KnowledgeGraph) -> Canon {
    let nodes: Vec<NodeId> = g.nodes().map(|(id, _)| id).collect();
    let is = |n: NodeId, l: Label| g.node(n).label == l;
    let key = |n: NodeId| g.node(n).key.clone();
    let edges = all_edges(g);
    let mut rows: Canon = match task.key {
        "reaction_context_by_id" => nodes
            .iter()
            .filter(|&&r| is(r, Label::Reaction) && key(r) == p.target)
            .map(|&r| {
                let mut row = vec![key(r)];
                row.extend(context_cells(g, &edges, r));
                row
            })
            .collect(),
        "solvent_identification" | "product_identification_retro" | "precursor_identification"
        | "agent_identification" => {
            let kind = if task.key == "solvent_identification" {
                RelKind::UsesSolvent
            } else {
                RelKind::Produces
            };
            let mut reactions: BTreeSet<NodeId> = BTreeSet::new();
            for (k, s, t, _) in &edges {
                if *k == kind && is(*s, Label::Reaction) && is(*t, Label::Molecule) && key(*t) == p.target {
                    reactions.insert(*s);
                }
            }
            reactions
                .into_iter()
                .map(|r| {
                    let mut row = vec![key(r)];
                    row.extend(context_cells(g, &edges, r));
                    row
                })
                .collect()
        }
        "best_yielding_reaction" => {
            let best = edges
                .iter()
                .filter(|(k, _, t, y)| *k == RelKind::Produces && key(*t) == p.target && y.is_some())
                .max_by(|a, b| a.3.partial_cmp(&b.3).unwrap());
            best.map(|(_, r, _, y)| {
                let mut row = vec![key(*r), format!("{:?}", y.unwrap())];
                row.extend(context_cells(g, &edges, *r));
                row
            })
            .into_iter()
            .collect()
        }
        _ => oracle_paths(p, g)
            .into_iter()
            .map(|path| vec![format!("[{}]", path.join(","))])
            .collect(),
    };
    rows.sort();
    rows
}

/// Distinct reaction sequences over all walks of exactly 2n distinct
/// REACTS_IN/PRODUCES edges, traversed in either direction, that start at a
/// molecule (named `source` if given), end at the target molecule, alternate
/// Molecule/Reaction and alternate REACTS_IN/PRODUCES.
pub fn oracle_paths(p: &Params, g: &KnowledgeGraph) -> BTreeSet<Vec<String>> {
    let hops = 2 * p.n.expect("multi-step params") as usize;
    let edges: Vec<(RelKind, NodeId, NodeId)> = all_edges(g)
        .into_iter()
        .filter(|(k, ..)| matches!(k, RelKind::ReactsIn | RelKind::Produces))
        .map(|(k, s, t, _)| (k, s, t))
        .collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); g.node_count()];
    for (i, (_, s, t)) in edges.iter().enumerate() {
        incident[s.index()].push(i);
        if s != t {
            incident[t.index()].push(i);
        }
    }
    let mut out = BTreeSet::new();
    for (start, node) in g.nodes() {
        if node.label != Label::Molecule {
            continue;
        }
        if p.source.as_deref().is_some_and(|s| s != node.key) {
            continue;
        }
        let mut walk = Walk {
            edges: &edges,
            incident: &incident,
            hops,
            nodes: vec![start],
            kinds: Vec::new(),
            used: vec![false; edges.len()],
        };
        walk.extend(&mut |nodes, kinds| {
            let end = *nodes.last().unwrap();
            let labels_ok = nodes.iter().enumerate().all(|(i, n)| {
                g.node(*n).label == if i % 2 == 0 { Label::Molecule } else { Label::Reaction }
            });
            let kinds_ok = kinds.iter().enumerate().all(|(j, k)| {
                *k == if j % 2 == 0 { RelKind::ReactsIn } else { RelKind::Produces }
            });
            if labels_ok && kinds_ok && g.node(end).label == Label::Molecule && g.node(end).key == p.target {
                out.insert(nodes.iter().skip(1).step_by(2).map(|n| g.node(*n).key.clone()).collect());
            }
        });
    }
    out
}

struct Walk<'a> {
    edges: &'a [(RelKind, NodeId, NodeId)],
    incident: &'a [Vec<usize>],
    hops: usize,
    nodes: Vec<NodeId>,
    kinds: Vec<RelKind>,
    used: Vec<bool>,
}

impl Walk<'_> {
    /// Visits every extension to `hops` edges, each edge used at most once.
    fn extend(&mut self, visit: &mut dyn FnMut(&[NodeId], &[RelKind])) {
        if self.kinds.len() == self.hops {
            visit(&self.nodes, &self.kinds);
            return;
        }
        let here = *self.nodes.last().unwrap();
        for &i in &self.incident[here.index()] {
            if self.used[i] {
                continue;
            }
            let (k, s, t) = self.edges[i];
            let next = if s == here { t } else { s };
            self.used[i] = true;
            self.nodes.push(next);
            self.kinds.push(k);
            self.extend(visit);
            self.kinds.pop();
            self.nodes.pop();
            self.used[i] = false;
        }
    }
}

/// Random parameters for `task` on `g`, including some that match nothing.
pub fn random_params(task: &TaskType, g: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Params {
    let molecules: Vec<String> = g
        .nodes()
        .filter(|(_, n)| n.label == Label::Molecule)
        .map(|(_, n)| n.key.clone())
        .collect();
    let reactions: Vec<String> = g
        .nodes()
        .filter(|(_, n)| n.label == Label::Reaction)
        .map(|(_, n)| n.key.clone())
        .collect();
    let pool = if task.key == "reaction_context_by_id" {
        &reactions
    } else {
        &molecules
    };
    let target = if rng.random_bool(0.1) {
        "CNOSP".to_string()
    } else {
        pool.choose(rng).unwrap().clone()
    };
    let multi = task.needs_steps();
    Params {
        target,
        n: multi.then(|| rng.random_range(1..=3)),
        source: (task.key == "pathway_between_molecules").then(|| molecules.choose(rng).unwrap().clone()),
    }
}

pub fn is_path_task(task: &TaskType) -> bool {
    task.needs_steps()
}

pub fn catalog_tasks() -> &'static [TaskType] {
    catalog()
}

/// Canned replies chosen by a hash of the request, so concurrent runs see
/// the same reply for the same prompt regardless of call order.
///
/// Generation prompts get the gold query, a reversed-arrow variant, a
/// truncated (non-executable) variant or prose without a code fence.
/// Validator prompts get `OK`, findings or an unparseable reply; corrector
/// prompts get a fixed query.
pub struct HashedProvider {
    gold: HashMap<String, String>,
}

impl HashedProvider {
    pub fn new(suite: &[TaskInstance]) -> Self {
        Self {
            gold: suite
                .iter()
                .map(|i| (i.nl_question.clone(), i.gold_cypher.clone()))
                .collect(),
        }
    }
}

pub fn digest(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub fn reverse_first_arrow(q: &str) -> String {
    for (from, to) in [
        ("<-[:PRODUCES]-", "-[:PRODUCES]->"),
        ("<-[:USES_SOLVENT]-", "-[:USES_SOLVENT]->"),
        ("-[:REACTS_IN|PRODUCES*", "<-[:REACTS_IN|PRODUCES*"),
    ] {
        if q.contains(from) {
            return q.replacen(from, to, 1);
        }
    }
    q.to_string()
}

impl ChatProvider for HashedProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let h = digest(&[&req.system, &req.user]);
        if req.system.is_empty() {
            if req.user.contains(CHECKLIST_MARKER) {
                return Ok(match h % 3 {
                    0 => "OK".into(),
                    1 => "- endpoint-anchoring: the target must be the path end\n- anchor-role: anchor the target by role".into(),
                    _ => "The query looks plausible.".into(),
                });
            }
            return Ok("```cypher\nMATCH (r:Reaction) RETURN r.id\n```".into());
        }
        let question = retrocypher::providers::question_in_prompt(&req.user)
            .ok_or_else(|| ProviderError::Script("no question in prompt".into()))?;
        let gold = self
            .gold
            .get(question)
            .ok_or_else(|| ProviderError::Script(format!("unknown question {question:?}")))?;
        Ok(match h % 4 {
            0 => format!("```cypher\n{gold}\n```"),
            1 => format!("Here you go:\n```cypher\n{}\n```", reverse_first_arrow(gold)),
            2 => {
                let cut: Vec<&str> = gold.lines().collect();
                format!("```cypher\n{}\n```", cut[..cut.len() - 1].join("\n"))
            }
            _ => "I am not able to write that query.".into(),
        })
    }
}
