//! Seeded instance generation by rejection sampling over eligible targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{compute_gold_with, Eligibility, Params, TaskError, TaskInstance, TaskType};
use crate::cypher::{ExecOptions, Label, RelKind};
use crate::graph::{Dir, KnowledgeGraph, NodeId};
use crate::par::{self, Mode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteCounts {
    pub single_per_type: usize,
    pub multi_per_type: usize,
    /// Step counts the multi-step quota is split across.
    pub steps: Vec<u32>,
}

impl SuiteCounts {
    /// 200 per single-step type, 300 per multi-step type.
    pub fn full() -> Self {
        Self {
            single_per_type: 200,
            multi_per_type: 300,
            steps: vec![2, 3, 4],
        }
    }

    pub fn desk() -> Self {
        Self {
            single_per_type: 10,
            multi_per_type: 10,
            steps: vec![2, 3, 4],
        }
    }

    /// Even split of the multi-step quota; lower step counts get the remainder.
    pub fn split(&self) -> Vec<(u32, usize)> {
        let k = self.steps.len().max(1);
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let extra = usize::from(i < self.multi_per_type % k);
                (n, self.multi_per_type / k + extra)
            })
            .collect()
    }
}

/// Expansion budget per candidate; candidates whose gold query explodes are
/// rejected like empty ones.
const CANDIDATE_BUDGET: usize = 2_000_000;
const MAX_SOURCES_PER_TARGET: usize = 4;

pub fn generate_suite(
    g: &KnowledgeGraph,
    counts: &SuiteCounts,
    seed: u64,
) -> Result<Vec<TaskInstance>, TaskError> {
    generate_suite_with(g, counts, seed, Mode::default())
}

pub fn generate_suite_with(
    g: &KnowledgeGraph,
    counts: &SuiteCounts,
    seed: u64,
    mode: Mode,
) -> Result<Vec<TaskInstance>, TaskError> {
    let mut out = Vec::new();
    for (ti, task) in super::catalog().iter().enumerate() {
        let buckets: Vec<(Option<u32>, usize)> = if task.needs_steps() {
            counts.split().into_iter().map(|(n, c)| (Some(n), c)).collect()
        } else {
            vec![(None, counts.single_per_type)]
        };
        for (n, count) in buckets {
            if count == 0 {
                continue;
            }
            let stream = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((ti as u64) << 8)
                .wrapping_add(u64::from(n.unwrap_or(0)));
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let candidates = candidate_params(g, task, n, &mut rng);
            let accepted = accept(g, task, candidates, count, mode);
            if accepted.len() < count {
                return Err(TaskError::Insufficient {
                    task: task.key.to_string(),
                    n,
                });
            }
            for (i, (params, gold)) in accepted.into_iter().enumerate() {
                let id = match n {
                    Some(n) => format!("{}-n{}-{:04}", task.key, n, i),
                    None => format!("{}-{:04}", task.key, i),
                };
                out.push(TaskInstance {
                    id,
                    task_type: task.key.to_string(),
                    nl_question: task.question(&params),
                    gold_cypher: task.cypher(&params),
                    params,
                    gold_answer: gold,
                });
            }
        }
    }
    Ok(out)
}

/// Runs gold queries for candidates in batches and keeps the first `count`
/// successes in candidate order.
fn accept(
    g: &KnowledgeGraph,
    task: &TaskType,
    candidates: Vec<Params>,
    count: usize,
    mode: Mode,
) -> Vec<(Params, super::GoldAnswer)> {
    let opts = ExecOptions {
        max_expansions: CANDIDATE_BUDGET,
        ..ExecOptions::default()
    };
    let mut accepted = Vec::with_capacity(count);
    let batch = (count * 2).max(8);
    for chunk in candidates.chunks(batch) {
        let results = par::map(chunk, mode, |p| {
            compute_gold_with(task, &task.cypher(p), g, &opts).ok()
        });
        for (p, gold) in chunk.iter().zip(results) {
            if let Some(gold) = gold {
                accepted.push((p.clone(), gold));
                if accepted.len() == count {
                    return accepted;
                }
            }
        }
    }
    accepted
}

fn candidate_params(
    g: &KnowledgeGraph,
    task: &TaskType,
    n: Option<u32>,
    rng: &mut ChaCha8Rng,
) -> Vec<Params> {
    let key = |id: NodeId| g.node(id).key.clone();
    let single = |target: String| Params {
        target,
        n,
        source: None,
    };
    let molecules = || g.nodes().filter(|(_, m)| m.label == Label::Molecule).map(|(id, _)| id);
    let mut targets: Vec<NodeId> = match task.eligibility {
        Eligibility::Produced => molecules()
            .filter(|&m| !g.incident(m, RelKind::Produces, Dir::In).is_empty())
            .collect(),
        Eligibility::Solvent => molecules()
            .filter(|&m| !g.incident(m, RelKind::UsesSolvent, Dir::In).is_empty())
            .collect(),
        Eligibility::Yielded => molecules()
            .filter(|&m| {
                g.incident(m, RelKind::Produces, Dir::In)
                    .iter()
                    .any(|&e| g.edge(e).yield_pct.is_some())
            })
            .collect(),
        Eligibility::Reaction => g
            .nodes()
            .filter(|(_, r)| r.label == Label::Reaction)
            .map(|(id, _)| id)
            .collect(),
        Eligibility::ChainEnd | Eligibility::ChainBetween => {
            multi_step_reachable(g, n.unwrap_or(1))
        }
    };
    targets.shuffle(rng);
    if task.eligibility != Eligibility::ChainBetween {
        return targets.into_iter().map(|t| single(key(t))).collect();
    }
    let steps = n.unwrap_or(1);
    let mut out = Vec::new();
    for t in targets {
        let mut sources = chain_sources(g, t, steps);
        sources.shuffle(rng);
        for s in sources.into_iter().take(MAX_SOURCES_PER_TARGET) {
            out.push(Params {
                target: key(t),
                n,
                source: Some(key(s)),
            });
        }
    }
    out
}

fn reactions_from(g: &KnowledgeGraph, m: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    g.incident(m, RelKind::ReactsIn, Dir::Out)
        .iter()
        .map(move |&e| g.edge(e).target)
}

/// Molecules that end some forward walk of exactly `n` reaction steps
/// (reactant, reaction, product, ...). Walks may revisit edges, so this is a
/// prefilter; gold execution decides.
pub fn multi_step_reachable(g: &KnowledgeGraph, n: u32) -> Vec<NodeId> {
    let size = g.node_count();
    let mut level: Vec<bool> = (0..size)
        .map(|i| {
            let id = NodeId(i as u32);
            g.node(id).label == Label::Molecule
                && !g.incident(id, RelKind::ReactsIn, Dir::Out).is_empty()
        })
        .collect();
    for _ in 0..n {
        let mut next = vec![false; size];
        for (i, on) in level.iter().enumerate() {
            if !on {
                continue;
            }
            for r in reactions_from(g, NodeId(i as u32)) {
                for &e in g.incident(r, RelKind::Produces, Dir::Out) {
                    next[g.edge(e).target.index()] = true;
                }
            }
        }
        level = next;
    }
    level
        .iter()
        .enumerate()
        .filter(|(_, on)| **on)
        .map(|(i, _)| NodeId(i as u32))
        .collect()
}

/// Molecules from which `target` is reachable by a forward walk of `n` steps.
fn chain_sources(g: &KnowledgeGraph, target: NodeId, n: u32) -> Vec<NodeId> {
    let size = g.node_count();
    let mut level = vec![false; size];
    level[target.index()] = true;
    for _ in 0..n {
        let mut next = vec![false; size];
        for (i, on) in level.iter().enumerate() {
            if !on {
                continue;
            }
            for &e in g.incident(NodeId(i as u32), RelKind::Produces, Dir::In) {
                let r = g.edge(e).source;
                for &e2 in g.incident(r, RelKind::ReactsIn, Dir::In) {
                    next[g.edge(e2).source.index()] = true;
                }
            }
        }
        level = next;
    }
    level
        .iter()
        .enumerate()
        .filter(|(_, on)| **on)
        .map(|(i, _)| NodeId(i as u32))
        .collect()
}
