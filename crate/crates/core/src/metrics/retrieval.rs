//! Retrieval scores: key-matched set overlap for context rows, exact and
//! partial path recall for routes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::keys::{match_keys, KeyMatchResult, SEMANTIC_THRESHOLD};
use crate::providers::Embedder;
use crate::tasks::AnswerRow;

pub const REACTION_KEY: &str = "reaction_id";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

impl RetrievalScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f1) = prf(tp, fp, fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingleStepResult {
    pub scores: RetrievalScores,
    pub keys: KeyMatchResult,
    /// Per gold key counts (tp, fp, fn).
    pub per_key: BTreeMap<String, (usize, usize, usize)>,
}

type KeyedSets = BTreeMap<String, BTreeSet<String>>;

fn gold_keys(gold: &[AnswerRow]) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for row in gold {
        for k in row.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    keys
}

fn remap(row: &AnswerRow, keys: &KeyMatchResult) -> KeyedSets {
    let mut out = KeyedSets::new();
    for (k, vals) in row {
        if let Some(g) = keys.gold_for(k) {
            out.entry(g.to_string()).or_default().extend(vals.iter().cloned());
        }
    }
    out
}

fn to_sets(row: &AnswerRow) -> KeyedSets {
    row.iter()
        .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
        .collect()
}

fn merge(into: &mut KeyedSets, from: KeyedSets) {
    for (k, v) in from {
        into.entry(k).or_default().extend(v);
    }
}

fn compare(
    pred: &KeyedSets,
    gold: &KeyedSets,
    keys: &[String],
    per_key: &mut BTreeMap<String, (usize, usize, usize)>,
) {
    let empty = BTreeSet::new();
    for k in keys {
        let p = pred.get(k).unwrap_or(&empty);
        let g = gold.get(k).unwrap_or(&empty);
        let tp = p.intersection(g).count();
        let e = per_key.entry(k.clone()).or_default();
        e.0 += tp;
        e.1 += p.len() - tp;
        e.2 += g.len() - tp;
    }
}

/// Micro P/R/F1 over gold keys. Predicted keys are mapped onto gold keys
/// first; values of keys mapped to the same gold key are pooled. When both
/// sides carry reaction ids, rows are aligned by reaction id and unaligned
/// predicted rows count entirely as false positives; otherwise all rows are
/// pooled per key.
pub fn score_single_step(
    predicted: &[AnswerRow],
    gold: &[AnswerRow],
    embedder: Option<&dyn Embedder>,
) -> SingleStepResult {
    let gkeys = gold_keys(gold);
    let mut pkeys: Vec<String> = Vec::new();
    for row in predicted {
        for k in row.keys() {
            if !pkeys.contains(k) {
                pkeys.push(k.clone());
            }
        }
    }
    let keys = match_keys(&pkeys, &gkeys, embedder, SEMANTIC_THRESHOLD);
    let pred: Vec<KeyedSets> = predicted.iter().map(|r| remap(r, &keys)).collect();
    let gold_sets: Vec<KeyedSets> = gold.iter().map(to_sets).collect();
    let mut per_key = BTreeMap::new();

    let aligned = gkeys.iter().any(|k| k == REACTION_KEY) && keys.covers(REACTION_KEY);
    if aligned {
        let rid = |s: &KeyedSets| -> Option<String> {
            s.get(REACTION_KEY).and_then(|v| v.iter().next().cloned())
        };
        let mut by_id: BTreeMap<String, KeyedSets> = BTreeMap::new();
        let mut loose = KeyedSets::new();
        for p in pred {
            match rid(&p) {
                Some(id) if p[REACTION_KEY].len() == 1 => merge(by_id.entry(id).or_default(), p),
                _ => merge(&mut loose, p),
            }
        }
        let mut seen = HashSet::new();
        for g in &gold_sets {
            let id = rid(g);
            let p = id
                .as_ref()
                .filter(|id| seen.insert((*id).clone()))
                .and_then(|id| by_id.remove(id))
                .unwrap_or_default();
            compare(&p, g, &gkeys, &mut per_key);
        }
        let empty = KeyedSets::new();
        for p in by_id.into_values().chain(std::iter::once(loose)) {
            compare(&p, &empty, &gkeys, &mut per_key);
        }
    } else {
        let mut p_all = KeyedSets::new();
        for p in pred {
            merge(&mut p_all, p);
        }
        let mut g_all = KeyedSets::new();
        for g in gold_sets {
            merge(&mut g_all, g);
        }
        compare(&p_all, &g_all, &gkeys, &mut per_key);
    }

    let (tp, fp, fn_) = per_key
        .values()
        .fold((0, 0, 0), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2));
    SingleStepResult {
        scores: RetrievalScores::from_counts(tp, fp, fn_),
        keys,
        per_key,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PathScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ppr: f64,
}

/// Length of the longest common suffix.
pub fn common_suffix<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count()
}

/// Exact-path P/R/F1 on deduplicated id sequences, and partial path recall:
/// the mean over gold paths of the best common-suffix fraction among
/// predicted paths.
pub fn score_multi_step(predicted: &[Vec<String>], gold: &[Vec<String>]) -> PathScores {
    let dedupe = |xs: &[Vec<String>]| {
        let mut seen = HashSet::new();
        xs.iter().filter(|x| seen.insert(*x)).cloned().collect::<Vec<_>>()
    };
    let pred = dedupe(predicted);
    let gold = dedupe(gold);
    let gold_set: HashSet<&Vec<String>> = gold.iter().collect();
    let hits = pred.iter().filter(|p| gold_set.contains(p)).count();
    let (precision, recall, f1) = prf(hits, pred.len() - hits, gold.len() - hits);
    let ppr = if gold.is_empty() {
        0.0
    } else {
        gold.iter()
            .map(|g| {
                if g.is_empty() {
                    return 0.0;
                }
                let best = pred.iter().map(|p| common_suffix(p, g)).max().unwrap_or(0);
                best as f64 / g.len() as f64
            })
            .sum::<f64>()
            / gold.len() as f64
    };
    PathScores {
        precision,
        recall,
        f1,
        ppr,
    }
}
