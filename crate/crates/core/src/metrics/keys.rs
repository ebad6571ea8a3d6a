//! Mapping predicted result keys onto gold keys.

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::providers::{cosine, Embedder};

pub const SEMANTIC_THRESHOLD: f64 = 0.93;

/// Trims, splits camelCase into snake_case, lowercases, then drops a
/// trailing `name`/`names` (with its separator). Casing boundaries are read
/// before lowercasing, so the order of the lowercase and snake_case steps
/// does not change the result.
pub fn normalize_key(key: &str) -> String {
    let trimmed = key.trim();
    let mut snake = String::with_capacity(trimmed.len() + 4);
    let chars: Vec<char> = trimmed.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_uppercase() && i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                snake.push('_');
            }
        }
        snake.extend(c.to_lowercase());
    }
    for suffix in ["names", "name"] {
        if let Some(rest) = snake.strip_suffix(suffix) {
            let rest = rest.trim_end_matches(['_', ' ', '-']);
            if !rest.is_empty() {
                return rest.to_string();
            }
        }
    }
    snake
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Exact,
    Lexical,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMatch {
    pub predicted: String,
    pub gold: String,
    pub stage: MatchStage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyMatchResult {
    pub matches: Vec<KeyMatch>,
    pub unmatched: Vec<String>,
}

impl KeyMatchResult {
    pub fn gold_for(&self, predicted: &str) -> Option<&str> {
        self.matches
            .iter()
            .find(|m| m.predicted == predicted)
            .map(|m| m.gold.as_str())
    }

    pub fn covers(&self, gold: &str) -> bool {
        self.matches.iter().any(|m| m.gold == gold)
    }
}

fn stem_key(stemmer: &Stemmer, key: &str) -> String {
    key.split(['_', ' '])
        .filter(|p| !p.is_empty())
        .map(|p| stemmer.stem(p).into_owned())
        .collect::<Vec<_>>()
        .join("_")
}

/// Three stages: equality of normalized keys, equality of stems, then
/// cosine similarity at or above `threshold` to the best gold key (earliest
/// gold key on ties). Several predicted keys may share one gold key.
pub fn match_keys(
    predicted: &[String],
    gold: &[String],
    embedder: Option<&dyn Embedder>,
    threshold: f64,
) -> KeyMatchResult {
    let stemmer = Stemmer::create(Algorithm::English);
    let gold_norm: Vec<String> = gold.iter().map(|g| normalize_key(g)).collect();
    let gold_stem: Vec<String> = gold_norm.iter().map(|g| stem_key(&stemmer, g)).collect();
    let mut result = KeyMatchResult::default();
    let mut pending = Vec::new();
    for p in predicted {
        let norm = normalize_key(p);
        let hit = gold_norm
            .iter()
            .position(|g| *g == norm)
            .map(|i| (i, MatchStage::Exact))
            .or_else(|| {
                let s = stem_key(&stemmer, &norm);
                gold_stem.iter().position(|g| *g == s).map(|i| (i, MatchStage::Lexical))
            });
        match hit {
            Some((i, stage)) => result.matches.push(KeyMatch {
                predicted: p.clone(),
                gold: gold[i].clone(),
                stage,
            }),
            None => pending.push((p.clone(), norm)),
        }
    }
    let gold_vecs: Option<Vec<Vec<f64>>> = match embedder {
        Some(e) if !pending.is_empty() => gold_norm
            .iter()
            .map(|g| e.embed(g))
            .collect::<Result<_, _>>()
            .map_err(|err| log::warn!("key embedding failed: {err}"))
            .ok(),
        _ => None,
    };
    for (p, norm) in pending {
        let best = match (embedder, &gold_vecs) {
            (Some(e), Some(gv)) => match e.embed(&norm) {
                Ok(pv) => {
                    let mut best: Option<(usize, f64)> = None;
                    for (i, g) in gv.iter().enumerate() {
                        if let Some(s) = cosine(&pv, g) {
                            if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                                best = Some((i, s));
                            }
                        }
                    }
                    best
                }
                Err(err) => {
                    log::warn!("key embedding failed: {err}");
                    None
                }
            },
            _ => None,
        };
        match best {
            Some((i, _)) => result.matches.push(KeyMatch {
                predicted: p,
                gold: gold[i].clone(),
                stage: MatchStage::Semantic,
            }),
            None => result.unmatched.push(p),
        }
    }
    result
}
