//! Rule-based error taxonomy for wrong or failed retrievals.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::retrieval::{PathScores, SingleStepResult};
use crate::cypher::ast::{BinaryOp, Clause, Direction, Expr, Literal, PathPattern};
use crate::cypher::{parse, rewrite_directions, Query};
use crate::tasks::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLabel {
    InvalidQuery,
    EndpointAnchoring,
    TraversalDirection,
    PathwayLength,
    ReactantsMissing,
    ProductsMissing,
    AgentsMissing,
    SolventsMissing,
    WrongReactantDirectionality,
    Other,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 10] = [
        ErrorLabel::InvalidQuery,
        ErrorLabel::EndpointAnchoring,
        ErrorLabel::TraversalDirection,
        ErrorLabel::PathwayLength,
        ErrorLabel::ReactantsMissing,
        ErrorLabel::ProductsMissing,
        ErrorLabel::AgentsMissing,
        ErrorLabel::SolventsMissing,
        ErrorLabel::WrongReactantDirectionality,
        ErrorLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorLabel::InvalidQuery => "invalid_query",
            ErrorLabel::EndpointAnchoring => "endpoint_anchoring",
            ErrorLabel::TraversalDirection => "traversal_direction",
            ErrorLabel::PathwayLength => "pathway_length",
            ErrorLabel::ReactantsMissing => "reactants_missing",
            ErrorLabel::ProductsMissing => "products_missing",
            ErrorLabel::AgentsMissing => "agents_missing",
            ErrorLabel::SolventsMissing => "solvents_missing",
            ErrorLabel::WrongReactantDirectionality => "wrong_reactant_directionality",
            ErrorLabel::Other => "other",
        }
    }
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What happened when the final query was run.
#[derive(Debug, Clone, Copy)]
pub enum Outcome<'a> {
    /// No query, a parse or validation failure, or a runtime error.
    Failed,
    Single(&'a SingleStepResult),
    Multi {
        scores: &'a PathScores,
        predicted: &'a [Vec<String>],
    },
}

const ROLE_KEYS: [(&str, ErrorLabel); 4] = [
    ("reactants", ErrorLabel::ReactantsMissing),
    ("products", ErrorLabel::ProductsMissing),
    ("agents", ErrorLabel::AgentsMissing),
    ("solvents", ErrorLabel::SolventsMissing),
];

/// `None` for a correct retrieval, otherwise the first rule that fires.
pub fn classify_error(params: &Params, query: Option<&str>, outcome: Outcome) -> Option<ErrorLabel> {
    let parsed = query.and_then(|q| parse(q).ok());
    match (outcome, parsed) {
        (Outcome::Failed, _) | (_, None) => Some(ErrorLabel::InvalidQuery),
        (Outcome::Single(r), Some(q)) => {
            if r.scores.f1 >= 1.0 {
                return None;
            }
            if rewrite_directions(&q).changed > 0 {
                return Some(ErrorLabel::WrongReactantDirectionality);
            }
            for (key, label) in ROLE_KEYS {
                let Some(&(tp, fp, fn_)) = r.per_key.get(key) else {
                    continue;
                };
                if tp + fn_ > 0 && (!r.keys.covers(key) || tp + fp == 0) {
                    return Some(label);
                }
            }
            Some(ErrorLabel::Other)
        }
        (Outcome::Multi { scores, predicted }, Some(q)) => {
            if scores.f1 >= 1.0 {
                return None;
            }
            Some(classify_path(params, &q, predicted))
        }
    }
}

fn string_lit(e: &Expr) -> Option<&str> {
    match e {
        Expr::Literal(Literal::String(s)) => Some(s),
        _ => None,
    }
}

/// Variables pinned to `name` by `WHERE v.name = '...'`.
fn where_names<'a>(q: &'a Query, name: &str) -> HashSet<&'a str> {
    let mut out = HashSet::new();
    for c in &q.clauses {
        let Clause::Match(m) = c else { continue };
        let Some(w) = &m.where_ else { continue };
        w.walk(&mut |e| {
            if let Expr::Binary(BinaryOp::Eq, l, r) = e {
                for (a, b) in [(l, r), (r, l)] {
                    if let (Expr::Property(v, prop), Some(s)) = (a.as_ref(), string_lit(b)) {
                        if let (Expr::Var(v), true) = (v.as_ref(), prop == "name" && s == name) {
                            out.insert(v.as_str());
                        }
                    }
                }
            }
        });
    }
    out
}

fn position_of(q: &Query, p: &PathPattern, name: &str) -> Option<usize> {
    let pinned = where_names(q, name);
    p.nodes().position(|n| {
        n.props
            .iter()
            .any(|(k, v)| k == "name" && string_lit(v) == Some(name))
            || n.var.as_deref().is_some_and(|v| pinned.contains(v))
    })
}

fn main_path(q: &Query) -> Option<&PathPattern> {
    let patterns: Vec<&PathPattern> = q.patterns().map(|(_, p)| p).collect();
    patterns
        .iter()
        .find(|p| p.steps.iter().any(|(r, _)| r.length.is_some()))
        .or_else(|| patterns.iter().max_by_key(|p| p.len()))
        .copied()
}

/// Exact hop counts the query pins, from `size(relationships(p)) = K`,
/// `length(p) = K` or a fixed-range variable-length relationship.
fn pinned_hops(q: &Query, p: &PathPattern) -> Vec<i64> {
    let mut out = Vec::new();
    for (r, _) in &p.steps {
        if let Some(len) = r.length {
            if let (Some(lo), Some(hi)) = (len.min, len.max) {
                if lo == hi {
                    out.push(i64::from(lo));
                }
            }
        }
    }
    let hop_call = |e: &Expr| match e {
        Expr::Call { name, args, .. } if name == "length" => args.len() == 1,
        Expr::Call { name, args, .. } if name == "size" => matches!(
            args.first(),
            Some(Expr::Call { name, .. }) if name == "relationships" || name == "rels"
        ),
        _ => false,
    };
    for c in &q.clauses {
        let Clause::Match(m) = c else { continue };
        let Some(w) = &m.where_ else { continue };
        w.walk(&mut |e| {
            if let Expr::Binary(BinaryOp::Eq, l, r) = e {
                for (a, b) in [(l, r), (r, l)] {
                    if let (true, Expr::Literal(Literal::Integer(k))) = (hop_call(a), b.as_ref()) {
                        out.push(*k);
                    }
                }
            }
        });
    }
    out
}

fn classify_path(params: &Params, q: &Query, predicted: &[Vec<String>]) -> ErrorLabel {
    let Some(path) = main_path(q) else {
        return ErrorLabel::Other;
    };
    let last = path.len();
    let target_at = position_of(q, path, &params.target);
    let source_at = params.source.as_deref().and_then(|s| position_of(q, path, s));
    if last > 0 && (target_at == Some(0) || (source_at == Some(last) && target_at != Some(last))) {
        return ErrorLabel::EndpointAnchoring;
    }
    let reversed_walk = target_at == Some(last)
        && path
            .steps
            .iter()
            .any(|(r, _)| r.length.is_some() && r.direction == Direction::Left);
    if reversed_walk || rewrite_directions(q).changed > 0 {
        return ErrorLabel::TraversalDirection;
    }
    if let Some(n) = params.n {
        let want = 2 * i64::from(n);
        let wrong_pin = pinned_hops(q, path).iter().any(|&k| k != want);
        let too_short = path
            .steps
            .iter()
            .filter_map(|(r, _)| r.length.and_then(|l| l.max))
            .any(|m| i64::from(m) < want);
        let wrong_found = predicted.iter().any(|p| p.len() != n as usize);
        if wrong_pin || too_short || wrong_found {
            return ErrorLabel::PathwayLength;
        }
    }
    ErrorLabel::Other
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::retrieval::{score_multi_step, score_single_step};
    use crate::tasks::AnswerRow;

    fn params(target: &str, n: Option<u32>) -> Params {
        Params {
            target: target.into(),
            n,
            source: None,
        }
    }

    const ALT: &str = "all(i IN range(0, size(nodes(p)) - 1) WHERE (i % 2 = 0 AND 'Molecule' IN labels(nodes(p)[i])) OR (i % 2 = 1 AND 'Reaction' IN labels(nodes(p)[i])))";

    fn multi(q: &str, predicted: &[Vec<String>]) -> Option<ErrorLabel> {
        let gold = vec![vec!["R1".to_string(), "R2".to_string()]];
        let s = score_multi_step(predicted, &gold);
        classify_error(
            &params("T", Some(2)),
            Some(q),
            Outcome::Multi {
                scores: &s,
                predicted,
            },
        )
    }

    #[test]
    fn invalid_and_correct() {
        let p = params("T", Some(2));
        assert_eq!(classify_error(&p, Some("MATCH ("), Outcome::Failed), Some(ErrorLabel::InvalidQuery));
        assert_eq!(classify_error(&p, None, Outcome::Failed), Some(ErrorLabel::InvalidQuery));
        let gold = vec![vec!["R1".to_string(), "R2".to_string()]];
        let q = format!("MATCH p = (s:Molecule)-[:REACTS_IN|PRODUCES*..4]->(t:Molecule {{name: 'T'}}) WHERE size(relationships(p)) = 4 AND {ALT} RETURN p");
        assert_eq!(multi(&q, &gold), None);
    }

    #[test]
    fn target_at_start_is_endpoint_anchoring() {
        let q = format!("MATCH p = (t:Molecule {{name: 'T'}})-[:REACTS_IN|PRODUCES*..4]->(x:Molecule) WHERE size(relationships(p)) = 4 AND {ALT} RETURN p");
        assert_eq!(multi(&q, &[]), Some(ErrorLabel::EndpointAnchoring));
        let q = "MATCH p = (t:Molecule)-[:REACTS_IN|PRODUCES*..4]->(x:Molecule) WHERE t.name = 'T' RETURN p";
        assert_eq!(multi(q, &[]), Some(ErrorLabel::EndpointAnchoring));
    }

    #[test]
    fn backward_walk_into_target_is_traversal_direction() {
        let q = "MATCH p = (s:Molecule)<-[:REACTS_IN|PRODUCES*..4]-(t:Molecule {name: 'T'}) RETURN p";
        assert_eq!(multi(q, &[]), Some(ErrorLabel::TraversalDirection));
    }

    #[test]
    fn hop_count() {
        let q = "MATCH p = (s:Molecule)-[:REACTS_IN|PRODUCES*..6]->(t:Molecule {name: 'T'}) WHERE size(relationships(p)) = 6 RETURN p";
        assert_eq!(multi(q, &[]), Some(ErrorLabel::PathwayLength));
        let q = "MATCH p = (s:Molecule)-[:REACTS_IN|PRODUCES*..8]->(t:Molecule {name: 'T'}) RETURN p";
        let found = vec![vec!["R0".to_string(), "R1".to_string(), "R2".to_string()]];
        assert_eq!(multi(q, &found), Some(ErrorLabel::PathwayLength));
        let q = "MATCH p = (s:Molecule)-[:REACTS_IN|PRODUCES*..4]->(t:Molecule {name: 'T'}) RETURN p";
        assert_eq!(multi(q, &[]), Some(ErrorLabel::Other));
    }

    fn row(pairs: &[(&str, &[&str])]) -> AnswerRow {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn single_step_labels() {
        let gold = [row(&[("reaction_id", &["R1"]), ("reactants", &["A"]), ("products", &["T"])])];
        let pred = [row(&[("reaction_id", &["R1"]), ("products", &["T"])])];
        let r = score_single_step(&pred, &gold, None);
        let q = "MATCH (t:Molecule {name: 'T'})<-[:PRODUCES]-(r:Reaction) RETURN r.id";
        let p = params("T", None);
        assert_eq!(classify_error(&p, Some(q), Outcome::Single(&r)), Some(ErrorLabel::ReactantsMissing));
        let q = "MATCH (t:Molecule {name: 'T'})-[:PRODUCES]->(r:Reaction) RETURN r.id";
        assert_eq!(
            classify_error(&p, Some(q), Outcome::Single(&r)),
            Some(ErrorLabel::WrongReactantDirectionality)
        );
        let perfect = score_single_step(&gold, &gold, None);
        assert_eq!(classify_error(&p, Some(q), Outcome::Single(&perfect)), None);
    }
}
