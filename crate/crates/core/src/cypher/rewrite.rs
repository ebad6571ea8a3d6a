//! Deterministic arrow correction against the schema directions.
//!
//! Endpoint labels come from explicit labels, from other occurrences of the
//! same variable, from key-property hints (`name` for molecules, `id` for
//! reactions) and from bipartite propagation across single hops.

use std::collections::HashMap;

use super::ast::*;
use super::error::ParseError;
use super::parser::parse_with_source_map;

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub query: Query,
    /// Number of relationship atoms whose direction changed.
    pub changed: usize,
    /// Atoms left untouched because their kinds need conflicting orientations.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRewrite {
    pub text: String,
    pub changed: usize,
    pub flagged: Vec<String>,
}

pub fn rewrite_directions(q: &Query) -> RewriteOutcome {
    let (plan, flagged) = plan(q);
    let mut query = q.clone();
    let mut changed = 0;
    let mut it = plan.into_iter();
    for p in query.patterns_mut() {
        for (rel, _) in p.steps.iter_mut() {
            if let Some(Some(dir)) = it.next() {
                if rel.direction != dir {
                    rel.direction = dir;
                    changed += 1;
                }
            }
        }
    }
    RewriteOutcome {
        query,
        changed,
        flagged,
    }
}

/// Same as [`rewrite_directions`] but patches only the arrow characters of the
/// original text, so everything else stays byte-identical.
pub fn rewrite_text(text: &str) -> Result<TextRewrite, ParseError> {
    let parsed = parse_with_source_map(text)?;
    let (plan, flagged) = plan(&parsed.query);
    let rels: Vec<&RelPattern> = parsed
        .query
        .patterns()
        .flat_map(|(_, p)| p.steps.iter().map(|(r, _)| r))
        .collect();
    let mut edits = Vec::new();
    for ((rel, span), want) in rels.iter().zip(&parsed.source_map.rels).zip(plan) {
        let Some(want) = want else { continue };
        if rel.direction == want {
            continue;
        }
        let detail = span.detail.map(|(s, e)| &text[s..e]).unwrap_or("");
        let replacement = match want {
            Direction::Right => format!("-{detail}->"),
            Direction::Left => format!("<-{detail}-"),
            Direction::Undirected => format!("-{detail}-"),
        };
        edits.push((span.start, span.end, replacement));
    }
    let changed = edits.len();
    let mut out = text.to_string();
    for (s, e, r) in edits.into_iter().rev() {
        out.replace_range(s..e, &r);
    }
    Ok(TextRewrite {
        text: out,
        changed,
        flagged,
    })
}

fn hint(n: &NodePattern) -> Option<Label> {
    if let Some(l) = n.labels.iter().find_map(|l| Label::parse(l)) {
        return Some(l);
    }
    if n.props.iter().any(|(k, _)| k == "name") {
        return Some(Label::Molecule);
    }
    if n.props.iter().any(|(k, _)| k == "id") {
        return Some(Label::Reaction);
    }
    None
}

fn single_hop(r: &RelPattern) -> bool {
    match r.length {
        None => true,
        Some(l) => l.max == Some(1) && l.min.unwrap_or(1) == 1,
    }
}

/// Source label shared by every kind of the atom, or `None` when the kinds
/// disagree. An empty kind list has no preferred orientation.
fn shared_source(kinds: &[RelKind]) -> Option<Option<Label>> {
    let mut labels = kinds.iter().map(|k| k.source_label());
    let Some(first) = labels.next() else {
        return Some(None);
    };
    if labels.all(|l| l == first) {
        Some(Some(first))
    } else {
        None
    }
}

fn infer_labels(q: &Query) -> Vec<Vec<Option<Label>>> {
    let patterns: Vec<&PathPattern> = q.patterns().map(|(_, p)| p).collect();
    let mut by_var: HashMap<&str, Label> = HashMap::new();
    let mut labels: Vec<Vec<Option<Label>>> = patterns
        .iter()
        .map(|p| p.nodes().map(hint).collect())
        .collect();
    loop {
        let mut progress = false;
        for (pi, p) in patterns.iter().enumerate() {
            for (ni, n) in p.nodes().enumerate() {
                if let Some(v) = &n.var {
                    match (labels[pi][ni], by_var.get(v.as_str())) {
                        (Some(l), None) => {
                            by_var.insert(v, l);
                            progress = true;
                        }
                        (None, Some(&l)) => {
                            labels[pi][ni] = Some(l);
                            progress = true;
                        }
                        _ => {}
                    }
                }
            }
            for (si, (rel, _)) in p.steps.iter().enumerate() {
                if !single_hop(rel) {
                    continue;
                }
                // Every schema edge joins a Molecule and a Reaction.
                match (labels[pi][si], labels[pi][si + 1]) {
                    (Some(l), None) => {
                        labels[pi][si + 1] = Some(l.other());
                        progress = true;
                    }
                    (None, Some(r)) => {
                        labels[pi][si] = Some(r.other());
                        progress = true;
                    }
                    _ => {}
                }
            }
        }
        if !progress {
            return labels;
        }
    }
}

/// Wanted direction per relationship atom (in pattern order), plus flags.
fn plan(q: &Query) -> (Vec<Option<Direction>>, Vec<String>) {
    let labels = infer_labels(q);
    let mut out = Vec::new();
    let mut flagged = Vec::new();
    for (pi, (_, p)) in q.patterns().enumerate() {
        for (si, (rel, _)) in p.steps.iter().enumerate() {
            let kinds = rel
                .kinds
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join("|");
            match shared_source(&rel.kinds) {
                None => {
                    if rel.direction != Direction::Undirected {
                        flagged.push(format!(
                            "[:{kinds}] mixes kinds with opposite schema directions; left as written"
                        ));
                    }
                    out.push(None);
                }
                Some(None) => out.push(None),
                Some(Some(src)) => {
                    if !single_hop(rel) {
                        out.push(None);
                        continue;
                    }
                    let want = match (labels[pi][si], labels[pi][si + 1]) {
                        (Some(l), _) if l == src => Some(Direction::Right),
                        (Some(_), _) => Some(Direction::Left),
                        (None, Some(r)) if r == src => Some(Direction::Left),
                        (None, Some(_)) => Some(Direction::Right),
                        (None, None) => None,
                    };
                    out.push(want);
                }
            }
        }
    }
    (out, flagged)
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::super::render::render;
    use super::*;

    #[test]
    fn reversed_reacts_in_is_flipped() {
        let t = rewrite_text("MATCH (m:Molecule)<-[:REACTS_IN]-(r:Reaction) RETURN r.id").unwrap();
        assert_eq!(t.text, "MATCH (m:Molecule)-[:REACTS_IN]->(r:Reaction) RETURN r.id");
        assert_eq!(t.changed, 1);
    }

    #[test]
    fn labels_flow_through_variables_and_hints() {
        let q = "MATCH (t {name: 'C'})-[:PRODUCES]->(r)\nOPTIONAL MATCH (r)-[:REACTS_IN]->(x)\nRETURN r.id";
        let t = rewrite_text(q).unwrap();
        assert_eq!(
            t.text,
            "MATCH (t {name: 'C'})<-[:PRODUCES]-(r)\nOPTIONAL MATCH (r)<-[:REACTS_IN]-(x)\nRETURN r.id"
        );
    }

    #[test]
    fn undirected_alternation_stays() {
        let q = "MATCH p = (a:Molecule)-[:REACTS_IN|PRODUCES*..4]-(b:Molecule {name: 'X'}) RETURN p";
        let t = rewrite_text(q).unwrap();
        assert_eq!(t.text, q);
        assert!(t.flagged.is_empty());
        let t = rewrite_text(&q.replace("]-(b", "]->(b")).unwrap();
        assert_eq!(t.changed, 0);
        assert_eq!(t.flagged.len(), 1);
    }

    #[test]
    fn idempotent_and_agrees_with_ast() {
        let q = "MATCH (a:Molecule)<-[r1:REACTS_IN]-(x)<-[:USES_SOLVENT]-(s:Molecule) RETURN a";
        let once = rewrite_text(q).unwrap();
        let twice = rewrite_text(&once.text).unwrap();
        assert_eq!(twice.text, once.text);
        assert_eq!(twice.changed, 0);
        let ast = rewrite_directions(&parse(q).unwrap());
        assert_eq!(ast.query, parse(&once.text).unwrap());
        assert_eq!(ast.changed, 2);
        assert_eq!(parse(&render(&ast.query)).unwrap(), ast.query);
    }
}
