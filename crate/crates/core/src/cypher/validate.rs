//! Static checks on a parsed query; never touches graph data.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::error::ParseError;
use super::parser::{parse_with_source_map, SourceMap};
use super::render::render_expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    pub line: usize,
    pub column: usize,
    #[serde(skip, default = "default_severity")]
    pub severity: Severity,
}

fn default_severity() -> Severity {
    Severity::Error
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} at line {}, column {}: {}",
            self.code, self.line, self.column, self.message
        )
    }
}

impl From<&ParseError> for Diagnostic {
    fn from(e: &ParseError) -> Self {
        Diagnostic {
            code: e.code.as_str().to_string(),
            message: e.message.clone(),
            line: e.line,
            column: e.column,
            severity: Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub executable: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    /// All error messages on one line each, for feeding back to a corrector.
    pub fn error_summary(&self) -> String {
        self.errors()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Labels and property keys the store knows about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub labels: Vec<&'static str>,
    pub node_properties: Vec<&'static str>,
    pub rel_properties: Vec<&'static str>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            labels: vec!["Molecule", "Reaction"],
            node_properties: vec!["name", "id"],
            rel_properties: vec!["yield"],
        }
    }
}

/// Hop cap applied when a variable-length pattern has no upper bound.
pub const UNBOUNDED_HOP_CAP: u32 = 10;

pub fn validate(q: &Query, schema: &Schema) -> ValidationReport {
    validate_with_map(q, schema, None)
}

pub fn validate_with_map(q: &Query, schema: &Schema, map: Option<&SourceMap>) -> ValidationReport {
    let mut v = Validator {
        schema,
        map,
        clause: 0,
        diags: Vec::new(),
    };
    v.run(q);
    let executable = !v.diags.iter().any(|d| d.severity == Severity::Error);
    ValidationReport {
        executable,
        diagnostics: v.diags,
    }
}

/// Parse then validate; parse failures become a single error diagnostic.
pub fn explain(text: &str, schema: &Schema) -> ValidationReport {
    match parse_with_source_map(text) {
        Ok(p) => validate_with_map(&p.query, schema, Some(&p.source_map)),
        Err(e) => ValidationReport {
            executable: false,
            diagnostics: vec![Diagnostic::from(&e)],
        },
    }
}

fn arity(name: &str) -> Option<(usize, usize)> {
    Some(match name {
        "range" => (2, 3),
        "coalesce" => (1, usize::MAX),
        n if SCALAR_FUNCTIONS.contains(&n) || is_aggregate(n) => (1, 1),
        _ => return None,
    })
}

struct Validator<'a> {
    schema: &'a Schema,
    map: Option<&'a SourceMap>,
    clause: usize,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn push(&mut self, severity: Severity, code: &str, message: String) {
        let (line, column) = self
            .map
            .and_then(|m| m.clauses.get(self.clause).copied())
            .unwrap_or((1, 1));
        let d = Diagnostic {
            code: code.to_string(),
            message,
            line,
            column,
            severity,
        };
        if !self.diags.contains(&d) {
            self.diags.push(d);
        }
    }

    fn error(&mut self, code: &str, message: String) {
        self.push(Severity::Error, code, message);
    }

    fn warn(&mut self, code: &str, message: String) {
        self.push(Severity::Warning, code, message);
    }

    fn run(&mut self, q: &Query) {
        let mut scope: Vec<String> = Vec::new();
        let last = q.clauses.len().saturating_sub(1);
        for (i, clause) in q.clauses.iter().enumerate() {
            self.clause = i;
            match clause {
                Clause::Match(m) => self.match_clause(m, &mut scope),
                Clause::With(p) => {
                    scope = self.projection(p, &scope, true);
                }
                Clause::Return(p) => {
                    if i != last {
                        self.error(
                            "return-not-last",
                            "RETURN must be the final clause".to_string(),
                        );
                    }
                    self.projection(p, &scope, false);
                }
            }
        }
        if !matches!(q.clauses.last(), Some(Clause::Return(_))) {
            self.clause = last;
            self.error(
                "missing-return",
                "query must end with a RETURN clause".to_string(),
            );
        }
    }

    fn match_clause(&mut self, m: &MatchClause, scope: &mut Vec<String>) {
        for p in &m.patterns {
            if let Some(v) = &p.var {
                if scope.contains(v) {
                    self.error(
                        "variable-rebound",
                        format!("path variable `{v}` is already bound"),
                    );
                }
            }
            for (idx, node) in p.nodes().enumerate() {
                for label in &node.labels {
                    if !self.schema.labels.contains(&label.as_str()) {
                        self.warn("unknown-label", format!("label `{label}` is not in the schema"));
                    }
                }
                for (key, e) in &node.props {
                    if !self.schema.node_properties.contains(&key.as_str()) {
                        self.warn(
                            "unknown-property",
                            format!("node property `{key}` is not in the schema"),
                        );
                    }
                    self.expr(e, scope, &mut Vec::new(), Ctx::PatternProp);
                }
                if let Some(v) = &node.var {
                    if !scope.contains(v) {
                        scope.push(v.clone());
                    }
                }
                if idx < p.steps.len() {
                    let rel = &p.steps[idx].0;
                    self.rel(rel, scope);
                }
            }
            if let Some(v) = &p.var {
                if !scope.contains(v) {
                    scope.push(v.clone());
                }
            }
        }
        if let Some(w) = &m.where_ {
            self.expr(w, scope, &mut Vec::new(), Ctx::Where);
        }
    }

    fn rel(&mut self, rel: &RelPattern, scope: &mut Vec<String>) {
        if let Some(len) = &rel.length {
            let min = len.min.unwrap_or(1);
            if min == 0 {
                self.error(
                    "invalid-var-length",
                    "variable-length lower bound must be at least 1".to_string(),
                );
            }
            if let Some(max) = len.max {
                if max < min {
                    self.error(
                        "invalid-var-length",
                        format!("variable-length bounds {min}..{max} are empty"),
                    );
                }
            } else {
                self.warn(
                    "unbounded-var-length",
                    format!("no upper hop bound; capped at {UNBOUNDED_HOP_CAP}"),
                );
            }
        }
        for (key, e) in &rel.props {
            if !self.schema.rel_properties.contains(&key.as_str()) {
                self.warn(
                    "unknown-property",
                    format!("relationship property `{key}` is not in the schema"),
                );
            }
            self.expr(e, scope, &mut Vec::new(), Ctx::PatternProp);
        }
        if let Some(v) = &rel.var {
            if scope.contains(v) {
                self.error(
                    "variable-rebound",
                    format!("relationship variable `{v}` is already bound"),
                );
            } else {
                scope.push(v.clone());
            }
        }
    }

    /// Returns the scope visible after the projection.
    fn projection(&mut self, p: &Projection, scope: &[String], is_with: bool) -> Vec<String> {
        let mut names = Vec::new();
        let mut aggregating = false;
        for item in &p.items {
            self.expr(&item.expr, scope, &mut Vec::new(), Ctx::Projection);
            aggregating |= item.expr.contains_aggregate();
            let name = match (&item.alias, &item.expr) {
                (Some(a), _) => a.clone(),
                (None, Expr::Var(v)) => v.clone(),
                (None, e) => {
                    if is_with {
                        self.error(
                            "with-missing-alias",
                            format!("expression `{}` in WITH must be aliased", render_expr(e)),
                        );
                    }
                    render_expr(e)
                }
            };
            if names.contains(&name) {
                self.error(
                    "duplicate-column",
                    format!("column `{name}` is projected twice"),
                );
            }
            names.push(name);
        }

        let mut order_scope = names.clone();
        if !aggregating && !p.distinct {
            for s in scope {
                if !order_scope.contains(s) {
                    order_scope.push(s.clone());
                }
            }
        }
        for s in &p.order_by {
            if p.items.iter().any(|i| i.expr == s.expr) {
                continue;
            }
            self.expr(&s.expr, &order_scope, &mut Vec::new(), Ctx::OrderBy);
        }
        for (what, e) in [("SKIP", &p.skip), ("LIMIT", &p.limit)] {
            if let Some(e) = e {
                if !matches!(e, Expr::Literal(Literal::Integer(i)) if *i >= 0) {
                    self.error(
                        "invalid-limit",
                        format!("{what} must be a non-negative integer literal"),
                    );
                }
            }
        }
        if let Some(w) = &p.where_ {
            self.expr(w, &names, &mut Vec::new(), Ctx::Where);
        }
        names
    }

    fn expr(&mut self, e: &Expr, scope: &[String], locals: &mut Vec<String>, ctx: Ctx) {
        self.expr_inner(e, scope, locals, ctx, false);
    }

    fn expr_inner(
        &mut self,
        e: &Expr,
        scope: &[String],
        locals: &mut Vec<String>,
        ctx: Ctx,
        in_aggregate: bool,
    ) {
        match e {
            Expr::Literal(_) => {}
            Expr::Var(v) => {
                if !locals.contains(v) && !scope.contains(v) {
                    self.error("unbound-variable", format!("variable `{v}` is not defined"));
                }
            }
            Expr::Property(base, key) => {
                if !self.schema.node_properties.contains(&key.as_str())
                    && !self.schema.rel_properties.contains(&key.as_str())
                    && !matches!(**base, Expr::Map(_))
                {
                    self.warn(
                        "unknown-property",
                        format!("property `{key}` is not in the schema"),
                    );
                }
                self.expr_inner(base, scope, locals, ctx, in_aggregate);
            }
            Expr::Index(a, b) => {
                self.expr_inner(a, scope, locals, ctx, in_aggregate);
                self.expr_inner(b, scope, locals, ctx, in_aggregate);
            }
            Expr::CountStar => self.aggregate_site(ctx, in_aggregate, "count(*)"),
            Expr::Call {
                name,
                distinct,
                args,
            } => {
                let agg = is_aggregate(name);
                match arity(name) {
                    None => self.error(
                        "unknown-function",
                        format!("unknown function `{name}`"),
                    ),
                    Some((lo, hi)) if args.len() < lo || args.len() > hi => self.error(
                        "wrong-arity",
                        format!("`{name}` called with {} argument(s)", args.len()),
                    ),
                    _ => {}
                }
                if *distinct && !agg {
                    self.error(
                        "distinct-non-aggregate",
                        format!("DISTINCT is only valid inside an aggregate, not `{name}`"),
                    );
                }
                if agg {
                    self.aggregate_site(ctx, in_aggregate, name);
                }
                for a in args {
                    self.expr_inner(a, scope, locals, ctx, in_aggregate || agg);
                }
            }
            Expr::List(items) => {
                for i in items {
                    self.expr_inner(i, scope, locals, ctx, in_aggregate);
                }
            }
            Expr::Map(entries) => {
                for (_, v) in entries {
                    self.expr_inner(v, scope, locals, ctx, in_aggregate);
                }
            }
            Expr::ListComprehension {
                var,
                list,
                filter,
                map,
            } => {
                self.expr_inner(list, scope, locals, ctx, in_aggregate);
                locals.push(var.clone());
                if let Some(f) = filter {
                    self.expr_inner(f, scope, locals, ctx, in_aggregate);
                }
                if let Some(m) = map {
                    self.expr_inner(m, scope, locals, ctx, in_aggregate);
                }
                locals.pop();
            }
            Expr::Quantified {
                var, list, pred, ..
            } => {
                self.expr_inner(list, scope, locals, ctx, in_aggregate);
                locals.push(var.clone());
                self.expr_inner(pred, scope, locals, ctx, in_aggregate);
                locals.pop();
            }
            Expr::Unary(_, a) => self.expr_inner(a, scope, locals, ctx, in_aggregate),
            Expr::Binary(_, a, b) => {
                self.expr_inner(a, scope, locals, ctx, in_aggregate);
                self.expr_inner(b, scope, locals, ctx, in_aggregate);
            }
            Expr::IsNull { expr, .. } => self.expr_inner(expr, scope, locals, ctx, in_aggregate),
        }
    }

    fn aggregate_site(&mut self, ctx: Ctx, in_aggregate: bool, name: &str) {
        if in_aggregate {
            self.error(
                "nested-aggregate",
                format!("aggregate `{name}` cannot be nested inside another aggregate"),
            );
        }
        match ctx {
            Ctx::Projection => {}
            Ctx::Where => self.error(
                "aggregate-in-where",
                format!("aggregate `{name}` is not allowed in WHERE"),
            ),
            Ctx::PatternProp | Ctx::OrderBy => self.error(
                "misplaced-aggregate",
                format!("aggregate `{name}` is only allowed in WITH or RETURN items"),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Projection,
    Where,
    PatternProp,
    OrderBy,
}

/// Distinct variable names a query binds anywhere, in first-seen order.
pub fn bound_variables(q: &Query) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, p) in q.patterns() {
        let rels = p.steps.iter().filter_map(|(r, _)| r.var.as_ref());
        let nodes = p.nodes().filter_map(|n| n.var.as_ref());
        for v in p.var.iter().chain(nodes).chain(rels) {
            if seen.insert(v.clone()) {
                out.push(v.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(text: &str) -> Vec<String> {
        explain(text, &Schema::default())
            .diagnostics
            .into_iter()
            .map(|d| d.code)
            .collect()
    }

    #[test]
    fn template_is_clean() {
        let r = explain(
            r#"MATCH (target:Molecule {name: "C"})<-[:PRODUCES]-(r:Reaction)
OPTIONAL MATCH (reactant:Molecule)-[:REACTS_IN]->(r)
RETURN r.id, collect(DISTINCT reactant.name) AS reactants"#,
            &Schema::default(),
        );
        assert!(r.executable);
        assert!(r.diagnostics.is_empty(), "{:?}", r.diagnostics);
    }

    #[test]
    fn unbound_variable() {
        let r = explain("MATCH (m:Molecule) RETURN q", &Schema::default());
        assert!(!r.executable);
        assert_eq!(r.diagnostics[0].code, "unbound-variable");
        assert_eq!((r.diagnostics[0].line, r.diagnostics[0].column), (1, 20));
    }

    #[test]
    fn aggregate_placement() {
        assert_eq!(
            codes("MATCH (m) RETURN collect(collect(m.name)) AS x"),
            vec!["nested-aggregate"]
        );
        assert_eq!(
            codes("MATCH (m) WHERE count(m) > 1 RETURN m"),
            vec!["aggregate-in-where"]
        );
    }

    #[test]
    fn structural_errors() {
        assert_eq!(codes("MATCH (m:Molecule)"), vec!["missing-return"]);
        assert_eq!(
            codes("MATCH (m:Molecule) WITH m.name RETURN m"),
            vec!["with-missing-alias", "unbound-variable"]
        );
        assert_eq!(codes("MATCH (m) RETURN foo(m)"), vec!["unknown-function"]);
        assert_eq!(codes("MATCH (m:Molecul) RETURN m"), vec!["unknown-label"]);
        assert!(explain("MATCH (m:Molecul) RETURN m", &Schema::default()).executable);
        assert_eq!(codes("MATCH (a)-[*0..2]-(b) RETURN a"), vec!["invalid-var-length"]);
        assert_eq!(codes("MATCH (a)-[*]-(b) RETURN a"), vec!["unbounded-var-length"]);
        assert_eq!(codes("MATCH (a) RETURN a LIMIT -1"), vec!["invalid-limit"]);
    }

    #[test]
    fn order_by_scope() {
        assert!(codes("MATCH (r:Reaction)-[p:PRODUCES]->(m) WITH r, p ORDER BY p.yield DESC LIMIT 1 RETURN r.id").is_empty());
        assert!(codes("MATCH (r:Reaction) RETURN DISTINCT r.id ORDER BY r.id").is_empty());
        assert_eq!(
            codes("MATCH (r:Reaction)-->(m) RETURN r.id AS id, count(m) AS c ORDER BY m.name"),
            vec!["unbound-variable"]
        );
    }

    #[test]
    fn parse_error_becomes_diagnostic() {
        let r = explain("MATCH (a)-[:FOO]->(b) RETURN a", &Schema::default());
        assert!(!r.executable);
        assert_eq!(r.diagnostics[0].code, "unsupported-relationship-kind");
        let json = serde_json::to_value(&r.diagnostics[0]).unwrap();
        assert_eq!(
            json.as_object().unwrap().keys().collect::<Vec<_>>(),
            vec!["code", "column", "line", "message"]
        );
    }
}
