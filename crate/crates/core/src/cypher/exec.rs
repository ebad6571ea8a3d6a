//! Interpreter for the Cypher subset over a [`KnowledgeGraph`].
//!
//! Rows are flat value vectors addressed through a scope of variable names.
//! Matching is homomorphic on nodes with relationship uniqueness inside each
//! path pattern; variable-length segments enumerate trails.

use std::collections::{BTreeMap, HashMap};

use super::ast::*;
use super::error::ExecError;
use super::render::render_expr;
use super::validate::UNBOUNDED_HOP_CAP;
use super::value::{PathValue, Value};
use crate::graph::{Dir, EdgeId, KnowledgeGraph, NodeId};

type Row = Vec<Value>;
type EResult<T> = Result<T, ExecError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Upper bound on rows alive between clauses.
    pub max_rows: usize,
    /// Upper bound on edge expansions during matching.
    pub max_expansions: usize,
    /// Hop limit for `*` without an upper bound.
    pub hop_cap: u32,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            max_rows: 1_000_000,
            max_expansions: 20_000_000,
            hop_cap: UNBOUNDED_HOP_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn row_map(&self, i: usize) -> BTreeMap<&str, &Value> {
        self.columns
            .iter()
            .map(String::as_str)
            .zip(&self.rows[i])
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

/// Column name of a projection item: its alias, else its text.
pub fn column_name(item: &ProjectionItem) -> String {
    match (&item.alias, &item.expr) {
        (Some(a), _) => a.clone(),
        (None, Expr::Var(v)) => v.clone(),
        (None, e) => render_expr(e),
    }
}

pub fn execute(q: &Query, g: &KnowledgeGraph) -> EResult<ResultTable> {
    execute_with(q, g, &ExecOptions::default())
}

pub fn execute_with(q: &Query, g: &KnowledgeGraph, opts: &ExecOptions) -> EResult<ResultTable> {
    let mut ex = Exec {
        g,
        opts: *opts,
        expansions: 0,
    };
    ex.run(q)
}

struct Exec<'g> {
    g: &'g KnowledgeGraph,
    opts: ExecOptions,
    expansions: usize,
}

/// Variable lookup context for expression evaluation.
struct Env<'a> {
    names: &'a [String],
    row: &'a [Value],
    /// Pre-projection row, visible to ORDER BY.
    outer: Option<(&'a [String], &'a [Value])>,
    /// Precomputed aggregate values, keyed by expression address.
    aggs: &'a [(*const Expr, Value)],
}

impl<'a> Env<'a> {
    fn new(names: &'a [String], row: &'a [Value]) -> Self {
        Env {
            names,
            row,
            outer: None,
            aggs: &[],
        }
    }
}

fn type_err(msg: impl Into<String>) -> ExecError {
    ExecError::Type(msg.into())
}

impl Exec<'_> {
    fn run(&mut self, q: &Query) -> EResult<ResultTable> {
        let mut scope: Vec<String> = Vec::new();
        let mut rows: Vec<Row> = vec![Vec::new()];
        for clause in &q.clauses {
            match clause {
                Clause::Match(m) => {
                    rows = self.match_clause(m, &mut scope, rows)?;
                }
                Clause::With(p) => {
                    let (names, out) = self.project(p, &scope, rows)?;
                    scope = names;
                    rows = out;
                }
                Clause::Return(p) => {
                    let (columns, rows) = self.project(p, &scope, rows)?;
                    return Ok(ResultTable { columns, rows });
                }
            }
            if rows.len() > self.opts.max_rows {
                return Err(ExecError::TooLarge(self.opts.max_rows));
            }
        }
        Err(ExecError::NotExecutable(
            "query has no RETURN clause".to_string(),
        ))
    }

    // ---- MATCH -------------------------------------------------------------

    fn match_clause(
        &mut self,
        m: &MatchClause,
        scope: &mut Vec<String>,
        rows: Vec<Row>,
    ) -> EResult<Vec<Row>> {
        let before = scope.len();
        let mut out = Vec::new();
        let mut clause_scope = scope.clone();
        let plans: Vec<PatternPlan> = m
            .patterns
            .iter()
            .map(|p| {
                let plan = PatternPlan::new(p, &clause_scope);
                clause_scope.extend(plan.new_vars.iter().cloned());
                plan
            })
            .collect();
        let added = clause_scope.len() - before;

        for row in rows {
            let mut current = vec![row.clone()];
            let mut local_scope = scope.clone();
            for (p, plan) in m.patterns.iter().zip(&plans) {
                let mut next = Vec::new();
                for r in &current {
                    self.expand_pattern(p, plan, &local_scope, r, &mut next)?;
                    if next.len() > self.opts.max_rows {
                        return Err(ExecError::TooLarge(self.opts.max_rows));
                    }
                }
                local_scope.extend(plan.new_vars.iter().cloned());
                current = next;
            }
            if let Some(w) = &m.where_ {
                let mut kept = Vec::with_capacity(current.len());
                for r in current {
                    let v = self.eval(w, &Env::new(&clause_scope, &r), &mut Vec::new())?;
                    if truthy(&v)? {
                        kept.push(r);
                    }
                }
                current = kept;
            }
            if current.is_empty() && m.optional {
                let mut r = row;
                r.extend(std::iter::repeat_n(Value::Null, added));
                out.push(r);
            } else {
                out.extend(current);
            }
            if out.len() > self.opts.max_rows {
                return Err(ExecError::TooLarge(self.opts.max_rows));
            }
        }
        *scope = clause_scope;
        Ok(out)
    }

    fn node_matches(
        &self,
        pat: &NodePattern,
        props: &[(String, Value)],
        node: NodeId,
    ) -> bool {
        let n = self.g.node(node);
        if !pat.labels.iter().all(|l| l == n.label.as_str()) {
            return false;
        }
        props.iter().all(|(k, v)| {
            let actual = if k == n.label.key_property() {
                Value::String(n.key.clone())
            } else {
                Value::Null
            };
            actual.cypher_eq(v) == Some(true)
        })
    }

    fn rel_matches(&self, props: &[(String, Value)], e: EdgeId) -> bool {
        let edge = self.g.edge(e);
        props.iter().all(|(k, v)| {
            let actual = match (k.as_str(), edge.yield_pct) {
                ("yield", Some(y)) => Value::Float(y),
                _ => Value::Null,
            };
            actual.cypher_eq(v) == Some(true)
        })
    }

    fn expand_pattern(
        &mut self,
        p: &PathPattern,
        plan: &PatternPlan,
        scope: &[String],
        row: &Row,
        out: &mut Vec<Row>,
    ) -> EResult<()> {
        let env = Env::new(scope, row);
        let mut node_props = Vec::with_capacity(p.len() + 1);
        for n in p.nodes() {
            let mut v = Vec::with_capacity(n.props.len());
            for (k, e) in &n.props {
                v.push((k.clone(), self.eval(e, &env, &mut Vec::new())?));
            }
            node_props.push(v);
        }
        let mut rel_props = Vec::with_capacity(p.len());
        for (r, _) in &p.steps {
            let mut v = Vec::with_capacity(r.props.len());
            for (k, e) in &r.props {
                v.push((k.clone(), self.eval(e, &env, &mut Vec::new())?));
            }
            rel_props.push(v);
        }

        // Nodes fixed by the incoming row.
        let mut fixed: Vec<Option<NodeId>> = vec![None; p.len() + 1];
        for (i, n) in p.nodes().enumerate() {
            if let Some(v) = &n.var {
                if let Some(slot) = scope.iter().position(|s| s == v) {
                    match &row[slot] {
                        Value::Node(id) => fixed[i] = Some(*id),
                        Value::Null => return Ok(()),
                        other => {
                            return Err(type_err(format!(
                                "variable `{v}` is a {}, not a node",
                                other.type_name()
                            )))
                        }
                    }
                }
            }
        }
        let mut fixed_rels: Vec<Option<Value>> = vec![None; p.len()];
        for (i, (r, _)) in p.steps.iter().enumerate() {
            if let Some(v) = &r.var {
                if let Some(slot) = scope.iter().position(|s| s == v) {
                    if row[slot].is_null() {
                        return Ok(());
                    }
                    fixed_rels[i] = Some(row[slot].clone());
                }
            }
        }

        let anchor = plan.anchor;
        let candidates: Vec<NodeId> = if let Some(id) = fixed[anchor] {
            vec![id]
        } else if let Some(id) = self.key_lookup(p.node(anchor), &node_props[anchor]) {
            id.into_iter().collect()
        } else {
            let label = p.node(anchor).labels.first().cloned();
            self.g
                .nodes()
                .filter(|(_, n)| label.as_deref().is_none_or(|l| l == n.label.as_str()))
                .map(|(id, _)| id)
                .collect()
        };

        let ctx = MatchCtx {
            p,
            plan,
            fixed: &fixed,
            fixed_rels: &fixed_rels,
            node_props: &node_props,
            rel_props: &rel_props,
            row,
        };
        let mut st = State {
            nodes: vec![None; p.len() + 1],
            seg_nodes: vec![Vec::new(); p.len()],
            seg_rels: vec![Vec::new(); p.len()],
            used: Vec::new(),
        };
        for c in candidates {
            if !self.node_matches(p.node(anchor), &node_props[anchor], c) {
                continue;
            }
            st.nodes[anchor] = Some(c);
            self.extend(&ctx, 0, &mut st, out)?;
            st.nodes[anchor] = None;
        }
        Ok(())
    }

    /// `Some(candidates)` when the node pattern pins its key property.
    fn key_lookup(&self, n: &NodePattern, props: &[(String, Value)]) -> Option<Option<NodeId>> {
        for (k, v) in props {
            let label = match k.as_str() {
                "name" => Label::Molecule,
                "id" => Label::Reaction,
                _ => continue,
            };
            let Value::String(key) = v else {
                return Some(None);
            };
            return Some(self.g.lookup(label, key));
        }
        let _ = n;
        None
    }

    fn extend(
        &mut self,
        ctx: &MatchCtx,
        k: usize,
        st: &mut State,
        out: &mut Vec<Row>,
    ) -> EResult<()> {
        let Some(&(step, forward)) = ctx.plan.order.get(k) else {
            self.emit(ctx, st, out);
            return Ok(());
        };
        let (from_pos, to_pos) = if forward {
            (step, step + 1)
        } else {
            (step + 1, step)
        };
        let from = st.nodes[from_pos].expect("order visits known endpoints first");
        let rel = &ctx.p.steps[step].0;
        let kinds: &[RelKind] = if rel.kinds.is_empty() {
            &RelKind::ALL
        } else {
            &rel.kinds
        };
        let dirs: &[Dir] = match (rel.direction, forward) {
            (Direction::Right, true) | (Direction::Left, false) => &[Dir::Out],
            (Direction::Left, true) | (Direction::Right, false) => &[Dir::In],
            (Direction::Undirected, _) => &[Dir::Out, Dir::In],
        };
        match rel.length {
            None => {
                for &kind in kinds {
                    for &dir in dirs {
                        let edges = self.g.incident(from, kind, dir);
                        for &e in edges {
                            self.tick()?;
                            if st.used.contains(&e) || !self.rel_matches(&ctx.rel_props[step], e) {
                                continue;
                            }
                            if let Some(Value::Rel(want)) = &ctx.fixed_rels[step] {
                                if *want != e {
                                    continue;
                                }
                            } else if ctx.fixed_rels[step].is_some() {
                                continue;
                            }
                            let other = self.other_end(e, dir);
                            if !self.place_ok(ctx, st, to_pos, other) {
                                continue;
                            }
                            st.used.push(e);
                            st.seg_rels[step].push(e);
                            st.nodes[to_pos] = Some(other);
                            self.extend(ctx, k + 1, st, out)?;
                            st.nodes[to_pos] = None;
                            st.seg_rels[step].pop();
                            st.used.pop();
                        }
                    }
                }
            }
            Some(len) => {
                let min = len.min.unwrap_or(1);
                let max = len.max.unwrap_or(self.opts.hop_cap);
                let mut walk = Walk {
                    step,
                    k,
                    forward,
                    to_pos,
                    min,
                    max,
                    kinds,
                    dirs,
                    edges: Vec::new(),
                    inner: Vec::new(),
                };
                self.var_hops(ctx, &mut walk, from, st, out)?;
            }
        }
        Ok(())
    }

    fn var_hops(
        &mut self,
        ctx: &MatchCtx,
        w: &mut Walk,
        at: NodeId,
        st: &mut State,
        out: &mut Vec<Row>,
    ) -> EResult<()> {
        let depth = w.edges.len() as u32;
        if depth >= w.min && self.place_ok(ctx, st, w.to_pos, at) && self.fixed_rel_list_ok(ctx, w)
        {
            let (mut rels, mut inner) = (w.edges.clone(), w.inner.clone());
            if !w.forward {
                rels.reverse();
                inner.reverse();
            }
            let saved_rels = std::mem::replace(&mut st.seg_rels[w.step], rels);
            let saved_inner = std::mem::replace(&mut st.seg_nodes[w.step], inner);
            st.nodes[w.to_pos] = Some(at);
            self.extend(ctx, w.k + 1, st, out)?;
            st.nodes[w.to_pos] = None;
            st.seg_rels[w.step] = saved_rels;
            st.seg_nodes[w.step] = saved_inner;
        }
        if depth >= w.max {
            return Ok(());
        }
        for &kind in w.kinds {
            for &dir in w.dirs {
                let edges = self.g.incident(at, kind, dir);
                for &e in edges {
                    self.tick()?;
                    if st.used.contains(&e) || !self.rel_matches(&ctx.rel_props[w.step], e) {
                        continue;
                    }
                    let other = self.other_end(e, dir);
                    st.used.push(e);
                    w.edges.push(e);
                    if depth > 0 {
                        w.inner.push(at);
                    }
                    self.var_hops(ctx, w, other, st, out)?;
                    if depth > 0 {
                        w.inner.pop();
                    }
                    w.edges.pop();
                    st.used.pop();
                }
            }
        }
        Ok(())
    }

    fn fixed_rel_list_ok(&self, ctx: &MatchCtx, w: &Walk) -> bool {
        match &ctx.fixed_rels[w.step] {
            None => true,
            Some(Value::List(items)) => {
                let mut rels = w.edges.clone();
                if !w.forward {
                    rels.reverse();
                }
                items.len() == rels.len()
                    && items
                        .iter()
                        .zip(&rels)
                        .all(|(v, e)| matches!(v, Value::Rel(x) if x == e))
            }
            Some(_) => false,
        }
    }

    fn tick(&mut self) -> EResult<()> {
        self.expansions += 1;
        if self.expansions > self.opts.max_expansions {
            return Err(ExecError::TooLarge(self.opts.max_expansions));
        }
        Ok(())
    }

    fn other_end(&self, e: EdgeId, dir: Dir) -> NodeId {
        let edge = self.g.edge(e);
        match dir {
            Dir::Out => edge.target,
            Dir::In => edge.source,
        }
    }

    /// Whether `node` may sit at pattern position `pos`.
    fn place_ok(&self, ctx: &MatchCtx, st: &State, pos: usize, node: NodeId) -> bool {
        if let Some(f) = ctx.fixed[pos] {
            if f != node {
                return false;
            }
        }
        if let Some(existing) = st.nodes[pos] {
            if existing != node {
                return false;
            }
        }
        // Repeated variable inside the same pattern.
        if let Some(v) = &ctx.p.node(pos).var {
            for (i, n) in ctx.p.nodes().enumerate() {
                if i != pos && n.var.as_ref() == Some(v) {
                    if let Some(other) = st.nodes[i] {
                        if other != node {
                            return false;
                        }
                    }
                }
            }
        }
        self.node_matches(ctx.p.node(pos), &ctx.node_props[pos], node)
    }

    fn emit(&self, ctx: &MatchCtx, st: &State, out: &mut Vec<Row>) {
        let p = ctx.p;
        let mut row = ctx.row.clone();
        for var in &ctx.plan.new_vars {
            let value = if p.var.as_ref() == Some(var) {
                let mut nodes = Vec::new();
                let mut rels = Vec::new();
                for i in 0..p.len() {
                    nodes.push(st.nodes[i].expect("complete match"));
                    nodes.extend(st.seg_nodes[i].iter().copied());
                    rels.extend(st.seg_rels[i].iter().copied());
                }
                nodes.push(st.nodes[p.len()].expect("complete match"));
                Value::Path(PathValue { nodes, rels })
            } else if let Some(i) = p.nodes().position(|n| n.var.as_ref() == Some(var)) {
                Value::Node(st.nodes[i].expect("complete match"))
            } else if let Some(i) = p.steps.iter().position(|(r, _)| r.var.as_ref() == Some(var)) {
                if p.steps[i].0.length.is_some() {
                    Value::List(st.seg_rels[i].iter().map(|e| Value::Rel(*e)).collect())
                } else {
                    Value::Rel(st.seg_rels[i][0])
                }
            } else {
                Value::Null
            };
            row.push(value);
        }
        out.push(row);
    }

    // ---- WITH / RETURN -----------------------------------------------------

    fn project(
        &mut self,
        p: &Projection,
        scope: &[String],
        rows: Vec<Row>,
    ) -> EResult<(Vec<String>, Vec<Row>)> {
        let names: Vec<String> = p.items.iter().map(column_name).collect();
        let aggregating = p.items.iter().any(|i| i.expr.contains_aggregate());

        let (mut out, mut pre): (Vec<Row>, Vec<Option<Row>>) = if aggregating {
            (self.aggregate(p, scope, &rows)?, Vec::new())
        } else {
            let mut out = Vec::with_capacity(rows.len());
            for r in &rows {
                let env = Env::new(scope, r);
                let mut v = Vec::with_capacity(p.items.len());
                for item in &p.items {
                    v.push(self.eval(&item.expr, &env, &mut Vec::new())?);
                }
                out.push(v);
            }
            (out, rows.into_iter().map(Some).collect())
        };
        if pre.len() != out.len() {
            pre = vec![None; out.len()];
        }

        if p.distinct {
            let mut seen = std::collections::HashSet::new();
            let mut keep = Vec::with_capacity(out.len());
            for r in &out {
                keep.push(seen.insert(r.clone()));
            }
            let mut it = keep.iter();
            out.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            pre.retain(|_| *it.next().unwrap());
            // Pre-projection rows are not visible after DISTINCT.
            pre.iter_mut().for_each(|r| *r = None);
        }

        if !p.order_by.is_empty() {
            let mut keyed = Vec::with_capacity(out.len());
            for (r, pr) in out.into_iter().zip(pre) {
                let mut keys = Vec::with_capacity(p.order_by.len());
                for s in &p.order_by {
                    let key = if let Some(i) = p.items.iter().position(|it| it.expr == s.expr) {
                        r[i].clone()
                    } else {
                        let env = Env {
                            names: &names,
                            row: &r,
                            outer: pr.as_deref().map(|x| (scope, x)),
                            aggs: &[],
                        };
                        self.eval(&s.expr, &env, &mut Vec::new())?
                    };
                    keys.push(key);
                }
                keyed.push((keys, r));
            }
            keyed.sort_by(|(a, _), (b, _)| {
                for ((x, y), s) in a.iter().zip(b).zip(&p.order_by) {
                    let o = x.sort_cmp(y);
                    let o = if s.descending { o.reverse() } else { o };
                    if o != std::cmp::Ordering::Equal {
                        return o;
                    }
                }
                std::cmp::Ordering::Equal
            });
            out = keyed.into_iter().map(|(_, r)| r).collect();
        }

        let count = |e: &Option<Expr>, this: &mut Self| -> EResult<Option<usize>> {
            let Some(e) = e else { return Ok(None) };
            match this.eval(e, &Env::new(&[], &[]), &mut Vec::new())? {
                Value::Int(i) if i >= 0 => Ok(Some(i as usize)),
                other => Err(type_err(format!(
                    "SKIP/LIMIT must be a non-negative integer, got {}",
                    other.type_name()
                ))),
            }
        };
        let skip = count(&p.skip, self)?.unwrap_or(0);
        let limit = count(&p.limit, self)?;
        let mut out: Vec<Row> = out.into_iter().skip(skip).collect();
        if let Some(l) = limit {
            out.truncate(l);
        }

        if let Some(w) = &p.where_ {
            let mut kept = Vec::with_capacity(out.len());
            for r in out {
                let v = self.eval(w, &Env::new(&names, &r), &mut Vec::new())?;
                if truthy(&v)? {
                    kept.push(r);
                }
            }
            out = kept;
        }
        Ok((names, out))
    }

    fn aggregate(&mut self, p: &Projection, scope: &[String], rows: &[Row]) -> EResult<Vec<Row>> {
        let key_items: Vec<usize> = p
            .items
            .iter()
            .enumerate()
            .filter(|(_, i)| !i.expr.contains_aggregate())
            .map(|(i, _)| i)
            .collect();
        let mut groups: Vec<(Row, Vec<usize>)> = Vec::new();
        let mut index: HashMap<Row, usize> = HashMap::new();
        for (ri, r) in rows.iter().enumerate() {
            let env = Env::new(scope, r);
            let mut key = Vec::with_capacity(key_items.len());
            for &i in &key_items {
                key.push(self.eval(&p.items[i].expr, &env, &mut Vec::new())?);
            }
            match index.get(&key) {
                Some(&g) => groups[g].1.push(ri),
                None => {
                    index.insert(key.clone(), groups.len());
                    groups.push((key, vec![ri]));
                }
            }
        }
        if groups.is_empty() && key_items.is_empty() {
            groups.push((Vec::new(), Vec::new()));
        }

        let null_row: Row = vec![Value::Null; scope.len()];
        let mut out = Vec::with_capacity(groups.len());
        for (_, members) in &groups {
            let first: &[Value] = members.first().map(|&i| rows[i].as_slice()).unwrap_or(&null_row);
            let mut row = Vec::with_capacity(p.items.len());
            for item in &p.items {
                let mut sites = Vec::new();
                collect_aggregates(&item.expr, &mut sites);
                let mut aggs = Vec::with_capacity(sites.len());
                for site in sites {
                    let v = self.compute_aggregate(site, scope, rows, members)?;
                    aggs.push((site as *const Expr, v));
                }
                let env = Env {
                    names: scope,
                    row: first,
                    outer: None,
                    aggs: &aggs,
                };
                row.push(self.eval(&item.expr, &env, &mut Vec::new())?);
            }
            out.push(row);
        }
        Ok(out)
    }

    fn compute_aggregate(
        &mut self,
        site: &Expr,
        scope: &[String],
        rows: &[Row],
        members: &[usize],
    ) -> EResult<Value> {
        let (name, distinct, arg) = match site {
            Expr::CountStar => return Ok(Value::Int(members.len() as i64)),
            Expr::Call {
                name,
                distinct,
                args,
            } => (name.as_str(), *distinct, args.first()),
            _ => unreachable!("only aggregate sites are collected"),
        };
        let arg = arg.ok_or_else(|| type_err(format!("{name}() needs an argument")))?;
        let mut values = Vec::with_capacity(members.len());
        let mut seen = std::collections::HashSet::new();
        for &i in members {
            let v = self.eval(arg, &Env::new(scope, &rows[i]), &mut Vec::new())?;
            if v.is_null() {
                continue;
            }
            if distinct && !seen.insert(v.clone()) {
                continue;
            }
            values.push(v);
        }
        Ok(match name {
            "collect" => Value::List(values),
            "count" => Value::Int(values.len() as i64),
            "sum" => {
                let mut int_sum: i64 = 0;
                let mut float_sum = 0.0;
                let mut any_float = false;
                for v in &values {
                    match v {
                        Value::Int(i) => {
                            int_sum = int_sum
                                .checked_add(*i)
                                .ok_or_else(|| type_err("integer overflow in sum()"))?;
                        }
                        Value::Float(f) => {
                            any_float = true;
                            float_sum += f;
                        }
                        other => {
                            return Err(type_err(format!("sum() over {}", other.type_name())))
                        }
                    }
                }
                if any_float {
                    Value::Float(float_sum + int_sum as f64)
                } else {
                    Value::Int(int_sum)
                }
            }
            "avg" => {
                if values.is_empty() {
                    Value::Null
                } else {
                    let mut s = 0.0;
                    for v in &values {
                        s += v
                            .as_f64()
                            .ok_or_else(|| type_err(format!("avg() over {}", v.type_name())))?;
                    }
                    Value::Float(s / values.len() as f64)
                }
            }
            "min" | "max" => {
                let mut best: Option<Value> = None;
                for v in values {
                    best = Some(match best {
                        None => v,
                        Some(b) => {
                            let o = v.sort_cmp(&b);
                            let take = if name == "min" { o.is_lt() } else { o.is_gt() };
                            if take {
                                v
                            } else {
                                b
                            }
                        }
                    });
                }
                best.unwrap_or(Value::Null)
            }
            other => return Err(ExecError::UnknownFunction(other.to_string())),
        })
    }

    // ---- expressions -------------------------------------------------------

    fn lookup(&self, name: &str, env: &Env, locals: &[(String, Value)]) -> EResult<Value> {
        if let Some((_, v)) = locals.iter().rev().find(|(n, _)| n == name) {
            return Ok(v.clone());
        }
        if let Some(i) = env.names.iter().position(|n| n == name) {
            return Ok(env.row[i].clone());
        }
        if let Some((names, row)) = env.outer {
            if let Some(i) = names.iter().position(|n| n == name) {
                return Ok(row[i].clone());
            }
        }
        Err(ExecError::Unbound(name.to_string()))
    }

    fn eval(&self, e: &Expr, env: &Env, locals: &mut Vec<(String, Value)>) -> EResult<Value> {
        Ok(match e {
            Expr::Literal(l) => match l {
                Literal::Null => Value::Null,
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Integer(i) => Value::Int(*i),
                Literal::Float(f) => Value::Float(*f),
                Literal::String(s) => Value::String(s.clone()),
            },
            Expr::Var(v) => self.lookup(v, env, locals)?,
            Expr::Property(base, key) => {
                let b = self.eval(base, env, locals)?;
                self.property(&b, key)?
            }
            Expr::Index(base, idx) => {
                let b = self.eval(base, env, locals)?;
                let i = self.eval(idx, env, locals)?;
                match (b, i) {
                    (Value::Null, _) | (_, Value::Null) => Value::Null,
                    (Value::List(items), Value::Int(i)) => {
                        let n = items.len() as i64;
                        let j = if i < 0 { n + i } else { i };
                        if (0..n).contains(&j) {
                            items[j as usize].clone()
                        } else {
                            Value::Null
                        }
                    }
                    (Value::Map(m), Value::String(k)) => m.get(&k).cloned().unwrap_or(Value::Null),
                    (b @ (Value::Node(_) | Value::Rel(_)), Value::String(k)) => {
                        self.property(&b, &k)?
                    }
                    (b, i) => {
                        return Err(type_err(format!(
                            "cannot index {} with {}",
                            b.type_name(),
                            i.type_name()
                        )))
                    }
                }
            }
            Expr::CountStar => self.agg_value(e, env)?,
            Expr::Call { name, args, .. } => {
                if is_aggregate(name) {
                    return self.agg_value(e, env);
                }
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, env, locals)?);
                }
                self.call(name, vals)?
            }
            Expr::List(items) => {
                let mut v = Vec::with_capacity(items.len());
                for i in items {
                    v.push(self.eval(i, env, locals)?);
                }
                Value::List(v)
            }
            Expr::Map(entries) => {
                let mut m = BTreeMap::new();
                for (k, x) in entries {
                    m.insert(k.clone(), self.eval(x, env, locals)?);
                }
                Value::Map(m)
            }
            Expr::ListComprehension {
                var,
                list,
                filter,
                map,
            } => {
                let items = match self.eval(list, env, locals)? {
                    Value::Null => return Ok(Value::Null),
                    Value::List(items) => items,
                    other => {
                        return Err(type_err(format!(
                            "list comprehension over {}",
                            other.type_name()
                        )))
                    }
                };
                let mut out = Vec::new();
                for item in items {
                    locals.push((var.clone(), item));
                    let keep = match filter {
                        Some(f) => {
                            let v = self.eval(f, env, locals);
                            match v {
                                Ok(v) => truthy(&v),
                                Err(e) => Err(e),
                            }
                        }
                        None => Ok(true),
                    };
                    let res = match keep {
                        Ok(true) => match map {
                            Some(m) => self.eval(m, env, locals).map(Some),
                            None => Ok(Some(locals.last().expect("pushed").1.clone())),
                        },
                        Ok(false) => Ok(None),
                        Err(e) => Err(e),
                    };
                    locals.pop();
                    if let Some(v) = res? {
                        out.push(v);
                    }
                }
                Value::List(out)
            }
            Expr::Quantified {
                kind,
                var,
                list,
                pred,
            } => {
                let items = match self.eval(list, env, locals)? {
                    Value::Null => return Ok(Value::Null),
                    Value::List(items) => items,
                    other => {
                        return Err(type_err(format!(
                            "{}() over {}",
                            kind.name(),
                            other.type_name()
                        )))
                    }
                };
                let (mut trues, mut falses, mut nulls) = (0usize, 0usize, 0usize);
                for item in items {
                    locals.push((var.clone(), item));
                    let v = self.eval(pred, env, locals);
                    locals.pop();
                    match v? {
                        Value::Bool(true) => trues += 1,
                        Value::Bool(false) => falses += 1,
                        Value::Null => nulls += 1,
                        other => {
                            return Err(type_err(format!(
                                "{}() predicate returned {}",
                                kind.name(),
                                other.type_name()
                            )))
                        }
                    }
                    // Early exits that cannot change the answer.
                    match kind {
                        Quantifier::All if falses > 0 => return Ok(Value::Bool(false)),
                        Quantifier::Any if trues > 0 => return Ok(Value::Bool(true)),
                        Quantifier::None if trues > 0 => return Ok(Value::Bool(false)),
                        Quantifier::Single if trues > 1 => return Ok(Value::Bool(false)),
                        _ => {}
                    }
                }
                match kind {
                    Quantifier::All | Quantifier::None => {
                        if nulls > 0 {
                            Value::Null
                        } else {
                            Value::Bool(true)
                        }
                    }
                    Quantifier::Any => {
                        if nulls > 0 {
                            Value::Null
                        } else {
                            Value::Bool(false)
                        }
                    }
                    Quantifier::Single => {
                        if nulls > 0 {
                            Value::Null
                        } else {
                            Value::Bool(trues == 1)
                        }
                    }
                }
            }
            Expr::Unary(op, inner) => {
                let v = self.eval(inner, env, locals)?;
                match (op, v) {
                    (_, Value::Null) => Value::Null,
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (UnaryOp::Neg, Value::Int(i)) => Value::Int(
                        i.checked_neg()
                            .ok_or_else(|| type_err("integer overflow"))?,
                    ),
                    (UnaryOp::Neg, Value::Float(f)) => Value::Float(-f),
                    (op, v) => {
                        return Err(type_err(format!(
                            "cannot apply {op:?} to {}",
                            v.type_name()
                        )))
                    }
                }
            }
            Expr::Binary(op, a, b) => self.binary(*op, a, b, env, locals)?,
            Expr::IsNull { expr, negated } => {
                let v = self.eval(expr, env, locals)?;
                Value::Bool(v.is_null() != *negated)
            }
        })
    }

    fn agg_value(&self, e: &Expr, env: &Env) -> EResult<Value> {
        env.aggs
            .iter()
            .find(|(p, _)| std::ptr::eq(*p, e))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| {
                ExecError::NotExecutable(format!(
                    "aggregate `{}` used outside WITH/RETURN items",
                    render_expr(e)
                ))
            })
    }

    fn property(&self, base: &Value, key: &str) -> EResult<Value> {
        Ok(match base {
            Value::Null => Value::Null,
            Value::Node(id) => {
                let n = self.g.node(*id);
                if key == n.label.key_property() {
                    Value::String(n.key.clone())
                } else {
                    Value::Null
                }
            }
            Value::Rel(id) => match (key, self.g.edge(*id).yield_pct) {
                ("yield", Some(y)) => Value::Float(y),
                _ => Value::Null,
            },
            Value::Map(m) => m.get(key).cloned().unwrap_or(Value::Null),
            other => {
                return Err(type_err(format!(
                    "cannot read property `{key}` of a {}",
                    other.type_name()
                )))
            }
        })
    }

    fn binary(
        &self,
        op: BinaryOp,
        a: &Expr,
        b: &Expr,
        env: &Env,
        locals: &mut Vec<(String, Value)>,
    ) -> EResult<Value> {
        let bool_of = |v: &Value| -> EResult<Option<bool>> {
            match v {
                Value::Bool(b) => Ok(Some(*b)),
                Value::Null => Ok(None),
                other => Err(type_err(format!(
                    "expected boolean, got {}",
                    other.type_name()
                ))),
            }
        };
        match op {
            BinaryOp::And | BinaryOp::Or | BinaryOp::Xor => {
                let x = bool_of(&self.eval(a, env, locals)?)?;
                if op == BinaryOp::And && x == Some(false) {
                    return Ok(Value::Bool(false));
                }
                if op == BinaryOp::Or && x == Some(true) {
                    return Ok(Value::Bool(true));
                }
                let y = bool_of(&self.eval(b, env, locals)?)?;
                let r = match op {
                    BinaryOp::And => match (x, y) {
                        (_, Some(false)) => Some(false),
                        (Some(true), Some(true)) => Some(true),
                        _ => None,
                    },
                    BinaryOp::Or => match (x, y) {
                        (_, Some(true)) => Some(true),
                        (Some(false), Some(false)) => Some(false),
                        _ => None,
                    },
                    _ => match (x, y) {
                        (Some(p), Some(q)) => Some(p != q),
                        _ => None,
                    },
                };
                return Ok(r.map_or(Value::Null, Value::Bool));
            }
            _ => {}
        }
        let x = self.eval(a, env, locals)?;
        let y = self.eval(b, env, locals)?;
        let opt_bool = |o: Option<bool>| o.map_or(Value::Null, Value::Bool);
        Ok(match op {
            BinaryOp::Eq => opt_bool(x.cypher_eq(&y)),
            BinaryOp::Ne => opt_bool(x.cypher_eq(&y).map(|b| !b)),
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                match x.cypher_cmp(&y) {
                    None => Value::Null,
                    Some(o) => Value::Bool(match op {
                        BinaryOp::Lt => o.is_lt(),
                        BinaryOp::Le => o.is_le(),
                        BinaryOp::Gt => o.is_gt(),
                        _ => o.is_ge(),
                    }),
                }
            }
            BinaryOp::In => match y {
                Value::Null => Value::Null,
                Value::List(items) => {
                    let mut unknown = false;
                    for it in &items {
                        match x.cypher_eq(it) {
                            Some(true) => return Ok(Value::Bool(true)),
                            None => unknown = true,
                            Some(false) => {}
                        }
                    }
                    if unknown {
                        Value::Null
                    } else {
                        Value::Bool(false)
                    }
                }
                other => {
                    return Err(type_err(format!(
                        "IN expects a list, got {}",
                        other.type_name()
                    )))
                }
            },
            BinaryOp::StartsWith | BinaryOp::EndsWith | BinaryOp::Contains => match (&x, &y) {
                (Value::String(s), Value::String(t)) => Value::Bool(match op {
                    BinaryOp::StartsWith => s.starts_with(t.as_str()),
                    BinaryOp::EndsWith => s.ends_with(t.as_str()),
                    _ => s.contains(t.as_str()),
                }),
                _ => Value::Null,
            },
            BinaryOp::Add => match (x, y) {
                (Value::Null, _) | (_, Value::Null) => Value::Null,
                (Value::List(mut a), Value::List(b)) => {
                    a.extend(b);
                    Value::List(a)
                }
                (Value::List(mut a), b) => {
                    a.push(b);
                    Value::List(a)
                }
                (a, Value::List(mut b)) => {
                    b.insert(0, a);
                    Value::List(b)
                }
                (Value::String(a), Value::String(b)) => Value::String(a + &b),
                (Value::String(a), b @ (Value::Int(_) | Value::Float(_))) => {
                    Value::String(a + &scalar_text(&b))
                }
                (a @ (Value::Int(_) | Value::Float(_)), Value::String(b)) => {
                    Value::String(scalar_text(&a) + &b)
                }
                (a, b) => arith(op, a, b)?,
            },
            _ => match (x, y) {
                (Value::Null, _) | (_, Value::Null) => Value::Null,
                (a, b) => arith(op, a, b)?,
            },
        })
    }

    fn call(&self, name: &str, args: Vec<Value>) -> EResult<Value> {
        let arg0 = args.first().cloned().unwrap_or(Value::Null);
        let bad = |v: &Value| type_err(format!("{name}() does not accept {}", v.type_name()));
        if name != "coalesce" && name != "exists" && arg0.is_null() {
            return Ok(Value::Null);
        }
        Ok(match name {
            "size" => match &arg0 {
                Value::List(l) => Value::Int(l.len() as i64),
                Value::String(s) => Value::Int(s.chars().count() as i64),
                v => return Err(bad(v)),
            },
            "length" => match &arg0 {
                Value::Path(p) => Value::Int(p.rels.len() as i64),
                Value::List(l) => Value::Int(l.len() as i64),
                Value::String(s) => Value::Int(s.chars().count() as i64),
                v => return Err(bad(v)),
            },
            "relationships" | "rels" => match &arg0 {
                Value::Path(p) => Value::List(p.rels.iter().map(|e| Value::Rel(*e)).collect()),
                v => return Err(bad(v)),
            },
            "nodes" => match &arg0 {
                Value::Path(p) => Value::List(p.nodes.iter().map(|n| Value::Node(*n)).collect()),
                v => return Err(bad(v)),
            },
            "labels" => match &arg0 {
                Value::Node(n) => Value::List(vec![Value::String(
                    self.g.node(*n).label.as_str().to_string(),
                )]),
                v => return Err(bad(v)),
            },
            "type" => match &arg0 {
                Value::Rel(e) => Value::String(self.g.edge(*e).kind.as_str().to_string()),
                v => return Err(bad(v)),
            },
            "range" => {
                let int = |v: &Value| match v {
                    Value::Int(i) => Ok(*i),
                    v => Err(bad(v)),
                };
                let start = int(&arg0)?;
                let end = int(args.get(1).unwrap_or(&Value::Null))?;
                let step = match args.get(2) {
                    Some(v) => int(v)?,
                    None => 1,
                };
                if step == 0 {
                    return Err(type_err("range() step must not be zero"));
                }
                let span = if step > 0 {
                    (end - start) / step
                } else {
                    (start - end) / -step
                };
                if span > 1_000_000 {
                    return Err(ExecError::TooLarge(1_000_000));
                }
                let mut out = Vec::new();
                let mut i = start;
                while (step > 0 && i <= end) || (step < 0 && i >= end) {
                    out.push(Value::Int(i));
                    i += step;
                }
                Value::List(out)
            }
            "head" | "last" => match arg0 {
                Value::List(l) => {
                    let v = if name == "head" { l.first() } else { l.last() };
                    v.cloned().unwrap_or(Value::Null)
                }
                v => return Err(bad(&v)),
            },
            "tail" => match arg0 {
                Value::List(l) => Value::List(l.into_iter().skip(1).collect()),
                v => return Err(bad(&v)),
            },
            "reverse" => match arg0 {
                Value::List(mut l) => {
                    l.reverse();
                    Value::List(l)
                }
                Value::String(s) => Value::String(s.chars().rev().collect()),
                v => return Err(bad(&v)),
            },
            "coalesce" => args
                .into_iter()
                .find(|v| !v.is_null())
                .unwrap_or(Value::Null),
            "exists" => Value::Bool(!arg0.is_null()),
            "tolower" | "toupper" => match arg0 {
                Value::String(s) => Value::String(if name == "tolower" {
                    s.to_lowercase()
                } else {
                    s.to_uppercase()
                }),
                v => return Err(bad(&v)),
            },
            "tostring" => match &arg0 {
                Value::String(_) => arg0,
                Value::Int(_) | Value::Float(_) | Value::Bool(_) => {
                    Value::String(scalar_text(&arg0))
                }
                v => return Err(bad(v)),
            },
            "tointeger" => match &arg0 {
                Value::Int(_) => arg0,
                Value::Float(f) => Value::Int(f.trunc() as i64),
                Value::String(s) => s
                    .trim()
                    .parse::<i64>()
                    .map(Value::Int)
                    .or_else(|_| s.trim().parse::<f64>().map(|f| Value::Int(f.trunc() as i64)))
                    .unwrap_or(Value::Null),
                v => return Err(bad(v)),
            },
            "tofloat" => match &arg0 {
                Value::Float(_) => arg0,
                Value::Int(i) => Value::Float(*i as f64),
                Value::String(s) => s
                    .trim()
                    .parse::<f64>()
                    .map(Value::Float)
                    .unwrap_or(Value::Null),
                v => return Err(bad(v)),
            },
            "id" => match &arg0 {
                Value::Node(n) => Value::Int(n.0 as i64),
                Value::Rel(e) => Value::Int(e.0 as i64),
                v => return Err(bad(v)),
            },
            "startnode" | "endnode" => match &arg0 {
                Value::Rel(e) => {
                    let edge = self.g.edge(*e);
                    Value::Node(if name == "startnode" {
                        edge.source
                    } else {
                        edge.target
                    })
                }
                v => return Err(bad(v)),
            },
            "properties" | "keys" => {
                let props: BTreeMap<String, Value> = match &arg0 {
                    Value::Node(n) => {
                        let node = self.g.node(*n);
                        [(
                            node.label.key_property().to_string(),
                            Value::String(node.key.clone()),
                        )]
                        .into_iter()
                        .collect()
                    }
                    Value::Rel(e) => self
                        .g
                        .edge(*e)
                        .yield_pct
                        .map(|y| ("yield".to_string(), Value::Float(y)))
                        .into_iter()
                        .collect(),
                    Value::Map(m) => m.clone(),
                    v => return Err(bad(v)),
                };
                if name == "keys" {
                    Value::List(props.into_keys().map(Value::String).collect())
                } else {
                    Value::Map(props)
                }
            }
            other => return Err(ExecError::UnknownFunction(other.to_string())),
        })
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => {
            let s = format!("{f}");
            if s.contains('.') || s.contains('e') || !f.is_finite() {
                s
            } else {
                format!("{s}.0")
            }
        }
        Value::Bool(b) => b.to_string(),
        Value::String(s) => s.clone(),
        _ => String::new(),
    }
}

fn arith(op: BinaryOp, a: Value, b: Value) -> EResult<Value> {
    match (&a, &b) {
        (Value::Int(x), Value::Int(y)) => {
            let (x, y) = (*x, *y);
            let r = match op {
                BinaryOp::Add => x.checked_add(y),
                BinaryOp::Sub => x.checked_sub(y),
                BinaryOp::Mul => x.checked_mul(y),
                BinaryOp::Div => {
                    if y == 0 {
                        return Err(type_err("division by zero"));
                    }
                    x.checked_div(y)
                }
                BinaryOp::Mod => {
                    if y == 0 {
                        return Err(type_err("modulo by zero"));
                    }
                    x.checked_rem(y)
                }
                _ => unreachable!("arithmetic operator"),
            };
            r.map(Value::Int)
                .ok_or_else(|| type_err("integer overflow"))
        }
        _ => {
            let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
                return Err(type_err(format!(
                    "cannot apply {} to {} and {}",
                    op.symbol(),
                    a.type_name(),
                    b.type_name()
                )));
            };
            Ok(Value::Float(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
                BinaryOp::Mod => x % y,
                _ => unreachable!("arithmetic operator"),
            }))
        }
    }
}

fn truthy(v: &Value) -> EResult<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Null => Ok(false),
        other => Err(type_err(format!(
            "WHERE expects a boolean, got {}",
            other.type_name()
        ))),
    }
}

/// Outermost aggregate sub-expressions (not descending into their arguments).
fn collect_aggregates<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::CountStar => out.push(e),
        Expr::Call { name, args, .. } => {
            if is_aggregate(name) {
                out.push(e);
            } else {
                for a in args {
                    collect_aggregates(a, out);
                }
            }
        }
        Expr::Literal(_) | Expr::Var(_) => {}
        Expr::Property(b, _) => collect_aggregates(b, out),
        Expr::Index(a, b) | Expr::Binary(_, a, b) => {
            collect_aggregates(a, out);
            collect_aggregates(b, out);
        }
        Expr::List(items) => items.iter().for_each(|i| collect_aggregates(i, out)),
        Expr::Map(entries) => entries.iter().for_each(|(_, v)| collect_aggregates(v, out)),
        Expr::ListComprehension {
            list, filter, map, ..
        } => {
            collect_aggregates(list, out);
            if let Some(f) = filter {
                collect_aggregates(f, out);
            }
            if let Some(m) = map {
                collect_aggregates(m, out);
            }
        }
        Expr::Quantified { list, pred, .. } => {
            collect_aggregates(list, out);
            collect_aggregates(pred, out);
        }
        Expr::Unary(_, a) => collect_aggregates(a, out),
        Expr::IsNull { expr, .. } => collect_aggregates(expr, out),
    }
}

/// Per-pattern matching plan: the anchor position, the visiting order of
/// steps and the variables the pattern introduces.
struct PatternPlan {
    anchor: usize,
    /// `(step index, forward)` in visiting order.
    order: Vec<(usize, bool)>,
    new_vars: Vec<String>,
}

impl PatternPlan {
    fn new(p: &PathPattern, scope: &[String]) -> Self {
        let bound = |n: &NodePattern| n.var.as_ref().is_some_and(|v| scope.contains(v));
        let keyed = |n: &NodePattern| n.props.iter().any(|(k, _)| k == "name" || k == "id");
        let anchor = p
            .nodes()
            .position(bound)
            .or_else(|| p.nodes().position(keyed))
            .or_else(|| p.nodes().position(|n| !n.labels.is_empty()))
            .unwrap_or(0);
        let mut order: Vec<(usize, bool)> = (anchor..p.len()).map(|s| (s, true)).collect();
        order.extend((0..anchor).rev().map(|s| (s, false)));

        let mut new_vars: Vec<String> = Vec::new();
        let mut add = |v: &Option<String>| {
            if let Some(v) = v {
                if !scope.contains(v) && !new_vars.contains(v) {
                    new_vars.push(v.clone());
                }
            }
        };
        for n in p.nodes() {
            add(&n.var);
        }
        for (r, _) in &p.steps {
            add(&r.var);
        }
        add(&p.var);
        PatternPlan {
            anchor,
            order,
            new_vars,
        }
    }
}

struct MatchCtx<'a> {
    p: &'a PathPattern,
    plan: &'a PatternPlan,
    fixed: &'a [Option<NodeId>],
    fixed_rels: &'a [Option<Value>],
    node_props: &'a [Vec<(String, Value)>],
    rel_props: &'a [Vec<(String, Value)>],
    row: &'a Row,
}

struct State {
    nodes: Vec<Option<NodeId>>,
    /// Inner nodes of each variable-length step, in pattern order.
    seg_nodes: Vec<Vec<NodeId>>,
    seg_rels: Vec<Vec<EdgeId>>,
    used: Vec<EdgeId>,
}

struct Walk<'k> {
    step: usize,
    k: usize,
    forward: bool,
    to_pos: usize,
    min: u32,
    max: u32,
    kinds: &'k [RelKind],
    dirs: &'k [Dir],
    edges: Vec<EdgeId>,
    inner: Vec<NodeId>,
}
