//! Canonical text rendering of a [`Query`]. Output reparses to an equal tree.

use std::fmt::Write;

use super::ast::*;
use super::parser::is_reserved;

pub fn render(q: &Query) -> String {
    let mut out = String::new();
    for (i, c) in q.clauses.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match c {
            Clause::Match(m) => {
                out.push_str(if m.optional { "OPTIONAL MATCH " } else { "MATCH " });
                for (j, p) in m.patterns.iter().enumerate() {
                    if j > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&render_pattern(p));
                }
                if let Some(w) = &m.where_ {
                    out.push_str(" WHERE ");
                    out.push_str(&render_expr(w));
                }
            }
            Clause::With(p) => {
                out.push_str("WITH ");
                render_projection(p, &mut out);
            }
            Clause::Return(p) => {
                out.push_str("RETURN ");
                render_projection(p, &mut out);
            }
        }
    }
    out
}

fn render_projection(p: &Projection, out: &mut String) {
    if p.distinct {
        out.push_str("DISTINCT ");
    }
    for (i, item) in p.items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&render_expr(&item.expr));
        if let Some(a) = &item.alias {
            out.push_str(" AS ");
            out.push_str(&ident(a));
        }
    }
    if !p.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        for (i, s) in p.order_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&render_expr(&s.expr));
            if s.descending {
                out.push_str(" DESC");
            }
        }
    }
    if let Some(s) = &p.skip {
        out.push_str(" SKIP ");
        out.push_str(&render_expr(s));
    }
    if let Some(l) = &p.limit {
        out.push_str(" LIMIT ");
        out.push_str(&render_expr(l));
    }
    if let Some(w) = &p.where_ {
        out.push_str(" WHERE ");
        out.push_str(&render_expr(w));
    }
}

pub fn render_pattern(p: &PathPattern) -> String {
    let mut out = String::new();
    if let Some(v) = &p.var {
        out.push_str(&ident(v));
        out.push_str(" = ");
    }
    out.push_str(&render_node(&p.start));
    for (rel, node) in &p.steps {
        out.push_str(&render_rel(rel));
        out.push_str(&render_node(node));
    }
    out
}

pub fn render_node(n: &NodePattern) -> String {
    let mut out = String::from("(");
    if let Some(v) = &n.var {
        out.push_str(&ident(v));
    }
    for l in &n.labels {
        out.push(':');
        out.push_str(&ident(l));
    }
    if !n.props.is_empty() {
        if n.var.is_some() || !n.labels.is_empty() {
            out.push(' ');
        }
        out.push_str(&render_map(&n.props));
    }
    out.push(')');
    out
}

/// Bracket content of a relationship atom, e.g. `[r:PRODUCES*..4]`.
pub fn render_rel_detail(r: &RelPattern) -> String {
    let mut out = String::from("[");
    if let Some(v) = &r.var {
        out.push_str(&ident(v));
    }
    for (i, k) in r.kinds.iter().enumerate() {
        out.push(if i == 0 { ':' } else { '|' });
        out.push_str(k.as_str());
    }
    if let Some(len) = &r.length {
        out.push('*');
        match (len.min, len.max) {
            (Some(a), Some(b)) if a == b => {
                let _ = write!(out, "{a}");
            }
            (Some(a), Some(b)) => {
                let _ = write!(out, "{a}..{b}");
            }
            (Some(a), None) => {
                let _ = write!(out, "{a}..");
            }
            (None, Some(b)) => {
                let _ = write!(out, "..{b}");
            }
            (None, None) => {}
        }
    }
    if !r.props.is_empty() {
        out.push(' ');
        out.push_str(&render_map(&r.props));
    }
    out.push(']');
    out
}

pub fn render_rel(r: &RelPattern) -> String {
    let bare = r.var.is_none() && r.kinds.is_empty() && r.length.is_none() && r.props.is_empty();
    let detail = if bare {
        String::new()
    } else {
        render_rel_detail(r)
    };
    match r.direction {
        Direction::Right => format!("-{detail}->"),
        Direction::Left => format!("<-{detail}-"),
        Direction::Undirected => format!("-{detail}-"),
    }
}

fn render_map(entries: &[(String, Expr)]) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in entries.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&ident(k));
        out.push_str(": ");
        out.push_str(&render_expr(v));
    }
    out.push('}');
    out
}

/// Identifier, backtick-quoted when needed.
pub fn ident(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_alphanumeric() || c == '_');
    if plain && !is_reserved(s) {
        s.to_string()
    } else {
        format!("`{s}`")
    }
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::IsNull { .. } => 5,
        Expr::Unary(UnaryOp::Not, _) => 4,
        Expr::Unary(UnaryOp::Neg, _) => 8,
        Expr::Literal(Literal::Integer(i)) if *i < 0 => 8,
        Expr::Literal(Literal::Float(f)) if *f < 0.0 => 8,
        _ => 9,
    }
}

fn wrapped(e: &Expr, wrap: bool) -> String {
    if wrap {
        format!("({})", render_expr(e))
    } else {
        render_expr(e)
    }
}

fn function_name(lower: &str) -> &str {
    match lower {
        "tolower" => "toLower",
        "toupper" => "toUpper",
        "tostring" => "toString",
        "tointeger" => "toInteger",
        "tofloat" => "toFloat",
        "startnode" => "startNode",
        "endnode" => "endNode",
        other => other,
    }
}

fn render_float(f: f64) -> String {
    let s = format!("{f:?}");
    if s.contains('e') || s.contains("inf") || s.contains("NaN") {
        format!("{f:.6}")
    } else {
        s
    }
}

pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Literal(l) => match l {
            Literal::Null => "null".into(),
            Literal::Bool(b) => b.to_string(),
            Literal::Integer(i) => i.to_string(),
            Literal::Float(f) => render_float(*f),
            Literal::String(s) => quote(s),
        },
        Expr::Var(v) => ident(v),
        Expr::Property(base, key) => format!("{}.{}", wrapped(base, prec(base) < 9), ident(key)),
        Expr::Index(base, idx) => {
            format!("{}[{}]", wrapped(base, prec(base) < 9), render_expr(idx))
        }
        Expr::Call {
            name,
            distinct,
            args,
        } => {
            let args: Vec<String> = args.iter().map(render_expr).collect();
            format!(
                "{}({}{})",
                function_name(name),
                if *distinct { "DISTINCT " } else { "" },
                args.join(", ")
            )
        }
        Expr::CountStar => "count(*)".into(),
        Expr::List(items) => {
            let items: Vec<String> = items.iter().map(render_expr).collect();
            format!("[{}]", items.join(", "))
        }
        Expr::Map(entries) => render_map(entries),
        Expr::ListComprehension {
            var,
            list,
            filter,
            map,
        } => {
            let mut out = format!("[{} IN {}", ident(var), render_expr(list));
            if let Some(f) = filter {
                out.push_str(" WHERE ");
                out.push_str(&render_expr(f));
            }
            if let Some(m) = map {
                out.push_str(" | ");
                out.push_str(&render_expr(m));
            }
            out.push(']');
            out
        }
        Expr::Quantified {
            kind,
            var,
            list,
            pred,
        } => format!(
            "{}({} IN {} WHERE {})",
            kind.name(),
            ident(var),
            render_expr(list),
            render_expr(pred)
        ),
        Expr::Unary(UnaryOp::Not, inner) => format!("NOT {}", wrapped(inner, prec(inner) < 4)),
        Expr::Unary(UnaryOp::Neg, inner) => format!("-{}", wrapped(inner, prec(inner) < 9)),
        Expr::Binary(op, a, b) => {
            let p = op.precedence();
            format!(
                "{} {} {}",
                wrapped(a, prec(a) < p),
                op.symbol(),
                wrapped(b, prec(b) <= p)
            )
        }
        Expr::IsNull { expr, negated } => format!(
            "{} IS {}NULL",
            wrapped(expr, prec(expr) < 5),
            if *negated { "NOT " } else { "" }
        ),
    }
}
