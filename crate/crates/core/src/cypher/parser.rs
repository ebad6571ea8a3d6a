//! Recursive-descent parser for the Cypher subset.
//!
//! Anything outside the subset is rejected with
//! [`ParseErrorCode::UnsupportedConstruct`] so that callers can tell an
//! out-of-scope query apart from a malformed one.

use super::ast::*;
use super::error::{ParseError, ParseErrorCode};
use super::lexer::{tokenize, Tok, Token};

/// Byte spans of one relationship atom in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelSpan {
    /// From the first arrow character to the last one, inclusive range as `start..end`.
    pub start: usize,
    pub end: usize,
    /// `[...]` including the brackets, when present.
    pub detail: Option<(usize, usize)>,
}

/// Source positions kept alongside a parsed query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceMap {
    /// `(line, column)` of each clause keyword, indexed like `Query::clauses`.
    pub clauses: Vec<(usize, usize)>,
    /// One entry per relationship atom, in `Query::patterns()` then step order.
    pub rels: Vec<RelSpan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub query: Query,
    pub source_map: SourceMap,
}

const UNSUPPORTED_CLAUSES: &[&str] = &[
    "CREATE", "MERGE", "DELETE", "DETACH", "SET", "REMOVE", "UNWIND", "CALL", "UNION", "FOREACH",
    "LOAD", "USE", "EXPLAIN", "PROFILE", "DROP", "SHOW",
];

const RESERVED: &[&str] = &[
    "MATCH", "OPTIONAL", "WHERE", "WITH", "RETURN", "ORDER", "BY", "SKIP", "LIMIT", "AS", "AND",
    "OR", "XOR", "NOT", "IN", "IS", "NULL", "TRUE", "FALSE", "DISTINCT", "ASC", "DESC",
    "ASCENDING", "DESCENDING", "STARTS", "ENDS", "CONTAINS", "CASE",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| word.eq_ignore_ascii_case(k))
}

/// Parse query text into a [`Query`].
pub fn parse(text: &str) -> Result<Query, ParseError> {
    parse_with_source_map(text).map(|p| p.query)
}

pub fn parse_with_source_map(text: &str) -> Result<Parsed, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        map: SourceMap::default(),
    };
    let query = p.query()?;
    Ok(Parsed {
        query,
        source_map: p.map,
    })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    map: SourceMap,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn cur(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.toks[self.pos - 1].end
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, code: ParseErrorCode, msg: impl Into<String>) -> ParseError {
        let t = self.cur();
        ParseError::new(code, msg.into(), t.line, t.column)
    }

    fn syntax(&self, expected: &str) -> ParseError {
        self.err(
            ParseErrorCode::Syntax,
            format!("expected {expected}, found {}", self.peek().describe()),
        )
    }

    fn unsupported(&self, what: &str) -> ParseError {
        self.err(
            ParseErrorCode::UnsupportedConstruct,
            format!("unsupported construct: {what}"),
        )
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> PResult<()> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.syntax(what))
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek().is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.syntax(kw))
        }
    }

    /// Identifier usable as a variable, alias, label or property key.
    fn name(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            Tok::QuotedIdent(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.syntax(what)),
        }
    }

    fn variable(&mut self) -> PResult<String> {
        if let Tok::Ident(s) = self.peek() {
            if is_reserved(s) {
                return Err(self.syntax("a variable name"));
            }
        }
        self.name("a variable name")
    }

    fn at_variable(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => !is_reserved(s),
            Tok::QuotedIdent(_) => true,
            _ => false,
        }
    }

    fn query(&mut self) -> PResult<Query> {
        let mut clauses = Vec::new();
        loop {
            if matches!(self.peek(), Tok::Eof) {
                break;
            }
            if self.eat(&Tok::Semicolon) {
                if !matches!(self.peek(), Tok::Eof) {
                    return Err(self.unsupported("multiple statements"));
                }
                break;
            }
            let pos = (self.cur().line, self.cur().column);
            let clause = self.clause()?;
            self.map.clauses.push(pos);
            clauses.push(clause);
        }
        if clauses.is_empty() {
            return Err(self.err(ParseErrorCode::Syntax, "empty query"));
        }
        Ok(Query { clauses })
    }

    fn clause(&mut self) -> PResult<Clause> {
        if self.peek().is_kw("OPTIONAL") {
            self.bump();
            self.expect_kw("MATCH")?;
            return self.match_clause(true);
        }
        if self.eat_kw("MATCH") {
            return self.match_clause(false);
        }
        if self.eat_kw("WITH") {
            let proj = self.projection(true)?;
            return Ok(Clause::With(proj));
        }
        if self.eat_kw("RETURN") {
            let proj = self.projection(false)?;
            return Ok(Clause::Return(proj));
        }
        if let Tok::Ident(s) = self.peek() {
            let upper = s.to_ascii_uppercase();
            if UNSUPPORTED_CLAUSES.contains(&upper.as_str()) {
                return Err(self.unsupported(&format!("{upper} clause")));
            }
        }
        Err(self.syntax("MATCH, OPTIONAL MATCH, WITH or RETURN"))
    }

    fn match_clause(&mut self, optional: bool) -> PResult<Clause> {
        let mut patterns = vec![self.path_pattern()?];
        while self.eat(&Tok::Comma) {
            patterns.push(self.path_pattern()?);
        }
        let where_ = if self.eat_kw("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Clause::Match(MatchClause {
            optional,
            patterns,
            where_,
        }))
    }

    fn projection(&mut self, is_with: bool) -> PResult<Projection> {
        let distinct = self.eat_kw("DISTINCT");
        if matches!(self.peek(), Tok::Star) {
            return Err(self.unsupported("projection of `*`"));
        }
        let mut items = vec![self.projection_item()?];
        while self.eat(&Tok::Comma) {
            items.push(self.projection_item()?);
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_kw("DESC") || self.eat_kw("DESCENDING") {
                    true
                } else {
                    let _ = self.eat_kw("ASC") || self.eat_kw("ASCENDING");
                    false
                };
                order_by.push(SortItem { expr, descending });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let skip = if self.eat_kw("SKIP") {
            Some(self.expr()?)
        } else {
            None
        };
        let limit = if self.eat_kw("LIMIT") {
            Some(self.expr()?)
        } else {
            None
        };
        let where_ = if is_with && self.eat_kw("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Projection {
            distinct,
            items,
            order_by,
            skip,
            limit,
            where_,
        })
    }

    fn projection_item(&mut self) -> PResult<ProjectionItem> {
        let expr = self.expr()?;
        let alias = if self.eat_kw("AS") {
            Some(self.variable()?)
        } else {
            None
        };
        Ok(ProjectionItem { expr, alias })
    }

    fn path_pattern(&mut self) -> PResult<PathPattern> {
        let var = if self.at_variable() && matches!(self.peek_at(1), Tok::Eq) {
            let v = self.variable()?;
            self.bump();
            Some(v)
        } else {
            None
        };
        if let Tok::Ident(s) = self.peek() {
            let lower = s.to_ascii_lowercase();
            if lower == "shortestpath" || lower == "allshortestpaths" {
                return Err(self.unsupported(&format!("{s}()")));
            }
        }
        let start = self.node_pattern()?;
        let mut steps = Vec::new();
        while matches!(self.peek(), Tok::Minus | Tok::Lt) {
            let rel = self.rel_pattern()?;
            let node = self.node_pattern()?;
            steps.push((rel, node));
        }
        Ok(PathPattern { var, start, steps })
    }

    fn node_pattern(&mut self) -> PResult<NodePattern> {
        self.expect(&Tok::LParen, "`(` to start a node pattern")?;
        let var = if self.at_variable() {
            Some(self.variable()?)
        } else {
            None
        };
        let mut labels = Vec::new();
        while self.eat(&Tok::Colon) {
            labels.push(self.name("a label")?);
            if matches!(self.peek(), Tok::Pipe) {
                return Err(self.unsupported("label alternation"));
            }
        }
        let props = if matches!(self.peek(), Tok::LBrace) {
            self.map_entries()?
        } else {
            Vec::new()
        };
        if self.peek().is_kw("WHERE") {
            return Err(self.unsupported("inline WHERE in node pattern"));
        }
        self.expect(&Tok::RParen, "`)` to close the node pattern")?;
        Ok(NodePattern { var, labels, props })
    }

    fn rel_pattern(&mut self) -> PResult<RelPattern> {
        let start = self.cur().start;
        let left = self.eat(&Tok::Lt);
        self.expect(&Tok::Minus, "`-` in relationship pattern")?;

        let mut var = None;
        let mut kinds = Vec::new();
        let mut length = None;
        let mut props = Vec::new();
        let mut detail = None;

        if matches!(self.peek(), Tok::LBracket) {
            let dstart = self.cur().start;
            self.bump();
            if self.at_variable() {
                var = Some(self.variable()?);
            }
            if self.eat(&Tok::Colon) {
                kinds.push(self.rel_kind()?);
                while self.eat(&Tok::Pipe) {
                    self.eat(&Tok::Colon);
                    kinds.push(self.rel_kind()?);
                }
            }
            if self.eat(&Tok::Star) {
                length = Some(self.var_length()?);
            }
            if matches!(self.peek(), Tok::LBrace) {
                props = self.map_entries()?;
            }
            if self.peek().is_kw("WHERE") {
                return Err(self.unsupported("inline WHERE in relationship pattern"));
            }
            self.expect(&Tok::RBracket, "`]` to close the relationship pattern")?;
            detail = Some((dstart, self.prev_end()));
        }

        self.expect(&Tok::Minus, "`-` in relationship pattern")?;
        let right = self.eat(&Tok::Gt);
        let direction = match (left, right) {
            (true, false) => Direction::Left,
            (false, true) => Direction::Right,
            _ => Direction::Undirected,
        };
        self.map.rels.push(RelSpan {
            start,
            end: self.prev_end(),
            detail,
        });
        Ok(RelPattern {
            var,
            kinds,
            direction,
            length,
            props,
        })
    }

    fn rel_kind(&mut self) -> PResult<RelKind> {
        let (line, column) = (self.cur().line, self.cur().column);
        let name = self.name("a relationship type")?;
        name.parse::<RelKind>().map_err(|n| {
            ParseError::new(
                ParseErrorCode::UnsupportedRelationshipKind,
                format!(
                    "relationship type `{n}` is not one of REACTS_IN, PRODUCES, USES_AGENT, USES_SOLVENT"
                ),
                line,
                column,
            )
        })
    }

    fn var_length(&mut self) -> PResult<VarLength> {
        let bound = |p: &mut Parser| -> PResult<Option<u32>> {
            if let Tok::Int(i) = *p.peek() {
                p.bump();
                u32::try_from(i)
                    .map(Some)
                    .map_err(|_| p.syntax("a non-negative hop bound"))
            } else {
                Ok(None)
            }
        };
        let min = bound(self)?;
        if self.eat(&Tok::DotDot) {
            let max = bound(self)?;
            Ok(VarLength { min, max })
        } else {
            // `*n` means exactly n hops.
            Ok(VarLength { min, max: min })
        }
    }

    fn map_entries(&mut self) -> PResult<Vec<(String, Expr)>> {
        self.expect(&Tok::LBrace, "`{`")?;
        let mut out = Vec::new();
        if self.eat(&Tok::RBrace) {
            return Ok(out);
        }
        loop {
            let key = self.name("a property key")?;
            self.expect(&Tok::Colon, "`:` after property key")?;
            let value = self.expr()?;
            out.push((key, value));
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RBrace, "`}` to close the map")?;
            return Ok(out);
        }
    }

    // ---- expressions -------------------------------------------------------

    pub fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn peek_binop(&self) -> Option<(BinaryOp, usize)> {
        let t = self.peek();
        let op = match t {
            Tok::Eq => BinaryOp::Eq,
            Tok::Ne => BinaryOp::Ne,
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            Tok::Plus => BinaryOp::Add,
            Tok::Minus => BinaryOp::Sub,
            Tok::Star => BinaryOp::Mul,
            Tok::Slash => BinaryOp::Div,
            Tok::Percent => BinaryOp::Mod,
            t if t.is_kw("OR") => BinaryOp::Or,
            t if t.is_kw("XOR") => BinaryOp::Xor,
            t if t.is_kw("AND") => BinaryOp::And,
            t if t.is_kw("IN") => BinaryOp::In,
            t if t.is_kw("CONTAINS") => BinaryOp::Contains,
            t if t.is_kw("STARTS") && self.peek_at(1).is_kw("WITH") => {
                return Some((BinaryOp::StartsWith, 2))
            }
            t if t.is_kw("ENDS") && self.peek_at(1).is_kw("WITH") => {
                return Some((BinaryOp::EndsWith, 2))
            }
            _ => return None,
        };
        Some((op, 1))
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.prefix(min_prec)?;
        loop {
            if self.peek().is_kw("IS") && min_prec <= 5 {
                self.bump();
                let negated = self.eat_kw("NOT");
                self.expect_kw("NULL")?;
                lhs = Expr::IsNull {
                    expr: Box::new(lhs),
                    negated,
                };
                continue;
            }
            if matches!(self.peek(), Tok::Caret) {
                return Err(self.unsupported("exponentiation `^`"));
            }
            let Some((op, width)) = self.peek_binop() else {
                break;
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            for _ in 0..width {
                self.bump();
            }
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self, min_prec: u8) -> PResult<Expr> {
        if self.peek().is_kw("NOT") && min_prec <= 4 {
            self.bump();
            let e = self.binary(4)?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(e)));
        }
        if matches!(self.peek(), Tok::Minus) {
            self.bump();
            let e = self.prefix(8)?;
            return Ok(match e {
                Expr::Literal(Literal::Integer(i)) => Expr::Literal(Literal::Integer(-i)),
                Expr::Literal(Literal::Float(f)) => Expr::Literal(Literal::Float(-f)),
                e => Expr::Unary(UnaryOp::Neg, Box::new(e)),
            });
        }
        if matches!(self.peek(), Tok::Plus) {
            self.bump();
            return self.prefix(8);
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if matches!(self.peek(), Tok::Dot) {
                self.bump();
                let key = self.name("a property key")?;
                e = Expr::Property(Box::new(e), key);
            } else if matches!(self.peek(), Tok::LBracket) {
                self.bump();
                if matches!(self.peek(), Tok::DotDot) {
                    return Err(self.unsupported("list slicing"));
                }
                let idx = self.expr()?;
                if matches!(self.peek(), Tok::DotDot) {
                    return Err(self.unsupported("list slicing"));
                }
                self.expect(&Tok::RBracket, "`]` after index")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else if matches!(self.peek(), Tok::Colon) {
                return Err(self.unsupported("label predicate `n:Label` in expression"));
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        match tok {
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::String(s)))
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Literal(Literal::Integer(i)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Literal(Literal::Float(f)))
            }
            Tok::Param(p) => Err(self.unsupported(&format!("query parameter `${p}`"))),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                if self.looks_like_pattern_continuation() {
                    return Err(self.unsupported("pattern predicate in expression"));
                }
                Ok(e)
            }
            Tok::LBracket => self.list_or_comprehension(),
            Tok::LBrace => Ok(Expr::Map(self.map_entries()?)),
            Tok::Ident(ref s) if s.eq_ignore_ascii_case("TRUE") => {
                self.bump();
                Ok(Expr::Literal(Literal::Bool(true)))
            }
            Tok::Ident(ref s) if s.eq_ignore_ascii_case("FALSE") => {
                self.bump();
                Ok(Expr::Literal(Literal::Bool(false)))
            }
            Tok::Ident(ref s) if s.eq_ignore_ascii_case("NULL") => {
                self.bump();
                Ok(Expr::Literal(Literal::Null))
            }
            Tok::Ident(ref s) if s.eq_ignore_ascii_case("CASE") => {
                Err(self.unsupported("CASE expression"))
            }
            Tok::Ident(ref s) if s.eq_ignore_ascii_case("EXISTS") => {
                if matches!(self.peek_at(1), Tok::LBrace) {
                    Err(self.unsupported("EXISTS subquery"))
                } else {
                    self.call_or_var()
                }
            }
            Tok::Ident(_) | Tok::QuotedIdent(_) => self.call_or_var(),
            _ => Err(self.syntax("an expression")),
        }
    }

    fn looks_like_pattern_continuation(&self) -> bool {
        matches!(
            (self.peek(), self.peek_at(1)),
            (Tok::Minus, Tok::LBracket | Tok::Minus | Tok::Gt) | (Tok::Lt, Tok::Minus)
        )
    }

    fn call_or_var(&mut self) -> PResult<Expr> {
        let is_quoted = matches!(self.peek(), Tok::QuotedIdent(_));
        let name = self.name("an identifier")?;
        if is_quoted || !matches!(self.peek(), Tok::LParen | Tok::Dot) {
            return Ok(Expr::Var(name));
        }
        if matches!(self.peek(), Tok::Dot) {
            // Namespaced function such as `apoc.coll.toSet(...)`.
            let mut k = 1;
            while matches!(self.peek_at(k), Tok::Dot)
                && matches!(self.peek_at(k + 1), Tok::Ident(_))
            {
                k += 2;
            }
            if k > 1 && matches!(self.peek_at(k), Tok::LParen) {
                return Err(self.unsupported(&format!("namespaced function `{name}.…`")));
            }
            return Ok(Expr::Var(name));
        }
        let lower = name.to_ascii_lowercase();
        self.bump(); // (
        let quant = match lower.as_str() {
            "all" => Some(Quantifier::All),
            "any" => Some(Quantifier::Any),
            "none" => Some(Quantifier::None),
            "single" => Some(Quantifier::Single),
            _ => None,
        };
        if let Some(kind) = quant {
            let var = self.variable()?;
            self.expect_kw("IN")?;
            let list = self.expr()?;
            self.expect_kw("WHERE")?;
            let pred = self.expr()?;
            self.expect(&Tok::RParen, "`)` to close the quantifier")?;
            return Ok(Expr::Quantified {
                kind,
                var,
                list: Box::new(list),
                pred: Box::new(pred),
            });
        }
        if lower == "count" && matches!(self.peek(), Tok::Star) {
            self.bump();
            self.expect(&Tok::RParen, "`)` after count(*")?;
            return Ok(Expr::CountStar);
        }
        let distinct = self.eat_kw("DISTINCT");
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RParen, "`)` to close the argument list")?;
                break;
            }
        }
        Ok(Expr::Call {
            name: lower,
            distinct,
            args,
        })
    }

    fn list_or_comprehension(&mut self) -> PResult<Expr> {
        self.expect(&Tok::LBracket, "`[`")?;
        let is_comprehension = self.at_variable() && self.peek_at(1).is_kw("IN");
        if is_comprehension {
            let var = self.variable()?;
            self.expect_kw("IN")?;
            let list = self.expr()?;
            let filter = if self.eat_kw("WHERE") {
                Some(Box::new(self.expr()?))
            } else {
                None
            };
            let map = if self.eat(&Tok::Pipe) {
                Some(Box::new(self.expr()?))
            } else {
                None
            };
            self.expect(&Tok::RBracket, "`]` to close the list comprehension")?;
            return Ok(Expr::ListComprehension {
                var,
                list: Box::new(list),
                filter,
                map,
            });
        }
        if matches!(self.peek(), Tok::LParen) && self.pattern_comprehension_ahead() {
            return Err(self.unsupported("pattern comprehension"));
        }
        let mut items = Vec::new();
        if self.eat(&Tok::RBracket) {
            return Ok(Expr::List(items));
        }
        loop {
            items.push(self.expr()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RBracket, "`]` to close the list")?;
            return Ok(Expr::List(items));
        }
    }

    fn pattern_comprehension_ahead(&self) -> bool {
        // `[(a)-->(b) | ...]`: find the matching `)` and check for an arrow.
        let mut depth = 0usize;
        let mut k = 0;
        loop {
            match self.peek_at(k) {
                Tok::LParen => depth += 1,
                Tok::RParen => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                Tok::Eof => return false,
                _ => {}
            }
            k += 1;
        }
        matches!(
            (self.peek_at(k + 1), self.peek_at(k + 2)),
            (Tok::Minus, Tok::LBracket | Tok::Minus | Tok::Gt) | (Tok::Lt, Tok::Minus)
        )
    }
}
