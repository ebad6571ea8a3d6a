//! Syntax tree for the supported Cypher subset.
//!
//! The tree carries no source positions so that two parses of equivalent
//! text compare equal. Positions needed for diagnostics and in-place text
//! edits live in [`SourceMap`](super::parser::SourceMap).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four relationship kinds of the reaction graph schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelKind {
    #[serde(rename = "REACTS_IN")]
    ReactsIn,
    #[serde(rename = "PRODUCES")]
    Produces,
    #[serde(rename = "USES_AGENT")]
    UsesAgent,
    #[serde(rename = "USES_SOLVENT")]
    UsesSolvent,
}

impl RelKind {
    pub const ALL: [RelKind; 4] = [
        RelKind::ReactsIn,
        RelKind::Produces,
        RelKind::UsesAgent,
        RelKind::UsesSolvent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelKind::ReactsIn => "REACTS_IN",
            RelKind::Produces => "PRODUCES",
            RelKind::UsesAgent => "USES_AGENT",
            RelKind::UsesSolvent => "USES_SOLVENT",
        }
    }

    /// Dense index, used for per-kind adjacency tables.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Label of the source node the schema prescribes for this kind.
    pub fn source_label(self) -> Label {
        match self {
            RelKind::ReactsIn => Label::Molecule,
            _ => Label::Reaction,
        }
    }

    pub fn target_label(self) -> Label {
        self.source_label().other()
    }
}

impl fmt::Display for RelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "REACTS_IN" => Ok(RelKind::ReactsIn),
            "PRODUCES" => Ok(RelKind::Produces),
            "USES_AGENT" => Ok(RelKind::UsesAgent),
            "USES_SOLVENT" => Ok(RelKind::UsesSolvent),
            other => Err(other.to_string()),
        }
    }
}

/// The two node labels of the bipartite schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Molecule,
    Reaction,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Molecule => "Molecule",
            Label::Reaction => "Reaction",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Molecule => Label::Reaction,
            Label::Reaction => Label::Molecule,
        }
    }

    /// Name of the key property (`name` for molecules, `id` for reactions).
    pub fn key_property(self) -> &'static str {
        match self {
            Label::Molecule => "name",
            Label::Reaction => "id",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "Molecule" => Some(Label::Molecule),
            "Reaction" => Some(Label::Reaction),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Match(MatchClause),
    With(Projection),
    Return(Projection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchClause {
    pub optional: bool,
    pub patterns: Vec<PathPattern>,
    pub where_: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub distinct: bool,
    pub items: Vec<ProjectionItem>,
    pub order_by: Vec<SortItem>,
    pub skip: Option<Expr>,
    pub limit: Option<Expr>,
    /// Only legal on `WITH`.
    pub where_: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPattern {
    /// `p = ...` binding.
    pub var: Option<String>,
    pub start: NodePattern,
    pub steps: Vec<(RelPattern, NodePattern)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePattern {
    pub var: Option<String>,
    pub labels: Vec<String>,
    pub props: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `-[...]->`
    Right,
    /// `<-[...]-`
    Left,
    /// `-[...]-`
    Undirected,
}

impl Direction {
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Right => Direction::Left,
            Direction::Left => Direction::Right,
            Direction::Undirected => Direction::Undirected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLength {
    pub min: Option<u32>,
    pub max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelPattern {
    pub var: Option<String>,
    /// Empty means any kind.
    pub kinds: Vec<RelKind>,
    pub direction: Direction,
    pub length: Option<VarLength>,
    pub props: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Integer(i64),
    Float(f64),
    String(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    Xor,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    StartsWith,
    EndsWith,
    Contains,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::Xor => "XOR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::In => "IN",
            BinaryOp::StartsWith => "STARTS WITH",
            BinaryOp::EndsWith => "ENDS WITH",
            BinaryOp::Contains => "CONTAINS",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::Xor => 2,
            BinaryOp::And => 3,
            BinaryOp::Eq
            | BinaryOp::Ne
            | BinaryOp::Lt
            | BinaryOp::Le
            | BinaryOp::Gt
            | BinaryOp::Ge
            | BinaryOp::In
            | BinaryOp::StartsWith
            | BinaryOp::EndsWith
            | BinaryOp::Contains => 5,
            BinaryOp::Add | BinaryOp::Sub => 6,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    All,
    Any,
    None,
    Single,
}

impl Quantifier {
    pub fn name(self) -> &'static str {
        match self {
            Quantifier::All => "all",
            Quantifier::Any => "any",
            Quantifier::None => "none",
            Quantifier::Single => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Var(String),
    Property(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    /// Function call; `name` is stored lowercased.
    Call {
        name: String,
        distinct: bool,
        args: Vec<Expr>,
    },
    CountStar,
    List(Vec<Expr>),
    Map(Vec<(String, Expr)>),
    ListComprehension {
        var: String,
        list: Box<Expr>,
        filter: Option<Box<Expr>>,
        map: Option<Box<Expr>>,
    },
    Quantified {
        kind: Quantifier,
        var: String,
        list: Box<Expr>,
        pred: Box<Expr>,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
}

pub const AGGREGATES: &[&str] = &["collect", "count", "min", "max", "sum", "avg"];

pub const SCALAR_FUNCTIONS: &[&str] = &[
    "size",
    "length",
    "relationships",
    "rels",
    "nodes",
    "labels",
    "range",
    "type",
    "head",
    "last",
    "tail",
    "reverse",
    "coalesce",
    "tolower",
    "toupper",
    "tostring",
    "tointeger",
    "tofloat",
    "id",
    "startnode",
    "endnode",
    "properties",
    "keys",
    "exists",
];

pub fn is_aggregate(name: &str) -> bool {
    AGGREGATES.contains(&name)
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn contains_aggregate(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, Expr::CountStar) {
                found = true;
            }
            if let Expr::Call { name, .. } = e {
                if is_aggregate(name) {
                    found = true;
                }
            }
        });
        found
    }

    /// Pre-order traversal over every sub-expression.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Literal(_) | Expr::Var(_) | Expr::CountStar => {}
            Expr::Property(e, _) => e.walk(f),
            Expr::Index(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Call { args, .. } | Expr::List(args) => {
                for a in args {
                    a.walk(f);
                }
            }
            Expr::Map(entries) => {
                for (_, e) in entries {
                    e.walk(f);
                }
            }
            Expr::ListComprehension {
                list, filter, map, ..
            } => {
                list.walk(f);
                if let Some(e) = filter {
                    e.walk(f);
                }
                if let Some(e) = map {
                    e.walk(f);
                }
            }
            Expr::Quantified { list, pred, .. } => {
                list.walk(f);
                pred.walk(f);
            }
            Expr::Unary(_, e) => e.walk(f),
            Expr::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::IsNull { expr, .. } => expr.walk(f),
        }
    }
}

impl Query {
    /// Every path pattern in clause order, with its owning clause index.
    pub fn patterns(&self) -> impl Iterator<Item = (usize, &PathPattern)> {
        self.clauses.iter().enumerate().flat_map(|(i, c)| match c {
            Clause::Match(m) => m.patterns.iter().map(move |p| (i, p)).collect::<Vec<_>>(),
            _ => Vec::new(),
        })
    }

    pub fn patterns_mut(&mut self) -> impl Iterator<Item = &mut PathPattern> {
        self.clauses.iter_mut().flat_map(|c| match c {
            Clause::Match(m) => m.patterns.iter_mut().collect::<Vec<_>>(),
            _ => Vec::new(),
        })
    }
}

impl PathPattern {
    pub fn nodes(&self) -> impl Iterator<Item = &NodePattern> {
        std::iter::once(&self.start).chain(self.steps.iter().map(|(_, n)| n))
    }

    /// Node pattern at position `i` (0 is the start node).
    pub fn node(&self, i: usize) -> &NodePattern {
        if i == 0 {
            &self.start
        } else {
            &self.steps[i - 1].1
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}
