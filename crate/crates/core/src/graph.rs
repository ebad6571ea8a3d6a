//! Immutable bipartite reaction graph.
//!
//! Nodes and edges live in dense vectors; ids are indices. Adjacency keeps
//! insertion order per node, per kind and per direction, which makes every
//! traversal deterministic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cypher::{Label, RelKind};
use crate::ingest::ReactionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: Label,
    /// SMILES for molecules, id for reactions.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: RelKind,
    pub source: NodeId,
    pub target: NodeId,
    /// Only ever set on PRODUCES edges.
    pub yield_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Out,
    In,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("duplicate reaction id `{0}`")]
    DuplicateReaction(String),
    #[error("empty key on {0} node")]
    EmptyKey(Label),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    molecules: HashMap<String, NodeId>,
    reactions: HashMap<String, NodeId>,
    out_adj: Vec<[Vec<EdgeId>; 4]>,
    in_adj: Vec<[Vec<EdgeId>; 4]>,
    edge_set: HashSet<(RelKind, NodeId, NodeId)>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        // Indices are derived from these two vectors.
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn molecule_count(&self) -> usize {
        self.molecules.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i as u32), n))
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, e)| (EdgeId(i as u32), e))
    }

    pub fn molecule(&self, name: &str) -> Option<NodeId> {
        self.molecules.get(name).copied()
    }

    pub fn reaction(&self, id: &str) -> Option<NodeId> {
        self.reactions.get(id).copied()
    }

    pub fn lookup(&self, label: Label, key: &str) -> Option<NodeId> {
        match label {
            Label::Molecule => self.molecule(key),
            Label::Reaction => self.reaction(key),
        }
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Edge ids incident to `node` for one kind and direction, in insertion order.
    pub fn incident(&self, node: NodeId, kind: RelKind, dir: Dir) -> &[EdgeId] {
        let adj = match dir {
            Dir::Out => &self.out_adj,
            Dir::In => &self.in_adj,
        };
        &adj[node.index()][kind.index()]
    }

    pub fn neighbors(
        &self,
        node: NodeId,
        kind: RelKind,
        dir: Dir,
    ) -> Result<Vec<NodeId>, GraphError> {
        if !self.contains_node(node) {
            return Err(GraphError::UnknownNode(node));
        }
        Ok(self
            .incident(node, kind, dir)
            .iter()
            .map(|&e| {
                let e = self.edge(e);
                match dir {
                    Dir::Out => e.target,
                    Dir::In => e.source,
                }
            })
            .collect())
    }

    pub fn molecule_names(&self) -> HashSet<&str> {
        self.molecules.keys().map(String::as_str).collect()
    }

    fn add_node(&mut self, label: Label, key: &str) -> Result<NodeId, GraphError> {
        if key.is_empty() {
            return Err(GraphError::EmptyKey(label));
        }
        let id = NodeId(self.nodes.len() as u32);
        let index = match label {
            Label::Molecule => &mut self.molecules,
            Label::Reaction => &mut self.reactions,
        };
        if let Some(&existing) = index.get(key) {
            return match label {
                Label::Molecule => Ok(existing),
                Label::Reaction => Err(GraphError::DuplicateReaction(key.to_string())),
            };
        }
        index.insert(key.to_string(), id);
        self.nodes.push(Node {
            label,
            key: key.to_string(),
        });
        self.out_adj.push(Default::default());
        self.in_adj.push(Default::default());
        Ok(id)
    }

    /// Adds an edge; a parallel duplicate (same kind and endpoints) is ignored.
    fn add_edge(&mut self, kind: RelKind, source: NodeId, target: NodeId, yield_pct: Option<f64>) {
        if !self.edge_set.insert((kind, source, target)) {
            return;
        }
        let id = EdgeId(self.edges.len() as u32);
        self.edges.push(Edge {
            kind,
            source,
            target,
            yield_pct: if kind == RelKind::Produces {
                yield_pct
            } else {
                None
            },
        });
        self.out_adj[source.index()][kind.index()].push(id);
        self.in_adj[target.index()][kind.index()].push(id);
    }

    /// Counts of nodes by label name.
    pub fn node_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        m.insert("Molecule".to_string(), self.molecule_count());
        m.insert("Reaction".to_string(), self.reaction_count());
        m
    }

    pub fn has_yields(&self) -> bool {
        self.edges.iter().any(|e| e.yield_pct.is_some())
    }

    /// Schema description injected into prompts, derived from the stored data.
    pub fn schema_text(&self) -> String {
        let mut kinds_present = [false; 4];
        for e in &self.edges {
            kinds_present[e.kind.index()] = true;
        }
        if self.edges.is_empty() {
            kinds_present = [true; 4];
        }
        let mut s = String::new();
        s.push_str("Node properties:\n");
        s.push_str("- Molecule {name: STRING}  // SMILES string, unique\n");
        s.push_str("- Reaction {id: STRING}  // unique reaction identifier\n");
        s.push_str("Relationship properties:\n");
        if kinds_present[RelKind::Produces.index()] {
            s.push_str("- PRODUCES {yield: FLOAT}  // percent yield of the product, may be null\n");
        }
        s.push_str("The relationships:\n");
        for kind in RelKind::ALL {
            if kinds_present[kind.index()] {
                s.push_str(&format!(
                    "(:{})-[:{}]->(:{})\n",
                    kind.source_label(),
                    kind,
                    kind.target_label()
                ));
            }
        }
        s.truncate(s.trim_end().len());
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let io = |e: std::io::Error| GraphError::Io(e.to_string());
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = Header {
            node_counts: self.node_counts(),
            edge_count: self.edge_count(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for n in &self.nodes {
            let line = match n.label {
                Label::Molecule => Line::Molecule {
                    name: n.key.clone(),
                },
                Label::Reaction => Line::Reaction { id: n.key.clone() },
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        for e in &self.edges {
            let line = Line::Edge {
                kind: e.kind,
                source: self.node(e.source).key.clone(),
                target: self.node(e.target).key.clone(),
                yield_pct: e.yield_pct,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KnowledgeGraph, GraphError> {
        let f = fs::File::open(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<KnowledgeGraph, GraphError> {
        let mut g = KnowledgeGraph::new();
        let mut header: Option<Header> = None;
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let fail = |message: String| GraphError::Format {
                line: line_no,
                message,
            };
            let text = line.map_err(|e| GraphError::Io(e.to_string()))?;
            if text.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| fail(format!("bad header: {e}")))?,
                );
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&text).map_err(|e| fail(format!("bad record: {e}")))?;
            match parsed {
                Line::Molecule { name } => {
                    if g.molecule(&name).is_some() {
                        return Err(fail(format!("duplicate molecule `{name}`")));
                    }
                    g.add_node(Label::Molecule, &name)
                        .map_err(|e| fail(e.to_string()))?;
                }
                Line::Reaction { id } => {
                    g.add_node(Label::Reaction, &id)
                        .map_err(|e| fail(e.to_string()))?;
                }
                Line::Edge {
                    kind,
                    source,
                    target,
                    yield_pct,
                } => {
                    let desc = format!("edge ({source})-[:{kind}]->({target})");
                    let s = g
                        .lookup(kind.source_label(), &source)
                        .ok_or_else(|| {
                            fail(format!(
                                "{desc}: source must be an existing {} node",
                                kind.source_label()
                            ))
                        })?;
                    let t = g
                        .lookup(kind.target_label(), &target)
                        .ok_or_else(|| {
                            fail(format!(
                                "{desc}: target must be an existing {} node",
                                kind.target_label()
                            ))
                        })?;
                    if yield_pct.is_some() && kind != RelKind::Produces {
                        return Err(fail(format!("{desc}: yield is only allowed on PRODUCES")));
                    }
                    if g.edge_set.contains(&(kind, s, t)) {
                        return Err(fail(format!("{desc}: duplicate edge")));
                    }
                    g.add_edge(kind, s, t, yield_pct);
                }
            }
        }
        if let Some(h) = header {
            if h.edge_count != g.edge_count() || h.node_counts != g.node_counts() {
                return Err(GraphError::Format {
                    line: 1,
                    message: format!(
                        "header counts {:?}/{} do not match content {:?}/{}",
                        h.node_counts,
                        h.edge_count,
                        g.node_counts(),
                        g.edge_count()
                    ),
                });
            }
        }
        Ok(g)
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} molecules, {} reactions, {} edges",
            self.molecule_count(),
            self.reaction_count(),
            self.edge_count()
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    node_counts: BTreeMap<String, usize>,
    edge_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum Line {
    Molecule {
        name: String,
    },
    Reaction {
        id: String,
    },
    Edge {
        kind: RelKind,
        source: String,
        target: String,
        #[serde(rename = "yield", default)]
        yield_pct: Option<f64>,
    },
}

/// One reaction node per record, one molecule node per distinct SMILES.
/// Node order: each record's reaction, then its molecules by role.
pub fn build_graph(records: &[ReactionRecord]) -> Result<KnowledgeGraph, GraphError> {
    let mut g = KnowledgeGraph::new();
    for rec in records {
        let r = g.add_node(Label::Reaction, &rec.id)?;
        let mol = |g: &mut KnowledgeGraph, s: &str| g.add_node(Label::Molecule, s);
        for s in &rec.reactants {
            let m = mol(&mut g, s)?;
            g.add_edge(RelKind::ReactsIn, m, r, None);
        }
        for s in &rec.products {
            let m = mol(&mut g, s)?;
            let y = rec.yields.as_ref().and_then(|y| y.get(s)).copied();
            g.add_edge(RelKind::Produces, r, m, y);
        }
        for s in &rec.agents {
            let m = mol(&mut g, s)?;
            g.add_edge(RelKind::UsesAgent, r, m, None);
        }
        for s in &rec.solvents {
            let m = mol(&mut g, s)?;
            g.add_edge(RelKind::UsesSolvent, r, m, None);
        }
    }
    Ok(g)
}
