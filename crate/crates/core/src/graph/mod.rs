//! FDA program graphs: AST edges plus data-flow and function-call edges.

mod analysis;
mod build;

pub use analysis::{resolve, version_variables, Callee, Resolution, VarStatus};
pub use build::{build_ast_edges, build_dfg, build_fcg, build_fda};

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::frontend::NodeKind;

/// The seven FDA edge types. Codes are stable wire values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Ast = 0,
    Operand = 1,
    LastUse = 2,
    Compute = 3,
    Return = 4,
    Formal = 5,
    Call = 6,
}

impl EdgeType {
    pub const COUNT: usize = 7;

    pub const ALL: [EdgeType; Self::COUNT] = [
        EdgeType::Ast,
        EdgeType::Operand,
        EdgeType::LastUse,
        EdgeType::Compute,
        EdgeType::Return,
        EdgeType::Formal,
        EdgeType::Call,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<EdgeType> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Ast => "Ast",
            EdgeType::Operand => "Operand",
            EdgeType::LastUse => "LastUse",
            EdgeType::Compute => "Compute",
            EdgeType::Return => "Return",
            EdgeType::Formal => "Formal",
            EdgeType::Call => "Call",
        }
    }

    pub fn from_name(name: &str) -> Option<EdgeType> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }
}

impl std::fmt::Display for EdgeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A typed directed edge, serialized as `[src, dst, type]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

impl Edge {
    pub fn new(src: usize, dst: usize, ty: EdgeType) -> Self {
        Edge { src, dst, ty }
    }

    fn sort_key(&self) -> (u8, usize, usize) {
        (self.ty.code(), self.src, self.dst)
    }
}

impl Serialize for Edge {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(3))?;
        seq.serialize_element(&self.src)?;
        seq.serialize_element(&self.dst)?;
        seq.serialize_element(&self.ty.code())?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EdgeVisitor;
        impl<'de> Visitor<'de> for EdgeVisitor {
            type Value = Edge;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an array [src, dst, type]")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Edge, A::Error> {
                let src: usize = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::custom("missing src"))?;
                let dst: usize = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::custom("missing dst"))?;
                let code: u8 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::custom("missing type"))?;
                if seq.next_element::<serde_json::Value>()?.is_some() {
                    return Err(serde::de::Error::custom("edge has more than 3 elements"));
                }
                let ty = EdgeType::from_code(code)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad edge type {code}")))?;
                Ok(Edge { src, dst, ty })
            }
        }
        deserializer.deserialize_seq(EdgeVisitor)
    }
}

/// The integrated program graph: node kinds plus typed edges.
///
/// Nodes are the AST nodes (statuses and functions reuse their AST
/// occurrence nodes) followed by one synthetic FunctionDecl per undeclared
/// callee. Edges are deduplicated and sorted by (type, src, dst).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdaGraph {
    pub source_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub num_nodes: usize,
    pub kinds: Vec<u16>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("program contains no function definitions")]
    EmptyProgram,
    #[error("unresolved identifier '{name}' at line {line}")]
    UnresolvedIdentifier { name: String, line: u32 },
    #[error("call to '{callee}' passes {got} arguments, expected {expected}")]
    ArityMismatch {
        callee: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed graph JSON: {0}")]
    MalformedJson(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

impl FdaGraph {
    /// Per-type edge counts and totals.
    pub fn stats(&self) -> GraphStats {
        let mut per_type = [0usize; EdgeType::COUNT];
        for e in &self.edges {
            per_type[e.ty.code() as usize] += 1;
        }
        GraphStats {
            nodes: self.num_nodes,
            edges: self.edges.len(),
            per_type,
        }
    }

    /// Copy with all edges of type `t` removed; nodes unchanged.
    pub fn drop_edge_type(&self, t: EdgeType) -> FdaGraph {
        let mut g = self.clone();
        g.edges.retain(|e| e.ty != t);
        g
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<FdaGraph, GraphError> {
        let mut g: FdaGraph =
            serde_json::from_str(json).map_err(|e| GraphError::MalformedJson(e.to_string()))?;
        g.validate()?;
        g.normalize();
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.kinds.len() != self.num_nodes {
            return Err(GraphError::Invalid(format!(
                "kinds length {} does not match num_nodes {}",
                self.kinds.len(),
                self.num_nodes
            )));
        }
        for &k in &self.kinds {
            if NodeKind::from_code(k).is_none() {
                return Err(GraphError::Invalid(format!("unknown kind code {k}")));
            }
        }
        for e in &self.edges {
            if e.src >= self.num_nodes || e.dst >= self.num_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}, {}) out of range for {} nodes",
                    e.src,
                    e.dst,
                    e.ty.code(),
                    self.num_nodes
                )));
            }
        }
        Ok(())
    }

    /// Sorts edges by (type, src, dst) and removes duplicate triples.
    pub fn normalize(&mut self) {
        self.edges.sort_by_key(Edge::sort_key);
        self.edges.dedup();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub per_type: [usize; EdgeType::COUNT],
}

impl GraphStats {
    pub fn count(&self, t: EdgeType) -> usize {
        self.per_type[t.code() as usize]
    }
}

/// Generates a small random graph with a spanning Ast tree plus random typed
/// edges. Used by property tests; not representative of real program shape.
pub fn random_graph(seed: u64, max_nodes: usize, num_classes: usize) -> FdaGraph {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=max_nodes.max(3));
    let mut kinds = Vec::with_capacity(n);
    kinds.push(NodeKind::TranslationUnit.code());
    for _ in 1..n {
        kinds.push(rng.random_range(0..NodeKind::COUNT as u16));
    }
    let mut edges = Vec::new();
    for child in 1..n {
        let parent = rng.random_range(0..child);
        edges.push(Edge::new(parent, child, EdgeType::Ast));
    }
    let extra = rng.random_range(0..=2 * n);
    for _ in 0..extra {
        let ty = EdgeType::ALL[rng.random_range(1..EdgeType::COUNT)];
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        edges.push(Edge::new(src, dst, ty));
    }
    let mut g = FdaGraph {
        source_id: format!("random-{seed}"),
        label: Some(rng.random_range(0..num_classes.max(1))),
        num_nodes: n,
        kinds,
        edges,
    };
    g.normalize();
    g
}
