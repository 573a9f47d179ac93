use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Syntactic node kinds, mirroring the clang kind names.
///
/// The enum is closed and the integer codes are stable: they are what graph
/// serialization and the model's embedding table index on. `GotoStmt` is kept
/// for forward compatibility but the MiniC frontend never produces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    TranslationUnit = 0,
    FunctionDecl = 1,
    ParmVarDecl = 2,
    VarDecl = 3,
    DeclStmt = 4,
    CompoundStmt = 5,
    IfStmt = 6,
    ForStmt = 7,
    WhileStmt = 8,
    DoStmt = 9,
    ReturnStmt = 10,
    BreakStmt = 11,
    ContinueStmt = 12,
    BinaryOperator = 13,
    UnaryOperator = 14,
    CompoundAssignOperator = 15,
    ConditionalOperator = 16,
    CallExpr = 17,
    DeclRefExpr = 18,
    IntegerLiteral = 19,
    FloatingLiteral = 20,
    StringLiteral = 21,
    ArraySubscriptExpr = 22,
    ImplicitCastExpr = 23,
    GotoStmt = 24,
}

impl NodeKind {
    /// Number of kinds, i.e. the size of the model's kind vocabulary.
    pub const COUNT: usize = 25;

    pub const ALL: [NodeKind; Self::COUNT] = [
        NodeKind::TranslationUnit,
        NodeKind::FunctionDecl,
        NodeKind::ParmVarDecl,
        NodeKind::VarDecl,
        NodeKind::DeclStmt,
        NodeKind::CompoundStmt,
        NodeKind::IfStmt,
        NodeKind::ForStmt,
        NodeKind::WhileStmt,
        NodeKind::DoStmt,
        NodeKind::ReturnStmt,
        NodeKind::BreakStmt,
        NodeKind::ContinueStmt,
        NodeKind::BinaryOperator,
        NodeKind::UnaryOperator,
        NodeKind::CompoundAssignOperator,
        NodeKind::ConditionalOperator,
        NodeKind::CallExpr,
        NodeKind::DeclRefExpr,
        NodeKind::IntegerLiteral,
        NodeKind::FloatingLiteral,
        NodeKind::StringLiteral,
        NodeKind::ArraySubscriptExpr,
        NodeKind::ImplicitCastExpr,
        NodeKind::GotoStmt,
    ];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<NodeKind> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::TranslationUnit => "TranslationUnit",
            NodeKind::FunctionDecl => "FunctionDecl",
            NodeKind::ParmVarDecl => "ParmVarDecl",
            NodeKind::VarDecl => "VarDecl",
            NodeKind::DeclStmt => "DeclStmt",
            NodeKind::CompoundStmt => "CompoundStmt",
            NodeKind::IfStmt => "IfStmt",
            NodeKind::ForStmt => "ForStmt",
            NodeKind::WhileStmt => "WhileStmt",
            NodeKind::DoStmt => "DoStmt",
            NodeKind::ReturnStmt => "ReturnStmt",
            NodeKind::BreakStmt => "BreakStmt",
            NodeKind::ContinueStmt => "ContinueStmt",
            NodeKind::BinaryOperator => "BinaryOperator",
            NodeKind::UnaryOperator => "UnaryOperator",
            NodeKind::CompoundAssignOperator => "CompoundAssignOperator",
            NodeKind::ConditionalOperator => "ConditionalOperator",
            NodeKind::CallExpr => "CallExpr",
            NodeKind::DeclRefExpr => "DeclRefExpr",
            NodeKind::IntegerLiteral => "IntegerLiteral",
            NodeKind::FloatingLiteral => "FloatingLiteral",
            NodeKind::StringLiteral => "StringLiteral",
            NodeKind::ArraySubscriptExpr => "ArraySubscriptExpr",
            NodeKind::ImplicitCastExpr => "ImplicitCastExpr",
            NodeKind::GotoStmt => "GotoStmt",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Value types of the MiniC surface language. Kept as graph-construction
/// bookkeeping; types never appear in the serialized AST.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Void,
}

impl Ty {
    pub fn name(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Float => "float",
            Ty::Void => "void",
        }
    }
}

/// One node of the flat AST.
///
/// `symbol` and `literal` exist solely so that graph construction can resolve
/// defs, uses and call targets; a feature extractor that reads anything but
/// `kind` violates the model contract. `op` carries the operator spelling for
/// BinaryOperator / UnaryOperator / CompoundAssignOperator nodes and, for
/// ForStmt nodes, a part mask (subset of "icu" for init/cond/update) that
/// disambiguates the loop header during data-flow construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub literal: Option<String>,
    #[serde(default)]
    pub children: Vec<usize>,
}

impl AstNode {
    pub fn new(id: usize, kind: NodeKind) -> Self {
        AstNode {
            id,
            kind,
            op: None,
            symbol: None,
            literal: None,
            children: Vec::new(),
        }
    }
}

/// A parsed translation unit as a flat, pre-order-numbered tree.
///
/// Node ids are `0..N-1` with the root (always a TranslationUnit) at 0 and
/// every parent id smaller than its children's. `lines` and `decl_types` are
/// frontend bookkeeping: they are not serialized, take no part in equality,
/// and are empty on an `Ast` deserialized from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ast {
    pub root: usize,
    pub nodes: Vec<AstNode>,
    #[serde(skip)]
    pub lines: Vec<u32>,
    #[serde(skip)]
    pub decl_types: BTreeMap<usize, Ty>,
}

impl PartialEq for Ast {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.nodes == other.nodes
    }
}

impl Eq for Ast {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AstJsonError {
    #[error("malformed AST JSON: {0}")]
    Malformed(String),
    #[error("invalid AST: {0}")]
    Invalid(String),
}

impl Ast {
    pub fn node(&self, id: usize) -> &AstNode {
        &self.nodes[id]
    }

    pub fn line(&self, id: usize) -> u32 {
        self.lines.get(id).copied().unwrap_or(0)
    }

    /// Ids of all nodes with the given kind, in id (pre-order) order.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.id)
            .collect()
    }

    /// Multiset of node kinds, as counts indexed by kind code.
    pub fn kind_counts(&self) -> [usize; NodeKind::COUNT] {
        let mut counts = [0usize; NodeKind::COUNT];
        for n in &self.nodes {
            counts[n.kind.code() as usize] += 1;
        }
        counts
    }

    /// Checks the structural invariants: ids match positions, children are in
    /// range, every non-root node has exactly one parent, and all nodes are
    /// reachable from the root.
    pub fn validate(&self) -> Result<(), AstJsonError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(AstJsonError::Invalid("empty node list".into()));
        }
        if self.root >= n {
            return Err(AstJsonError::Invalid(format!(
                "root {} out of range for {} nodes",
                self.root, n
            )));
        }
        if self.nodes[self.root].kind != NodeKind::TranslationUnit {
            return Err(AstJsonError::Invalid(
                "root is not a TranslationUnit".into(),
            ));
        }
        let mut parents = vec![usize::MAX; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(AstJsonError::Invalid(format!(
                    "node at position {i} has id {}",
                    node.id
                )));
            }
            for &c in &node.children {
                if c >= n {
                    return Err(AstJsonError::Invalid(format!(
                        "node {i} has out-of-range child {c}"
                    )));
                }
                if parents[c] != usize::MAX {
                    return Err(AstJsonError::Invalid(format!(
                        "node {c} has more than one parent"
                    )));
                }
                parents[c] = i;
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        let mut count = 0usize;
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(AstJsonError::Invalid(format!("cycle through node {id}")));
            }
            seen[id] = true;
            count += 1;
            stack.extend(self.nodes[id].children.iter().copied());
        }
        if count != n {
            return Err(AstJsonError::Invalid(format!(
                "{} of {} nodes reachable from root",
                count, n
            )));
        }
        Ok(())
    }
}

/// Serializes an `Ast` to its canonical JSON form.
pub fn ast_to_json(ast: &Ast) -> String {
    serde_json::to_string(ast).expect("AST serialization cannot fail")
}

/// Parses the canonical AST JSON, validating structural invariants.
pub fn ast_from_json(json: &str) -> Result<Ast, AstJsonError> {
    let ast: Ast =
        serde_json::from_str(json).map_err(|e| AstJsonError::Malformed(e.to_string()))?;
    ast.validate()?;
    Ok(ast)
}
