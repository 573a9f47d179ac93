//! Program classification over FDA graphs.
//!
//! The pipeline: parse MiniC sources into ASTs, augment them with data-flow
//! and function-call edges to form FDA graphs (7 edge types), and classify
//! the graphs with a gated graph attention network built on an in-crate
//! reverse-mode tape. A plain GGNN aggregation mode is included as the
//! baseline.

// numeric kernels index in loops deliberately; iterator forms read worse
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod diff;
pub mod frontend;
pub mod graph;
pub mod model;
pub mod reports;
pub mod train;

pub use frontend::{Ast, AstNode, NodeKind};
pub use graph::{Edge, EdgeType, FdaGraph, GraphStats};
