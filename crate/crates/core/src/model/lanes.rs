//! Directed propagation lanes over a block-diagonal batch of graphs.

use std::ops::Range;

use crate::graph::{EdgeType, FdaGraph};

use super::{ModelConfig, ModelError};

/// Lane direction. Every stored edge contributes a forward lane; with
/// `bidirectional` set it also contributes a reverse lane with its own
/// parameters, mirroring the doubled connection-matrix width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Fwd,
    Rev,
}

impl Dir {
    pub fn tag(self) -> &'static str {
        match self {
            Dir::Fwd => "f",
            Dir::Rev => "r",
        }
    }
}

/// A contiguous run of lanes sharing (edge type, direction), and hence
/// parameters.
#[derive(Debug, Clone)]
pub struct LaneGroup {
    pub ty: EdgeType,
    pub dir: Dir,
    pub range: Range<usize>,
}

/// Several graphs packed into one node space, with lanes grouped by
/// (type, direction) in a fixed order.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub num_graphs: usize,
    /// Kind code per node, global numbering.
    pub kinds: Vec<usize>,
    pub graph_of_node: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    /// Lane source/target nodes, global numbering, concatenated group by
    /// group.
    pub lane_src: Vec<usize>,
    pub lane_dst: Vec<usize>,
    pub groups: Vec<LaneGroup>,
}

impl GraphBatch {
    pub fn new(graphs: &[&FdaGraph], cfg: &ModelConfig) -> Result<GraphBatch, ModelError> {
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut num_nodes = 0usize;
        let mut kinds = Vec::new();
        let mut graph_of_node = Vec::new();
        let mut labels = Vec::with_capacity(graphs.len());
        for (gi, g) in graphs.iter().enumerate() {
            offsets.push(num_nodes);
            num_nodes += g.num_nodes;
            for &k in &g.kinds {
                if (k as usize) >= cfg.num_kinds {
                    return Err(ModelError::UnknownKind {
                        code: k,
                        num_kinds: cfg.num_kinds,
                    });
                }
                kinds.push(k as usize);
                graph_of_node.push(gi);
            }
            labels.push(g.label);
        }

        let dirs: &[Dir] = if cfg.bidirectional {
            &[Dir::Fwd, Dir::Rev]
        } else {
            &[Dir::Fwd]
        };
        let mut lane_src = Vec::new();
        let mut lane_dst = Vec::new();
        let mut groups = Vec::new();
        for ty in EdgeType::ALL {
            for &dir in dirs {
                let start = lane_src.len();
                for (gi, g) in graphs.iter().enumerate() {
                    let off = offsets[gi];
                    for e in g.edges.iter().filter(|e| e.ty == ty) {
                        match dir {
                            Dir::Fwd => {
                                lane_src.push(off + e.src);
                                lane_dst.push(off + e.dst);
                            }
                            Dir::Rev => {
                                lane_src.push(off + e.dst);
                                lane_dst.push(off + e.src);
                            }
                        }
                    }
                }
                groups.push(LaneGroup {
                    ty,
                    dir,
                    range: start..lane_src.len(),
                });
            }
        }

        Ok(GraphBatch {
            num_nodes,
            num_graphs: graphs.len(),
            kinds,
            graph_of_node,
            labels,
            lane_src,
            lane_dst,
            groups,
        })
    }

    pub fn single(g: &FdaGraph, cfg: &ModelConfig) -> Result<GraphBatch, ModelError> {
        GraphBatch::new(&[g], cfg)
    }

    pub fn num_lanes(&self) -> usize {
        self.lane_src.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_graph;
    use crate::model::Mode;

    #[test]
    fn bidirectional_doubles_lanes() {
        let g = random_graph(3, 12, 2);
        let mut cfg = ModelConfig::desk(2);
        cfg.mode = Mode::Ggann;
        let both = GraphBatch::single(&g, &cfg).unwrap();
        cfg.bidirectional = false;
        let fwd = GraphBatch::single(&g, &cfg).unwrap();
        assert_eq!(both.num_lanes(), 2 * fwd.num_lanes());
        assert_eq!(both.num_lanes(), 2 * g.edges.len());
    }

    #[test]
    fn groups_partition_lanes() {
        let g1 = random_graph(5, 10, 2);
        let g2 = random_graph(6, 10, 2);
        let cfg = ModelConfig::desk(2);
        let batch = GraphBatch::new(&[&g1, &g2], &cfg).unwrap();
        assert_eq!(batch.num_nodes, g1.num_nodes + g2.num_nodes);
        let mut covered = 0usize;
        for g in &batch.groups {
            assert_eq!(g.range.start, covered);
            covered = g.range.end;
        }
        assert_eq!(covered, batch.num_lanes());
        // every lane's endpoints belong to the same graph
        for i in 0..batch.num_lanes() {
            assert_eq!(
                batch.graph_of_node[batch.lane_src[i]],
                batch.graph_of_node[batch.lane_dst[i]]
            );
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        let mut g = random_graph(4, 6, 2);
        g.kinds[0] = 24; // GotoStmt: valid kind code
        let mut cfg = ModelConfig::desk(2);
        cfg.num_kinds = 10; // shrink the vocabulary below the code
        assert!(matches!(
            GraphBatch::single(&g, &cfg),
            Err(ModelError::UnknownKind { .. })
        ));
    }
}
