//! Parameter registration and the propagation/readout passes.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::diff::{glorot_init, zeros_init, ParamStore, Tape, Tensor, Value};
use crate::graph::{EdgeType, FdaGraph};

use super::lanes::{Dir, GraphBatch};
use super::{Mode, ModelConfig, ModelError};

fn param_seed(master: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ master
}

fn dirs(cfg: &ModelConfig) -> &'static [Dir] {
    if cfg.bidirectional {
        &[Dir::Fwd, Dir::Rev]
    } else {
        &[Dir::Fwd]
    }
}

/// Registers every learnable tensor for the given mode, Glorot-initialized
/// from per-name seeds so the layout of registration cannot change the values.
pub fn register_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    let d = cfg.d;
    let (eh, ah, c) = (cfg.edge_state_hidden, cfg.attention_hidden, cfg.num_classes);
    let mut store = ParamStore::new();
    let w = |store: &mut ParamStore, name: String, shape: &[usize]| {
        let t = glorot_init(shape, param_seed(seed, &name));
        store.insert(name, t);
    };
    let b = |store: &mut ParamStore, name: String, shape: &[usize]| {
        store.insert(name, zeros_init(shape));
    };

    w(&mut store, "embed.kind".into(), &[cfg.num_kinds, d]);

    match cfg.mode {
        Mode::Ggann => {
            w(&mut store, "ue.w1".into(), &[3 * d, eh]);
            b(&mut store, "ue.b1".into(), &[eh]);
            w(&mut store, "ue.w2".into(), &[eh, d]);
            b(&mut store, "ue.b2".into(), &[d]);
            for ty in EdgeType::ALL {
                for dir in dirs(cfg) {
                    let tag = format!("{}.{}", ty.code(), dir.tag());
                    w(&mut store, format!("edge0.{tag}"), &[d]);
                    w(&mut store, format!("anet.{tag}.w"), &[d, d * d]);
                    b(&mut store, format!("anet.{tag}.b"), &[d * d]);
                    w(&mut store, format!("att.{tag}.w1"), &[2 * d, ah]);
                    b(&mut store, format!("att.{tag}.b1"), &[ah]);
                    w(&mut store, format!("att.{tag}.w2"), &[ah, 1]);
                    b(&mut store, format!("att.{tag}.b2"), &[1]);
                }
            }
        }
        Mode::Ggnn => {
            for ty in EdgeType::ALL {
                for dir in dirs(cfg) {
                    w(
                        &mut store,
                        format!("ggnn.{}.{}", ty.code(), dir.tag()),
                        &[d, d],
                    );
                }
            }
        }
    }

    for gate in ["z", "r", "h"] {
        w(&mut store, format!("gru.w{gate}"), &[d, d]);
        w(&mut store, format!("gru.u{gate}"), &[d, d]);
        b(&mut store, format!("gru.b{gate}"), &[d]);
    }

    w(&mut store, "readout.f.w1".into(), &[2 * d, ah]);
    b(&mut store, "readout.f.b1".into(), &[ah]);
    w(&mut store, "readout.f.w2".into(), &[ah, 1]);
    b(&mut store, "readout.f.b2".into(), &[1]);
    w(&mut store, "readout.g.w".into(), &[d, c]);
    b(&mut store, "readout.g.b".into(), &[c]);

    Ok(store)
}

/// Tape handles for one forward pass over a batch.
pub struct BatchValues {
    pub probs: Value,
    pub h_final: Value,
    pub x: Value,
    pub gates: Value,
    /// Pre-softmax readout sums; one row per graph, used as the graph
    /// embedding.
    pub logits: Value,
    /// Every bound parameter, for gradient extraction.
    pub bound: BTreeMap<String, Value>,
    /// Attention weights per iteration, one entry per lane (empty in GGNN
    /// mode).
    pub alphas: Vec<Vec<f64>>,
}

struct Bound<'a> {
    map: &'a BTreeMap<String, Value>,
}

impl<'a> Bound<'a> {
    fn get(&self, name: &str) -> Value {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }
}

/// One GRU update over row-stacked node states.
pub fn gru_step(
    tape: &mut Tape,
    bound: &BTreeMap<String, Value>,
    m: Value,
    h: Value,
) -> Result<Value, ModelError> {
    let p = Bound { map: bound };
    let zi = tape.matmul(m, p.get("gru.wz"))?;
    let zh = tape.matmul(h, p.get("gru.uz"))?;
    let z = tape.add(zi, zh)?;
    let z = tape.add_bias(z, p.get("gru.bz"))?;
    let z = tape.sigmoid(z);

    let ri = tape.matmul(m, p.get("gru.wr"))?;
    let rh = tape.matmul(h, p.get("gru.ur"))?;
    let r = tape.add(ri, rh)?;
    let r = tape.add_bias(r, p.get("gru.br"))?;
    let r = tape.sigmoid(r);

    let gated = tape.mul(r, h)?;
    let ci = tape.matmul(m, p.get("gru.wh"))?;
    let ch = tape.matmul(gated, p.get("gru.uh"))?;
    let cand = tape.add(ci, ch)?;
    let cand = tape.add_bias(cand, p.get("gru.bh"))?;
    let cand = tape.tanh(cand);

    let keep = tape.one_minus(z);
    let a = tape.mul(keep, h)?;
    let bpart = tape.mul(z, cand)?;
    Ok(tape.add(a, bpart)?)
}

/// The dynamic propagation matrix for one edge state: reshape of the A-net
/// output scaled by 1/d. Entry (r, c) moves source dimension c into target
/// dimension r; the lane's message is `M h_source`.
pub fn propagation_matrix(
    params: &ParamStore,
    cfg: &ModelConfig,
    h_prime: &Tensor,
    ty: EdgeType,
    dir: Dir,
) -> Tensor {
    let d = cfg.d;
    assert_eq!(h_prime.len(), d);
    let tag = format!("{}.{}", ty.code(), dir.tag());
    let mut tape = Tape::new();
    let hp = tape.constant(Tensor::matrix(1, d, h_prime.data().to_vec()));
    let w = tape.constant(params.get(&format!("anet.{tag}.w")).clone());
    let b = tape.constant(params.get(&format!("anet.{tag}.b")).clone());
    let flat = tape.matmul(hp, w).unwrap();
    let flat = tape.add_bias(flat, b).unwrap();
    let flat = tape.scale(flat, 1.0 / d as f64);
    Tensor::matrix(d, d, tape.value(flat).data().to_vec())
}

/// Initial node features: one embedding row per node kind. Training applies
/// inverted dropout with probability `rho`.
pub fn embed_nodes(
    params: &ParamStore,
    cfg: &ModelConfig,
    g: &FdaGraph,
) -> Result<Tensor, ModelError> {
    let batch = GraphBatch::single(g, cfg)?;
    let mut tape = Tape::new();
    let table = tape.constant(params.get("embed.kind").clone());
    let x = tape.index_rows(table, Arc::new(batch.kinds.clone()))?;
    Ok(tape.value(x).clone())
}

/// One edge-state update: the shared two-layer tanh net over the previous
/// edge state and the lane's source and target node states, row per lane.
pub fn edge_state_update(
    tape: &mut Tape,
    bound: &BTreeMap<String, Value>,
    hp_prev: Value,
    h_src: Value,
    h_dst: Value,
) -> Result<Value, ModelError> {
    let p = Bound { map: bound };
    let cat = tape.concat_cols(&[hp_prev, h_src, h_dst])?;
    let z1 = tape.matmul(cat, p.get("ue.w1"))?;
    let z1 = tape.add_bias(z1, p.get("ue.b1"))?;
    let z1 = tape.tanh(z1);
    let out = tape.matmul(z1, p.get("ue.w2"))?;
    let out = tape.add_bias(out, p.get("ue.b2"))?;
    Ok(tape.tanh(out))
}

fn ggnn_messages(
    tape: &mut Tape,
    bound: &BTreeMap<String, Value>,
    batch: &GraphBatch,
    hs: Value,
    dst_idx: Arc<Vec<usize>>,
) -> Result<Value, ModelError> {
    let p = Bound { map: bound };
    let mut msg_parts = Vec::new();
    for grp in batch.groups.iter().filter(|g| !g.range.is_empty()) {
        let mat = p.get(&format!("ggnn.{}.{}", grp.ty.code(), grp.dir.tag()));
        let hs_g = tape.slice_rows(hs, grp.range.start, grp.range.len())?;
        msg_parts.push(tape.matmul_bt(hs_g, mat)?);
    }
    let msg = tape.concat_rows(&msg_parts)?;
    Ok(tape.scatter_add_rows(msg, dst_idx, batch.num_nodes)?)
}

/// GGNN-mode aggregation: static per-(type, direction) propagation matrices
/// applied to the lane sources and summed into each target node.
pub fn aggregate_messages_ggnn(
    tape: &mut Tape,
    bound: &BTreeMap<String, Value>,
    batch: &GraphBatch,
    h: Value,
) -> Result<Value, ModelError> {
    let src_idx = Arc::new(batch.lane_src.clone());
    let dst_idx = Arc::new(batch.lane_dst.clone());
    let hs = tape.index_rows(h, src_idx)?;
    ggnn_messages(tape, bound, batch, hs, dst_idx)
}

fn two_layer(
    tape: &mut Tape,
    input: Value,
    w1: Value,
    b1: Value,
    w2: Value,
    b2: Value,
) -> Result<Value, ModelError> {
    let h = tape.matmul(input, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.tanh(h);
    let out = tape.matmul(h, w2)?;
    Ok(tape.add_bias(out, b2)?)
}

/// Records the full forward pass (embedding, T propagation iterations,
/// attention readout) for a batch of graphs on the given tape.
pub fn build_forward(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &ModelConfig,
    batch: &GraphBatch,
    train: bool,
    dropout_rho: f64,
    dropout_seed: u64,
) -> Result<BatchValues, ModelError> {
    cfg.validate()?;
    let d = cfg.d;
    let n = batch.num_nodes;
    let lanes = batch.num_lanes();

    let mut bound = BTreeMap::new();
    for (name, tensor) in params.iter() {
        bound.insert(name.clone(), tape.leaf(tensor.clone()));
    }
    let p = Bound { map: &bound };

    // initial features
    let kind_idx = Arc::new(batch.kinds.clone());
    let mut x = tape.index_rows(p.get("embed.kind"), kind_idx)?;
    if train && dropout_rho > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let keep = 1.0 - dropout_rho;
        let mask: Vec<f64> = (0..n * d)
            .map(|_| {
                if rng.random::<f64>() < dropout_rho {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mask = tape.constant(Tensor::matrix(n, d, mask));
        x = tape.mul(x, mask)?;
    }
    let mut h = x;

    let src_idx = Arc::new(batch.lane_src.clone());
    let dst_idx = Arc::new(batch.lane_dst.clone());
    let nonempty: Vec<&super::lanes::LaneGroup> = batch
        .groups
        .iter()
        .filter(|g| !g.range.is_empty())
        .collect();

    // learned initial edge states, one vector per (type, direction)
    let mut hp_val: Option<Value> = if cfg.mode == Mode::Ggann && lanes > 0 {
        let parts: Vec<Value> = nonempty
            .iter()
            .map(|g| {
                let v = p.get(&format!("edge0.{}.{}", g.ty.code(), g.dir.tag()));
                tape.tile_rows(v, g.range.len())
            })
            .collect();
        Some(tape.concat_rows(&parts)?)
    } else {
        None
    };

    let mut alphas: Vec<Vec<f64>> = Vec::new();

    for _ in 0..cfg.t {
        let m = if lanes == 0 {
            tape.constant(Tensor::zeros(vec![n, d]))
        } else {
            let hs = tape.index_rows(h, src_idx.clone())?;
            let ht = tape.index_rows(h, dst_idx.clone())?;
            match cfg.mode {
                Mode::Ggann => {
                    let hp_prev = hp_val.expect("edge states initialized");
                    let hp_new = edge_state_update(tape, &bound, hp_prev, hs, ht)?;
                    hp_val = Some(hp_new);

                    let mut msg_parts = Vec::with_capacity(nonempty.len());
                    let mut score_parts = Vec::with_capacity(nonempty.len());
                    for grp in &nonempty {
                        let tag = format!("{}.{}", grp.ty.code(), grp.dir.tag());
                        let start = grp.range.start;
                        let len = grp.range.len();
                        let hp_g = tape.slice_rows(hp_new, start, len)?;
                        let hs_g = tape.slice_rows(hs, start, len)?;
                        let ht_g = tape.slice_rows(ht, start, len)?;
                        // dynamic propagation matrices, scaled by 1/d
                        let mflat = tape.matmul(hp_g, p.get(&format!("anet.{tag}.w")))?;
                        let mflat = tape.add_bias(mflat, p.get(&format!("anet.{tag}.b")))?;
                        let mflat = tape.scale(mflat, 1.0 / d as f64);
                        msg_parts.push(tape.bmm_vec(mflat, hs_g, d)?);
                        // attention score a(h_target, h_source)
                        let cat2 = tape.concat_cols(&[ht_g, hs_g])?;
                        let s_g = two_layer(
                            tape,
                            cat2,
                            p.get(&format!("att.{tag}.w1")),
                            p.get(&format!("att.{tag}.b1")),
                            p.get(&format!("att.{tag}.w2")),
                            p.get(&format!("att.{tag}.b2")),
                        )?;
                        score_parts.push(s_g);
                    }
                    let msg = tape.concat_rows(&msg_parts)?;
                    let scores = tape.concat_rows(&score_parts)?;

                    // softmax over all in-lanes of each target node; the
                    // per-node max shift is a constant, so gradients are
                    // untouched
                    let svals = tape.value(scores).data().to_vec();
                    let mut peak = vec![f64::NEG_INFINITY; n];
                    for (l, &t) in batch.lane_dst.iter().enumerate() {
                        peak[t] = peak[t].max(svals[l]);
                    }
                    let shift: Vec<f64> = batch.lane_dst.iter().map(|&t| peak[t]).collect();
                    let shift = tape.constant(Tensor::matrix(lanes, 1, shift));
                    let centered = tape.sub(scores, shift)?;
                    let e = tape.exp(centered);
                    let denom = tape.scatter_add_rows(e, dst_idx.clone(), n)?;
                    let per_lane = tape.index_rows(denom, dst_idx.clone())?;
                    let alpha = tape.div(e, per_lane)?;
                    alphas.push(tape.value(alpha).data().to_vec());

                    let weighted = tape.row_mul(msg, alpha)?;
                    tape.scatter_add_rows(weighted, dst_idx.clone(), n)?
                }
                Mode::Ggnn => ggnn_messages(tape, &bound, batch, hs, dst_idx.clone())?,
            }
        };
        h = gru_step(tape, &bound, m, h)?;
    }

    // attention-gated readout
    let cat = tape.concat_cols(&[h, x])?;
    let f1 = tape.matmul(cat, p.get("readout.f.w1"))?;
    let f1 = tape.add_bias(f1, p.get("readout.f.b1"))?;
    let f1 = tape.tanh(f1);
    let f2 = tape.matmul(f1, p.get("readout.f.w2"))?;
    let f2 = tape.add_bias(f2, p.get("readout.f.b2"))?;
    let gates = tape.sigmoid(f2);

    let gvals = tape.matmul(h, p.get("readout.g.w"))?;
    let gvals = tape.add_bias(gvals, p.get("readout.g.b"))?;
    let weighted = tape.row_mul(gvals, gates)?;
    let graph_idx = Arc::new(batch.graph_of_node.clone());
    let logits = tape.scatter_add_rows(weighted, graph_idx, batch.num_graphs)?;
    let probs = tape.softmax_rows(logits);

    Ok(BatchValues {
        probs,
        h_final: h,
        x,
        gates,
        logits,
        bound,
        alphas,
    })
}

/// Forward output for a single graph.
#[derive(Debug, Clone)]
pub struct GraphOutput {
    pub probs: Vec<f64>,
    /// Final hidden states, one row per node.
    pub node_states: Tensor,
    /// Initial features (after dropout when training).
    pub initial_features: Tensor,
    /// Readout gate per node, in (0, 1).
    pub gates: Vec<f64>,
    /// Pre-softmax readout sum.
    pub graph_embedding: Vec<f64>,
    /// Attention weights per iteration per lane (GGANN only).
    pub alphas: Vec<Vec<f64>>,
    /// Lane target nodes, aligned with `alphas` entries.
    pub lane_dst: Vec<usize>,
}

/// Runs the model on one graph.
pub fn forward_graph(
    params: &ParamStore,
    cfg: &ModelConfig,
    g: &FdaGraph,
    train: bool,
    dropout_rho: f64,
    dropout_seed: u64,
) -> Result<GraphOutput, ModelError> {
    let batch = GraphBatch::single(g, cfg)?;
    let mut tape = Tape::new();
    let out = build_forward(
        &mut tape,
        params,
        cfg,
        &batch,
        train,
        dropout_rho,
        dropout_seed,
    )?;
    Ok(GraphOutput {
        probs: tape.value(out.probs).data().to_vec(),
        node_states: tape.value(out.h_final).clone(),
        initial_features: tape.value(out.x).clone(),
        gates: tape.value(out.gates).data().to_vec(),
        graph_embedding: tape.value(out.logits).data().to_vec(),
        alphas: out.alphas,
        lane_dst: batch.lane_dst,
    })
}
