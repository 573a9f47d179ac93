//! Experiment drivers: edge-type ablation, embedding/attention export, the
//! dimension sweep, and CSV formatting.

use std::time::Instant;

use crate::cluster::kmeans;
use crate::config::RunConfig;
use crate::diff::ParamStore;
use crate::frontend::NodeKind;
use crate::graph::{EdgeType, FdaGraph};
use crate::model::{forward_graph, ModelError};
use crate::train::{evaluate, fit, FitResult, Metrics, TrainError};

/// Formats a float with six significant digits, plain notation, trailing
/// zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    let mut s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// `metrics.csv` content: epoch,split,loss,accuracy,seconds.
pub fn metrics_csv(history: &[Metrics]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy,seconds\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch,
            m.split.name(),
            fmt_sig(m.loss),
            fmt_sig(m.accuracy),
            fmt_sig(m.seconds)
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    /// "none" for the full graph, else the dropped edge type name.
    pub variant: String,
    pub overall_accuracy: f64,
    pub per_task_accuracy: Vec<f64>,
}

#[derive(Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// (variant, error) for runs that failed; successful rows still emit.
    pub failures: Vec<(String, String)>,
}

impl AblationReport {
    pub fn to_csv(&self, num_classes: usize) -> String {
        let mut out = String::from("variant,overall_accuracy");
        for c in 0..num_classes {
            out.push_str(&format!(",acc_task_{c}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.variant);
            out.push(',');
            out.push_str(&fmt_sig(row.overall_accuracy));
            for a in &row.per_task_accuracy {
                out.push(',');
                out.push_str(&fmt_sig(*a));
            }
            out.push('\n');
        }
        out
    }
}

fn drop_all(graphs: &[FdaGraph], ty: EdgeType) -> Vec<FdaGraph> {
    graphs.iter().map(|g| g.drop_edge_type(ty)).collect()
}

/// Trains one model per graph variant (full FDA first, then each edge type
/// removed) under identical seeds and configs, and reports test accuracy.
pub fn run_ablation(
    train_graphs: &[FdaGraph],
    valid_graphs: &[FdaGraph],
    test_graphs: &[FdaGraph],
    cfg: &RunConfig,
) -> AblationReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let variants: Vec<(String, Option<EdgeType>)> = std::iter::once(("none".to_string(), None))
        .chain(
            EdgeType::ALL
                .iter()
                .map(|&t| (t.name().to_string(), Some(t))),
        )
        .collect();
    for (name, ty) in variants {
        let (tr, va, te) = match ty {
            None => (
                train_graphs.to_vec(),
                valid_graphs.to_vec(),
                test_graphs.to_vec(),
            ),
            Some(t) => (
                drop_all(train_graphs, t),
                drop_all(valid_graphs, t),
                drop_all(test_graphs, t),
            ),
        };
        let outcome = fit(&tr, &va, &cfg.train, &cfg.model).and_then(|res| {
            let m = evaluate(&res.params, &cfg.model, &te, cfg.train.threads)?;
            Ok((res, m))
        });
        match outcome {
            Ok((_, m)) => rows.push(AblationRow {
                variant: name,
                overall_accuracy: m.accuracy,
                per_task_accuracy: m.per_class,
            }),
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    AblationReport { rows, failures }
}

/// Mean final hidden state per node kind over a split, with k-means cluster
/// ids, plus per-graph embeddings (the pre-softmax readout sums).
pub struct EmbeddingsExport {
    /// (kind, cluster id, mean hidden state).
    pub kind_rows: Vec<(NodeKind, usize, Vec<f64>)>,
    /// (source_id, label, graph embedding).
    pub graph_rows: Vec<(String, Option<usize>, Vec<f64>)>,
}

pub fn export_embeddings(
    params: &ParamStore,
    cfg: &RunConfig,
    graphs: &[FdaGraph],
    kmeans_k: usize,
    kmeans_seed: u64,
) -> Result<EmbeddingsExport, ModelError> {
    let d = cfg.model.d;
    let mut sums = vec![vec![0.0f64; d]; NodeKind::COUNT];
    let mut counts = [0usize; NodeKind::COUNT];
    let mut graph_rows = Vec::with_capacity(graphs.len());
    for g in graphs {
        let out = forward_graph(params, &cfg.model, g, false, 0.0, 0)?;
        for (i, &kind) in g.kinds.iter().enumerate() {
            counts[kind as usize] += 1;
            for (s, v) in sums[kind as usize]
                .iter_mut()
                .zip(&out.node_states.data()[i * d..(i + 1) * d])
            {
                *s += v;
            }
        }
        graph_rows.push((g.source_id.clone(), g.label, out.graph_embedding));
    }
    let mut kinds_present = Vec::new();
    let mut points = Vec::new();
    for k in 0..NodeKind::COUNT {
        if counts[k] > 0 {
            kinds_present.push(NodeKind::from_code(k as u16).unwrap());
            points.push(
                sums[k]
                    .iter()
                    .map(|s| s / counts[k] as f64)
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let k = kmeans_k.min(points.len()).max(1);
    let clusters = kmeans(&points, k, kmeans_seed, 100).expect("k <= points by construction");
    let kind_rows = kinds_present
        .into_iter()
        .zip(clusters.assignments.iter())
        .zip(points.iter())
        .map(|((kind, &c), p)| (kind, c, p.clone()))
        .collect();
    Ok(EmbeddingsExport {
        kind_rows,
        graph_rows,
    })
}

pub fn embeddings_csv(export: &EmbeddingsExport, d: usize) -> String {
    let mut out = String::from("kind,cluster");
    for i in 0..d {
        out.push_str(&format!(",h_{i}"));
    }
    out.push('\n');
    for (kind, cluster, h) in &export.kind_rows {
        out.push_str(&format!("{},{}", kind.name(), cluster));
        for v in h {
            out.push(',');
            out.push_str(&fmt_sig(*v));
        }
        out.push('\n');
    }
    out
}

pub fn graph_embeddings_csv(export: &EmbeddingsExport, num_classes: usize) -> String {
    let mut out = String::from("source_id,label");
    for i in 0..num_classes {
        out.push_str(&format!(",e_{i}"));
    }
    out.push('\n');
    for (source_id, label, e) in &export.graph_rows {
        out.push_str(source_id);
        out.push(',');
        match label {
            Some(l) => out.push_str(&l.to_string()),
            None => out.push_str(""),
        }
        for v in e {
            out.push(',');
            out.push_str(&fmt_sig(*v));
        }
        out.push('\n');
    }
    out
}

/// Per-node readout gates for one graph: (node id, kind, gate in (0,1)).
pub fn export_attention(
    params: &ParamStore,
    cfg: &RunConfig,
    graph: &FdaGraph,
) -> Result<Vec<(usize, NodeKind, f64)>, ModelError> {
    let out = forward_graph(params, &cfg.model, graph, false, 0.0, 0)?;
    Ok(graph
        .kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| (i, NodeKind::from_code(k).unwrap(), out.gates[i]))
        .collect())
}

pub fn attention_csv(rows: &[(usize, NodeKind, f64)]) -> String {
    let mut out = String::from("node,kind,gate\n");
    for (node, kind, gate) in rows {
        out.push_str(&format!("{},{},{}\n", node, kind.name(), fmt_sig(*gate)));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub d: usize,
    pub train_graphs_per_sec: f64,
    pub eval_graphs_per_sec: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
}

/// Trains at each hidden dimension and measures throughput plus final
/// losses. Training throughput counts processed training graphs per wall
/// second over the whole fit (per-epoch validation included).
pub fn sweep_d(
    train_graphs: &[FdaGraph],
    valid_graphs: &[FdaGraph],
    test_graphs: &[FdaGraph],
    base: &RunConfig,
    d_list: &[usize],
) -> Result<Vec<SweepRow>, TrainError> {
    let mut rows = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let mut cfg = base.clone();
        cfg.model = cfg.model.with_d(d);
        let t0 = Instant::now();
        let res: FitResult = fit(train_graphs, valid_graphs, &cfg.train, &cfg.model)?;
        let train_secs = t0.elapsed().as_secs_f64();
        let processed = (res.epochs_run * train_graphs.len()) as f64;

        let t1 = Instant::now();
        let test = evaluate(&res.params, &cfg.model, test_graphs, cfg.train.threads)?;
        let eval_secs = t1.elapsed().as_secs_f64();

        let final_train_loss = res
            .history
            .iter()
            .rev()
            .find(|m| m.split == crate::train::Split::Train)
            .map(|m| m.loss)
            .unwrap_or(f64::NAN);
        rows.push(SweepRow {
            d,
            train_graphs_per_sec: processed / train_secs.max(1e-9),
            eval_graphs_per_sec: test_graphs.len() as f64 / eval_secs.max(1e-9),
            final_train_loss,
            final_test_loss: test.loss,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "d,train_graphs_per_sec,eval_graphs_per_sec,final_train_loss,final_test_loss\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.d,
            fmt_sig(r.train_graphs_per_sec),
            fmt_sig(r.eval_graphs_per_sec),
            fmt_sig(r.final_train_loss),
            fmt_sig(r.final_test_loss)
        ));
    }
    out
}
