//! The fit/evaluate loop over FDA graphs.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::diff::{ParamStore, Tape, Tensor};
use crate::graph::FdaGraph;
use crate::model::{build_forward, register_params, GraphBatch, ModelConfig};

use super::{adam_step, decays, lr_at, AdamState, Metrics, Split, TrainConfig, TrainError};

/// Graphs evaluated per tape. Fixed so that results do not depend on the
/// thread count: chunks are always reduced in index order.
const CHUNK: usize = 16;

pub struct FitResult {
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub history: Vec<Metrics>,
    pub epochs_run: usize,
}

fn check_labels(
    graphs: &[FdaGraph],
    num_classes: usize,
    name: &'static str,
) -> Result<(), TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptySplit(name));
    }
    for g in graphs {
        match g.label {
            None => {
                return Err(TrainError::MissingLabel {
                    source_id: g.source_id.clone(),
                })
            }
            Some(l) if l >= num_classes => {
                return Err(TrainError::LabelOutOfRange {
                    source_id: g.source_id.clone(),
                    label: l,
                    num_classes,
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

struct ChunkResult {
    grads: BTreeMap<String, Tensor>,
    ce_sum: f64,
    correct: usize,
}

/// Forward + backward over one chunk; cross-entropy is summed over the
/// chunk's graphs, the L2 term is applied analytically by the caller.
fn train_chunk(
    params: &ParamStore,
    mcfg: &ModelConfig,
    graphs: &[&FdaGraph],
    rho: f64,
    dropout_seed: u64,
) -> Result<ChunkResult, TrainError> {
    let batch = GraphBatch::new(graphs, mcfg)?;
    let labels: Vec<usize> = batch.labels.iter().map(|l| l.unwrap()).collect();
    let mut tape = Tape::new();
    let out = build_forward(&mut tape, params, mcfg, &batch, true, rho, dropout_seed)?;
    let picked = tape.pick_per_row(out.probs, Arc::new(labels.clone()))?;
    let lp = tape.ln(picked);
    let neg = tape.scale(lp, -1.0);
    let loss = tape.sum_all(neg);
    let ce_sum = tape.value(loss).item();

    let correct = {
        let probs = tape.value(out.probs);
        let c = probs.cols();
        labels
            .iter()
            .enumerate()
            .filter(|(g, &l)| {
                let row = &probs.data()[g * c..(g + 1) * c];
                argmax(row) == l
            })
            .count()
    };

    let mut grads_out = tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, v) in &out.bound {
        if let Some(g) = grads_out.take(*v) {
            grads.insert(name.clone(), g);
        }
    }
    Ok(ChunkResult {
        grads,
        ce_sum,
        correct,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn merge_grads(total: &mut BTreeMap<String, Tensor>, part: BTreeMap<String, Tensor>) {
    for (name, g) in part {
        match total.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                total.insert(name, g);
            }
        }
    }
}

/// Gradients of the mean loss over one batch of graphs. Chunks run serially
/// or in parallel but always reduce in chunk order, so the result does not
/// depend on the thread count.
fn batch_gradients(
    params: &ParamStore,
    mcfg: &ModelConfig,
    graphs: &[&FdaGraph],
    cfg: &TrainConfig,
    seed_base: u64,
) -> Result<(BTreeMap<String, Tensor>, f64, usize), TrainError> {
    let chunks: Vec<(usize, &[&FdaGraph])> = graphs.chunks(CHUNK).enumerate().collect();
    let results: Vec<Result<ChunkResult, TrainError>> = if cfg.threads == 1 {
        chunks
            .iter()
            .map(|(i, c)| train_chunk(params, mcfg, c, cfg.dropout_rho, mix(seed_base, *i as u64)))
            .collect()
    } else {
        chunks
            .par_iter()
            .map(|(i, c)| train_chunk(params, mcfg, c, cfg.dropout_rho, mix(seed_base, *i as u64)))
            .collect()
    };

    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut ce_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let r = r?;
        merge_grads(&mut grads, r.grads);
        ce_sum += r.ce_sum;
        correct += r.correct;
    }

    let n = graphs.len() as f64;
    for g in grads.values_mut() {
        for x in g.data_mut() {
            *x /= n;
        }
    }
    // analytic L2 gradient: d(lambda * ||W||^2)/dW = 2 lambda W
    if cfg.l2_lambda > 0.0 {
        for (name, theta) in params.iter() {
            if decays(name, theta.shape(), cfg.l2_all) {
                let entry = grads
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(theta.shape().to_vec()));
                for (g, w) in entry.data_mut().iter_mut().zip(theta.data()) {
                    *g += 2.0 * cfg.l2_lambda * w;
                }
            }
        }
    }
    Ok((grads, ce_sum, correct))
}

fn mix(a: u64, b: u64) -> u64 {
    a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct EvalChunk {
    ce_sum: f64,
    hits: Vec<(usize, bool)>,
}

/// Accuracy and mean cross-entropy of `params` over a split. Dropout is off,
/// so the result is deterministic regardless of the configured rate.
pub fn evaluate(
    params: &ParamStore,
    mcfg: &ModelConfig,
    graphs: &[FdaGraph],
    threads: usize,
) -> Result<Metrics, TrainError> {
    check_labels(graphs, mcfg.num_classes, "eval")?;
    let refs: Vec<&FdaGraph> = graphs.iter().collect();
    let chunks: Vec<&[&FdaGraph]> = refs.chunks(CHUNK).collect();
    let eval_chunk = |chunk: &&[&FdaGraph]| -> Result<EvalChunk, TrainError> {
        let batch = GraphBatch::new(chunk, mcfg)?;
        let labels: Vec<usize> = batch.labels.iter().map(|l| l.unwrap()).collect();
        let mut tape = Tape::new();
        let out = build_forward(&mut tape, params, mcfg, &batch, false, 0.0, 0)?;
        let picked = tape.pick_per_row(out.probs, Arc::new(labels.clone()))?;
        let lp = tape.ln(picked);
        let neg = tape.scale(lp, -1.0);
        let loss = tape.sum_all(neg);
        let probs = tape.value(out.probs);
        let c = probs.cols();
        let hits = labels
            .iter()
            .enumerate()
            .map(|(g, &l)| (l, argmax(&probs.data()[g * c..(g + 1) * c]) == l))
            .collect();
        Ok(EvalChunk {
            ce_sum: tape.value(loss).item(),
            hits,
        })
    };
    let results: Vec<Result<EvalChunk, TrainError>> = if threads == 1 {
        chunks.iter().map(eval_chunk).collect()
    } else {
        chunks.par_iter().map(eval_chunk).collect()
    };

    let mut ce_sum = 0.0;
    let mut class_total = vec![0usize; mcfg.num_classes];
    let mut class_hit = vec![0usize; mcfg.num_classes];
    for r in results {
        let r = r?;
        ce_sum += r.ce_sum;
        for (label, hit) in r.hits {
            class_total[label] += 1;
            class_hit[label] += hit as usize;
        }
    }
    let total: usize = class_total.iter().sum();
    let correct: usize = class_hit.iter().sum();
    let per_class = class_total
        .iter()
        .zip(class_hit.iter())
        .map(|(&t, &h)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok(Metrics {
        epoch: 0,
        split: Split::Test,
        loss: ce_sum / total as f64,
        accuracy: correct as f64 / total as f64,
        per_class,
        seconds: 0.0,
    })
}

/// Trains with Adam + linear LR decay, keeping the best-validation-accuracy
/// parameters and stopping after `early_stop_patience` stale evaluations.
pub fn fit(
    train_graphs: &[FdaGraph],
    valid_graphs: &[FdaGraph],
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<FitResult, TrainError> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    cfg.validate()?;
    mcfg.validate()?;
    check_labels(train_graphs, mcfg.num_classes, "train")?;
    check_labels(valid_graphs, mcfg.num_classes, "valid")?;

    let mut params = register_params(mcfg, cfg.seed)?;
    let mut adam = AdamState::new();
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let lr = lr_at(epoch, cfg.epochs, cfg.lr_initial, cfg.decay_f);
        let start = Instant::now();

        let mut order: Vec<usize> = (0..train_graphs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let batches = plan_batches(&order, train_graphs, cfg);
        let mut epoch_ce = 0.0;
        let mut epoch_correct = 0usize;
        for (bi, batch_idx) in batches.iter().enumerate() {
            let graphs: Vec<&FdaGraph> = batch_idx.iter().map(|&i| &train_graphs[i]).collect();
            let seed_base = mix(mix(cfg.seed, epoch as u64), 0x1000_0000 + bi as u64);
            let (grads, ce, correct) = batch_gradients(&params, mcfg, &graphs, cfg, seed_base)?;
            adam_step(
                &mut params,
                &grads,
                &mut adam,
                lr,
                cfg.beta1,
                cfg.beta2,
                cfg.epsilon,
            );
            epoch_ce += ce;
            epoch_correct += correct;
        }
        let train_secs = start.elapsed().as_secs_f64();

        let eval_start = Instant::now();
        let mut valid = evaluate(&params, mcfg, valid_graphs, cfg.threads)?;
        let eval_secs = eval_start.elapsed().as_secs_f64();

        // serial mode suppresses wall time so runs are byte-reproducible
        let timing = |secs: f64| if cfg.threads == 1 { 0.0 } else { secs };
        history.push(Metrics {
            epoch,
            split: Split::Train,
            loss: epoch_ce / train_graphs.len() as f64,
            accuracy: epoch_correct as f64 / train_graphs.len() as f64,
            per_class: vec![],
            seconds: timing(train_secs),
        });
        valid.epoch = epoch;
        valid.split = Split::Valid;
        valid.seconds = timing(eval_secs);
        let acc = valid.accuracy;
        history.push(valid);

        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(FitResult {
        params: best_params,
        best_epoch,
        best_valid_accuracy: best_acc,
        history,
        epochs_run,
    })
}

/// Splits a shuffled index order into batches by graph count, or by node
/// budget when `batch_nodes` is set.
fn plan_batches(order: &[usize], graphs: &[FdaGraph], cfg: &TrainConfig) -> Vec<Vec<usize>> {
    match cfg.batch_nodes {
        None => order.chunks(cfg.batch_graphs).map(|c| c.to_vec()).collect(),
        Some(budget) => {
            let mut out = Vec::new();
            let mut cur = Vec::new();
            let mut nodes = 0usize;
            for &i in order {
                if !cur.is_empty() && nodes + graphs[i].num_nodes > budget {
                    out.push(std::mem::take(&mut cur));
                    nodes = 0;
                }
                nodes += graphs[i].num_nodes;
                cur.push(i);
            }
            if !cur.is_empty() {
                out.push(cur);
            }
            out
        }
    }
}
