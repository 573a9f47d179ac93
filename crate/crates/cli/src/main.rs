//! `fda-ggann`: parse MiniC, build FDA graphs, synthesize corpora, train and
//! evaluate the classifier, and run the experiment drivers.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use fda_ggann_core::checkpoint::{load_checkpoint, save_checkpoint};
use fda_ggann_core::config::RunConfig;
use fda_ggann_core::corpus::{
    build_graphs, ingest, split, split_graphs, synthesize, write_corpus, SkipRecord, SynthConfig,
};
use fda_ggann_core::frontend::{ast_to_json, parse_source};
use fda_ggann_core::graph::{build_fda, FdaGraph};
use fda_ggann_core::model::{Mode, ModelConfig};
use fda_ggann_core::reports;
use fda_ggann_core::train::{evaluate, fit, TrainConfig};

#[derive(Parser)]
#[command(
    name = "fda-ggann",
    version,
    about = "Program classification over FDA graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ggann,
    Ggnn,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Ggann => Mode::Ggann,
            ModeArg::Ggnn => Mode::Ggnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Corpus directory (task subdirectories of .mc files), or graph JSON
    /// files with --from-graphs.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ggann")]
    mode: ModeArg,
    /// Hidden dimension.
    #[arg(long, default_value_t = ModelConfig::DESK_D)]
    d: usize,
    /// Propagation iterations.
    #[arg(long, default_value_t = ModelConfig::DEFAULT_T)]
    t: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Batch size in graphs.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Batch by node budget instead of graph count.
    #[arg(long)]
    batch_nodes: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Initial learning rate l.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Linear decay target factor F: the last epoch runs at lr * F.
    #[arg(long, default_value_t = 0.1)]
    decay_f: f64,
    /// L2 coefficient over weight matrices.
    #[arg(long, default_value_t = 0.0005)]
    l2: f64,
    /// Include the embedding table in the L2 term.
    #[arg(long, default_value_t = false)]
    l2_all: bool,
    /// Input dropout probability.
    #[arg(long, default_value_t = 0.6)]
    dropout: f64,
    /// Early-stopping patience in evaluations.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Worker threads; 1 is the serial, byte-reproducible mode.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Treat --data as a directory of graph JSON files instead of sources.
    #[arg(long, default_value_t = false)]
    from_graphs: bool,
    /// Disable reverse propagation lanes.
    #[arg(long, default_value_t = false)]
    unidirectional: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse one MiniC file and print its AST JSON.
    Parse { file: PathBuf },
    /// Build the FDA graph of one MiniC file.
    Graph {
        file: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Class label to embed in the graph.
        #[arg(long)]
        label: Option<usize>,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long, default_value_t = 8)]
        tasks: usize,
        #[arg(long, default_value_t = 120)]
        per_task: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Near-duplicate task groups instead of the distinct set.
        #[arg(long, default_value_t = false)]
        similar: bool,
    },
    /// Train a classifier and write the best checkpoint.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV path.
        #[arg(long, default_value = "metrics.csv")]
        metrics: PathBuf,
    },
    /// Evaluate a checkpoint on one split of a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Retrain with each edge type removed and compare accuracies.
    Ablate {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Export per-kind mean hidden states (k-means clustered) and per-graph
    /// embeddings.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "embeddings.csv")]
        out: PathBuf,
        /// Per-graph embedding CSV path.
        #[arg(long)]
        graph_out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        kmeans_seed: u64,
    },
    /// Export per-node readout gates for one program.
    Attention {
        #[arg(long)]
        ckpt: PathBuf,
        file: PathBuf,
        #[arg(long, default_value = "attention.csv")]
        out: PathBuf,
    },
    /// Train at several hidden dimensions and report throughput and loss.
    SweepD {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated hidden dimensions, e.g. 8,16,32,64.
        #[arg(long, value_delimiter = ',', required = true)]
        d: Vec<usize>,
        #[arg(long, value_enum, default_value = "ggann")]
        mode: ModeArg,
        #[arg(long, default_value_t = ModelConfig::DEFAULT_T)]
        t: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0.6)]
        dropout: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = false)]
        from_graphs: bool,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn report_skips(what: &str, skips: &[SkipRecord]) {
    if !skips.is_empty() {
        eprintln!("{}: skipped {} file(s)", what, skips.len());
        for s in skips {
            eprintln!("  {}: {}", s.path.display(), s.reason);
        }
    }
}

/// (train, valid, test, num_classes).
type LoadedSplits = (Vec<FdaGraph>, Vec<FdaGraph>, Vec<FdaGraph>, usize);

/// Corpus splits as graphs, either from sources or from pre-built graph
/// JSON files.
fn load_splits(flags: &TrainFlags) -> Result<LoadedSplits, Box<dyn Error>> {
    if flags.from_graphs {
        let mut files: Vec<PathBuf> = walk_json(&flags.data)?;
        files.sort();
        if files.is_empty() {
            return Err(format!("no .json graphs under {}", flags.data.display()).into());
        }
        let mut graphs = Vec::with_capacity(files.len());
        for f in files {
            let g = FdaGraph::from_json(&fs::read_to_string(&f)?)
                .map_err(|e| format!("{}: {e}", f.display()))?;
            if g.label.is_none() {
                return Err(format!("{}: graph has no label", f.display()).into());
            }
            graphs.push(g);
        }
        let num_classes = graphs.iter().filter_map(|g| g.label).max().unwrap() + 1;
        let (train, valid, test) = split_graphs(&graphs, flags.seed)?;
        Ok((train, valid, test, num_classes))
    } else {
        let (programs, skips) = ingest(&flags.data)?;
        report_skips("ingest", &skips);
        let num_classes = programs.iter().map(|p| p.task_id).max().unwrap_or(0) + 1;
        let splits = split(&programs, flags.seed)?;
        let (train, s1) = build_graphs(&splits.train);
        let (valid, s2) = build_graphs(&splits.valid);
        let (test, s3) = build_graphs(&splits.test);
        report_skips("graph construction", &s1);
        report_skips("graph construction", &s2);
        report_skips("graph construction", &s3);
        Ok((train, valid, test, num_classes))
    }
}

fn walk_json(dir: &Path) -> Result<Vec<PathBuf>, Box<dyn Error>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                out.push(path);
            }
        }
    }
    Ok(out)
}

fn run_config(flags: &TrainFlags, num_classes: usize) -> RunConfig {
    let mut model = ModelConfig::desk(num_classes).with_d(flags.d);
    model.t = flags.t;
    model.mode = flags.mode.into();
    model.bidirectional = !flags.unidirectional;
    let train = TrainConfig {
        epochs: flags.epochs,
        batch_graphs: flags.batch,
        batch_nodes: flags.batch_nodes,
        lr_initial: flags.lr,
        decay_f: flags.decay_f,
        l2_lambda: flags.l2,
        l2_all: flags.l2_all,
        dropout_rho: flags.dropout,
        early_stop_patience: flags.patience,
        seed: flags.seed,
        threads: flags.threads,
        ..TrainConfig::desk()
    };
    RunConfig { model, train }
}

fn init_threads(threads: usize) {
    if threads > 1 {
        // ignore failures from repeated initialization in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn split_of<'a>(
    arg: SplitArg,
    train: &'a [FdaGraph],
    valid: &'a [FdaGraph],
    test: &'a [FdaGraph],
) -> &'a [FdaGraph] {
    match arg {
        SplitArg::Train => train,
        SplitArg::Valid => valid,
        SplitArg::Test => test,
    }
}

fn run(cmd: Command) -> Result<(), Box<dyn Error>> {
    match cmd {
        Command::Parse { file } => {
            let source = fs::read_to_string(&file)?;
            let ast = parse_source(&source)?;
            println!("{}", ast_to_json(&ast));
        }
        Command::Graph { file, out, label } => {
            let source = fs::read_to_string(&file)?;
            let ast = parse_source(&source)?;
            let mut g = build_fda(&ast, file.to_string_lossy().as_ref())?;
            g.label = label;
            let stats = g.stats();
            eprintln!(
                "{}: {} nodes, {} edges ({})",
                file.display(),
                stats.nodes,
                stats.edges,
                fda_ggann_core::EdgeType::ALL
                    .iter()
                    .map(|&t| format!("{}={}", t.name(), stats.count(t)))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            match out {
                Some(path) => fs::write(path, g.to_json())?,
                None => println!("{}", g.to_json()),
            }
        }
        Command::Synth {
            tasks,
            per_task,
            seed,
            out,
            similar,
        } => {
            let cfg = SynthConfig {
                num_tasks: tasks,
                per_task,
                seed,
                similar,
                ..SynthConfig::default()
            };
            let programs = synthesize(&cfg);
            write_corpus(&out, &programs, &cfg)?;
            println!(
                "wrote {} programs across {} tasks to {}",
                programs.len(),
                tasks,
                out.display()
            );
        }
        Command::Train {
            flags,
            out,
            metrics,
        } => {
            init_threads(flags.threads);
            let (train_g, valid_g, test_g, num_classes) = load_splits(&flags)?;
            let cfg = run_config(&flags, num_classes);
            println!(
                "training {} on {} train / {} valid graphs ({} classes, d={}, T={})",
                cfg.model.mode.name(),
                train_g.len(),
                valid_g.len(),
                num_classes,
                cfg.model.d,
                cfg.model.t
            );
            let res = fit(&train_g, &valid_g, &cfg.train, &cfg.model)?;
            fs::write(&metrics, reports::metrics_csv(&res.history))?;
            save_checkpoint(&out, &cfg, &res.params)?;
            let test = evaluate(&res.params, &cfg.model, &test_g, cfg.train.threads)?;
            println!(
                "best valid accuracy {} at epoch {} ({} epochs run); test accuracy {}",
                reports::fmt_sig(res.best_valid_accuracy),
                res.best_epoch,
                res.epochs_run,
                reports::fmt_sig(test.accuracy)
            );
            println!(
                "checkpoint: {}; metrics: {}",
                out.display(),
                metrics.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            split: which,
            threads,
        } => {
            init_threads(threads);
            let (cfg, params) = load_checkpoint(&ckpt)?;
            let flags = TrainFlags {
                data,
                mode: ModeArg::Ggann,
                d: cfg.model.d,
                t: cfg.model.t,
                epochs: 1,
                batch: cfg.train.batch_graphs,
                batch_nodes: None,
                seed: cfg.train.seed,
                lr: cfg.train.lr_initial,
                decay_f: cfg.train.decay_f,
                l2: cfg.train.l2_lambda,
                l2_all: cfg.train.l2_all,
                dropout: cfg.train.dropout_rho,
                patience: cfg.train.early_stop_patience,
                threads,
                from_graphs: false,
                unidirectional: !cfg.model.bidirectional,
            };
            let (train_g, valid_g, test_g, _) = load_splits(&flags)?;
            let graphs = split_of(which, &train_g, &valid_g, &test_g);
            let m = evaluate(&params, &cfg.model, graphs, threads)?;
            println!(
                "{} graphs: accuracy {}, loss {}",
                graphs.len(),
                reports::fmt_sig(m.accuracy),
                reports::fmt_sig(m.loss)
            );
            for (c, a) in m.per_class.iter().enumerate() {
                println!("  class {c}: {}", reports::fmt_sig(*a));
            }
        }
        Command::Ablate { flags, out } => {
            init_threads(flags.threads);
            let (train_g, valid_g, test_g, num_classes) = load_splits(&flags)?;
            let cfg = run_config(&flags, num_classes);
            let report = reports::run_ablation(&train_g, &valid_g, &test_g, &cfg);
            for (variant, err) in &report.failures {
                eprintln!("variant {variant} failed: {err}");
            }
            fs::write(&out, report.to_csv(num_classes))?;
            for row in &report.rows {
                println!(
                    "{:<10} {}",
                    row.variant,
                    reports::fmt_sig(row.overall_accuracy)
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Embed {
            ckpt,
            data,
            split: which,
            out,
            graph_out,
            k,
            kmeans_seed,
        } => {
            let (cfg, params) = load_checkpoint(&ckpt)?;
            let flags = TrainFlags {
                data,
                mode: ModeArg::Ggann,
                d: cfg.model.d,
                t: cfg.model.t,
                epochs: 1,
                batch: cfg.train.batch_graphs,
                batch_nodes: None,
                seed: cfg.train.seed,
                lr: cfg.train.lr_initial,
                decay_f: cfg.train.decay_f,
                l2: cfg.train.l2_lambda,
                l2_all: cfg.train.l2_all,
                dropout: cfg.train.dropout_rho,
                patience: cfg.train.early_stop_patience,
                threads: 1,
                from_graphs: false,
                unidirectional: !cfg.model.bidirectional,
            };
            let (train_g, valid_g, test_g, _) = load_splits(&flags)?;
            let graphs = split_of(which, &train_g, &valid_g, &test_g);
            let export = reports::export_embeddings(&params, &cfg, graphs, k, kmeans_seed)?;
            fs::write(&out, reports::embeddings_csv(&export, cfg.model.d))?;
            println!(
                "wrote {} kind rows to {}",
                export.kind_rows.len(),
                out.display()
            );
            if let Some(gpath) = graph_out {
                fs::write(
                    &gpath,
                    reports::graph_embeddings_csv(&export, cfg.model.num_classes),
                )?;
                println!(
                    "wrote {} graph rows to {}",
                    export.graph_rows.len(),
                    gpath.display()
                );
            }
        }
        Command::Attention { ckpt, file, out } => {
            let (cfg, params) = load_checkpoint(&ckpt)?;
            let source = fs::read_to_string(&file)?;
            let ast = parse_source(&source)?;
            let g = build_fda(&ast, file.to_string_lossy().as_ref())?;
            let rows = reports::export_attention(&params, &cfg, &g)?;
            fs::write(&out, reports::attention_csv(&rows))?;
            println!("wrote {} node gates to {}", rows.len(), out.display());
        }
        Command::SweepD {
            data,
            d,
            mode,
            t,
            epochs,
            batch,
            seed,
            lr,
            dropout,
            threads,
            from_graphs,
            out,
        } => {
            init_threads(threads);
            let flags = TrainFlags {
                data,
                mode,
                d: *d.first().unwrap_or(&ModelConfig::DESK_D),
                t,
                epochs,
                batch,
                batch_nodes: None,
                seed,
                lr,
                decay_f: 0.1,
                l2: 0.0005,
                l2_all: false,
                dropout,
                patience: epochs,
                threads,
                from_graphs,
                unidirectional: false,
            };
            let (train_g, valid_g, test_g, num_classes) = load_splits(&flags)?;
            let cfg = run_config(&flags, num_classes);
            let rows = reports::sweep_d(&train_g, &valid_g, &test_g, &cfg, &d)?;
            fs::write(&out, reports::sweep_csv(&rows))?;
            for r in &rows {
                println!(
                    "d={:<4} train {} g/s, eval {} g/s, final train loss {}, test loss {}",
                    r.d,
                    reports::fmt_sig(r.train_graphs_per_sec),
                    reports::fmt_sig(r.eval_graphs_per_sec),
                    reports::fmt_sig(r.final_train_loss),
                    reports::fmt_sig(r.final_test_loss)
                );
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
