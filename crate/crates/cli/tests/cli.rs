//! End-to-end checks of the command-line surface.

use std::fs;
use std::path::Path;
use std::process::Command;

use fda_ggann_core::frontend::ast_from_json;
use fda_ggann_core::graph::FdaGraph;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fda-ggann"))
}

fn write_mc(dir: &Path, rel: &str, source: &str) {
    let path = dir.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, source).unwrap();
}

#[test]
fn parse_outputs_valid_ast_json() {
    let dir = tempfile::tempdir().unwrap();
    write_mc(dir.path(), "p.mc", "int f(int x){ return x + 1; }");
    let out = bin()
        .arg("parse")
        .arg(dir.path().join("p.mc"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let ast = ast_from_json(std::str::from_utf8(&out.stdout).unwrap().trim()).unwrap();
    // TU, FunctionDecl, ParmVarDecl, CompoundStmt, ReturnStmt, +, x, 1
    assert_eq!(ast.nodes.len(), 8);
}

#[test]
fn graph_validates_against_schema() {
    let dir = tempfile::tempdir().unwrap();
    write_mc(
        dir.path(),
        "p.mc",
        "int f(int x){ int y = x * 2; return y; }",
    );
    let gpath = dir.path().join("g.json");
    let out = bin()
        .arg("graph")
        .arg(dir.path().join("p.mc"))
        .arg("--out")
        .arg(&gpath)
        .arg("--label")
        .arg("3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let g = FdaGraph::from_json(&fs::read_to_string(&gpath).unwrap()).unwrap();
    assert_eq!(g.label, Some(3));
    assert!(g.num_nodes > 0);
}

#[test]
fn domain_errors_exit_one_and_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write_mc(dir.path(), "bad.mc", "int f({");
    let out = bin()
        .arg("parse")
        .arg(dir.path().join("bad.mc"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    // empty program builds no graph
    write_mc(dir.path(), "empty.mc", "");
    let out = bin()
        .arg("graph")
        .arg(dir.path().join("empty.mc"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().arg("train").arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

/// Converting every source to a graph file and training from those graphs
/// must equal training from the sources directly.
#[test]
fn train_from_graphs_matches_train_from_sources() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(bin()
        .args([
            "synth",
            "--tasks",
            "3",
            "--per-task",
            "5",
            "--seed",
            "3",
            "--out"
        ])
        .arg(&corpus)
        .status()
        .unwrap()
        .success());

    // mirror the corpus as graph JSON files
    let graphs = dir.path().join("graphs");
    for task in 0..3usize {
        let task_dir = corpus.join(task.to_string());
        let mut files: Vec<_> = fs::read_dir(&task_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        for f in files {
            let out_path = graphs
                .join(task.to_string())
                .join(f.file_name().unwrap())
                .with_extension("json");
            fs::create_dir_all(out_path.parent().unwrap()).unwrap();
            assert!(bin()
                .arg("graph")
                .arg(&f)
                .arg("--out")
                .arg(&out_path)
                .arg("--label")
                .arg(task.to_string())
                .status()
                .unwrap()
                .success());
        }
    }

    let train = |args: &[&str], ckpt: &Path, metrics: &Path| {
        let mut cmd = bin();
        cmd.args([
            "train", "--epochs", "2", "--d", "8", "--t", "2", "--batch", "8",
        ]);
        cmd.args(["--lr", "0.002", "--seed", "11", "--threads", "1"]);
        cmd.args(args);
        cmd.arg("--out").arg(ckpt).arg("--metrics").arg(metrics);
        assert!(cmd.status().unwrap().success());
    };
    let ckpt_src = dir.path().join("src.json");
    let met_src = dir.path().join("src.csv");
    train(&["--data", corpus.to_str().unwrap()], &ckpt_src, &met_src);
    let ckpt_g = dir.path().join("g.json");
    let met_g = dir.path().join("g.csv");
    train(
        &["--data", graphs.to_str().unwrap(), "--from-graphs"],
        &ckpt_g,
        &met_g,
    );
    assert_eq!(
        fs::read(&met_src).unwrap(),
        fs::read(&met_g).unwrap(),
        "metrics differ between source and graph pipelines"
    );
    assert_eq!(
        fs::read(&ckpt_src).unwrap(),
        fs::read(&ckpt_g).unwrap(),
        "checkpoints differ between source and graph pipelines"
    );
}

/// Full desk loop: synth, train, eval, embed, attention, sweep.
#[test]
fn report_outputs_have_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(bin()
        .args([
            "synth",
            "--tasks",
            "3",
            "--per-task",
            "6",
            "--seed",
            "5",
            "--out"
        ])
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    let ckpt = dir.path().join("ckpt.json");
    assert!(bin()
        .args(["train", "--data"])
        .arg(&corpus)
        .args([
            "--epochs",
            "2",
            "--d",
            "8",
            "--t",
            "2",
            "--batch",
            "8",
            "--seed",
            "5",
            "--threads",
            "1",
            "--out",
        ])
        .arg(&ckpt)
        .arg("--metrics")
        .arg(dir.path().join("m.csv"))
        .status()
        .unwrap()
        .success());

    let metrics = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = metrics.trim_end().lines().collect();
    assert_eq!(lines[0], "epoch,split,loss,accuracy,seconds");
    assert_eq!(lines.len(), 1 + 2 * 2, "2 rows per epoch");

    assert!(bin()
        .args(["eval", "--ckpt"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&corpus)
        .args(["--split", "test"])
        .status()
        .unwrap()
        .success());

    let emb = dir.path().join("emb.csv");
    let gemb = dir.path().join("gemb.csv");
    assert!(bin()
        .args(["embed", "--ckpt"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&corpus)
        .arg("--out")
        .arg(&emb)
        .arg("--graph-out")
        .arg(&gemb)
        .status()
        .unwrap()
        .success());
    let emb_lines: Vec<String> = fs::read_to_string(&emb)
        .unwrap()
        .trim_end()
        .lines()
        .map(String::from)
        .collect();
    assert!(emb_lines[0].starts_with("kind,cluster,h_0"));
    // at most one row per node kind, plus the header
    assert!(emb_lines.len() - 1 <= fda_ggann_core::NodeKind::COUNT);
    // rerunning is deterministic
    let emb2 = dir.path().join("emb2.csv");
    assert!(bin()
        .args(["embed", "--ckpt"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&corpus)
        .arg("--out")
        .arg(&emb2)
        .status()
        .unwrap()
        .success());
    assert_eq!(fs::read(&emb).unwrap(), fs::read(&emb2).unwrap());

    let att = dir.path().join("att.csv");
    let prog = corpus.join("0");
    let first = fs::read_dir(&prog)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "mc"))
        .min()
        .unwrap();
    assert!(bin()
        .args(["attention", "--ckpt"])
        .arg(&ckpt)
        .arg(&first)
        .arg("--out")
        .arg(&att)
        .status()
        .unwrap()
        .success());
    let att_lines: Vec<String> = fs::read_to_string(&att)
        .unwrap()
        .trim_end()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(att_lines[0], "node,kind,gate");
    let g = {
        let out = bin().arg("graph").arg(&first).output().unwrap();
        FdaGraph::from_json(String::from_utf8_lossy(&out.stdout).trim()).unwrap()
    };
    assert_eq!(att_lines.len() - 1, g.num_nodes, "one row per node");
    for line in &att_lines[1..] {
        let gate: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(gate > 0.0 && gate < 1.0);
    }
}

/// Graphs per second cannot rise when the hidden dimension grows (10%
/// tolerance for noise).
#[test]
fn sweep_d_throughput_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(bin()
        .args([
            "synth",
            "--tasks",
            "2",
            "--per-task",
            "6",
            "--seed",
            "2",
            "--out"
        ])
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    let out = dir.path().join("sweep.csv");
    assert!(bin()
        .args(["sweep-d", "--data"])
        .arg(&corpus)
        .args([
            "--d",
            "8,32",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--seed",
            "2",
            "--threads",
            "1",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(
        lines[0],
        "d,train_graphs_per_sec,eval_graphs_per_sec,final_train_loss,final_test_loss"
    );
    assert_eq!(lines.len(), 3);
    let rate = |line: &str| -> f64 { line.split(',').nth(1).unwrap().parse().unwrap() };
    let (r8, r32) = (rate(lines[1]), rate(lines[2]));
    assert!(
        r32 <= r8 * 1.10,
        "throughput rose with d: {r8} g/s at d=8 vs {r32} g/s at d=32"
    );
}
