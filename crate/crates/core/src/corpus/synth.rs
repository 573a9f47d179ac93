//! Seeded program mutations: consistent renaming, independent-statement
//! permutation, literal jitter, and dead assignments.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::{parse_source, render_source, Ast, NodeKind};
use crate::graph::{build_fda, resolve, Callee};

use super::templates::task_templates;
use super::LabeledProgram;

/// Synthetic corpus settings. One program = one template instance with the
/// mutations below applied at the given rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_tasks: usize,
    pub per_task: usize,
    pub rename_rate: f64,
    pub permute_rate: f64,
    pub jitter_rate: f64,
    pub dead_code_rate: f64,
    /// Use the near-duplicate task groups instead of the distinct set.
    pub similar: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_tasks: 8,
            per_task: 120,
            rename_rate: 1.0,
            permute_rate: 0.5,
            jitter_rate: 0.5,
            dead_code_rate: 0.3,
            similar: false,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) {
        for (name, r) in [
            ("rename_rate", self.rename_rate),
            ("permute_rate", self.permute_rate),
            ("jitter_rate", self.jitter_rate),
            ("dead_code_rate", self.dead_code_rate),
        ] {
            assert!((0.0..=1.0).contains(&r), "{name} must be in [0, 1]");
        }
        assert!(self.per_task >= 5, "per_task must be at least 5");
        assert!(self.num_tasks >= 1, "num_tasks must be at least 1");
    }
}

const NAME_POOL: [&str; 16] = [
    "acc", "val", "tmp", "res", "num", "cnt", "idx", "tot", "cur", "aux", "lhs", "rhs", "buf",
    "len", "pos", "bal",
];

fn mix(a: u64, b: u64) -> u64 {
    a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Applies a consistent alpha-renaming to every declared identifier
/// (functions, parameters, locals); undeclared callees keep their names.
pub fn rename_identifiers(ast: &mut Ast, rng: &mut ChaCha8Rng) {
    let res = resolve(ast).expect("template must resolve");
    let mut decls: Vec<usize> = ast
        .nodes
        .iter()
        .filter(|n| {
            matches!(
                n.kind,
                NodeKind::FunctionDecl | NodeKind::ParmVarDecl | NodeKind::VarDecl
            )
        })
        .map(|n| n.id)
        .collect();
    decls.sort_unstable();
    let fresh: Vec<String> = decls
        .iter()
        .enumerate()
        .map(|(i, _)| format!("{}_{}", NAME_POOL[rng.random_range(0..NAME_POOL.len())], i))
        .collect();
    let name_of =
        |decl: usize| -> Option<&String> { decls.binary_search(&decl).ok().map(|i| &fresh[i]) };
    // rewrite references first, then declarations
    let ref_targets: Vec<(usize, usize)> = res
        .decl_of
        .iter()
        .map(|(&r, &d)| (r, d))
        .chain(
            res.callee_of
                .iter()
                .filter_map(|(&c, callee)| match callee {
                    Callee::Internal(f) => Some((c, *f)),
                    Callee::External(_) => None,
                }),
        )
        .collect();
    for (r, d) in ref_targets {
        if let Some(name) = name_of(d) {
            ast.nodes[r].symbol = Some(name.clone());
        }
    }
    for &d in &decls {
        if let Some(name) = name_of(d) {
            ast.nodes[d].symbol = Some(name.clone());
        }
    }
}

/// Collects declarations referenced inside a subtree.
fn vars_in(ast: &Ast, root: usize, res: &crate::graph::Resolution) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        let n = &ast.nodes[id];
        match n.kind {
            NodeKind::DeclRefExpr => {
                if let Some(&d) = res.decl_of.get(&id) {
                    out.push(d);
                }
            }
            NodeKind::VarDecl => out.push(id),
            _ => {}
        }
        stack.extend(n.children.iter().copied());
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn contains_call(ast: &Ast, root: usize) -> bool {
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if ast.nodes[id].kind == NodeKind::CallExpr {
            return true;
        }
        stack.extend(ast.nodes[id].children.iter().copied());
    }
    false
}

/// Swaps one pair of adjacent statements that touch disjoint variable sets
/// and contain no calls; such a swap cannot break any def-use ordering.
pub fn permute_statements(ast: &mut Ast, rng: &mut ChaCha8Rng) -> bool {
    let res = match resolve(ast) {
        Ok(r) => r,
        Err(_) => return false,
    };
    let mut candidates = Vec::new();
    for node in &ast.nodes {
        if node.kind != NodeKind::CompoundStmt {
            continue;
        }
        for i in 0..node.children.len().saturating_sub(1) {
            let (a, b) = (node.children[i], node.children[i + 1]);
            if contains_call(ast, a) || contains_call(ast, b) {
                continue;
            }
            let va = vars_in(ast, a, &res);
            let vb = vars_in(ast, b, &res);
            if va.iter().all(|d| !vb.contains(d)) {
                candidates.push((node.id, i));
            }
        }
    }
    if candidates.is_empty() {
        return false;
    }
    let (block, i) = candidates[rng.random_range(0..candidates.len())];
    ast.nodes[block].children.swap(i, i + 1);
    true
}

/// Nudges a few integer literals, keeping them non-negative.
pub fn jitter_literals(ast: &mut Ast, rng: &mut ChaCha8Rng) {
    let literals: Vec<usize> = ast
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::IntegerLiteral)
        .map(|n| n.id)
        .collect();
    if literals.is_empty() {
        return;
    }
    let count = rng.random_range(1..=literals.len().min(3));
    for _ in 0..count {
        let id = literals[rng.random_range(0..literals.len())];
        let old: i64 = ast.nodes[id]
            .literal
            .as_deref()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let delta = rng.random_range(1..=9);
        let new = (old + if rng.random_bool(0.5) { delta } else { -delta }).max(0);
        ast.nodes[id].literal = Some(new.to_string());
    }
}

/// Inserts one or two dead declarations (`int tN = <expr>;`) at random block
/// positions. The initializer is a literal, a literal expression, or a read
/// of a parameter, so the program stays valid wherever the statement lands.
pub fn insert_dead_code(ast: &mut Ast, rng: &mut ChaCha8Rng) {
    let inserts = rng.random_range(1..=2);
    for k in 0..inserts {
        let functions: Vec<usize> = ast.nodes[ast.root].children.clone();
        let f = functions[rng.random_range(0..functions.len())];
        let params: Vec<usize> = ast.nodes[f]
            .children
            .iter()
            .copied()
            .filter(|&c| ast.nodes[c].kind == NodeKind::ParmVarDecl)
            .collect();
        let blocks: Vec<usize> = subtree_blocks(ast, f);
        let block = blocks[rng.random_range(0..blocks.len())];
        let pos = rng.random_range(0..=ast.nodes[block].children.len());

        let init = match rng.random_range(0..3) {
            0 => {
                let lit = push_node(ast, NodeKind::IntegerLiteral);
                ast.nodes[lit].literal = Some(rng.random_range(1..=99).to_string());
                lit
            }
            1 => {
                let op = push_node(ast, NodeKind::BinaryOperator);
                let a = push_node(ast, NodeKind::IntegerLiteral);
                let b = push_node(ast, NodeKind::IntegerLiteral);
                ast.nodes[a].literal = Some(rng.random_range(1..=9).to_string());
                ast.nodes[b].literal = Some(rng.random_range(1..=9).to_string());
                ast.nodes[op].op = Some(if rng.random_bool(0.5) { "+" } else { "*" }.into());
                ast.nodes[op].children = vec![a, b];
                op
            }
            _ if !params.is_empty() => {
                let op = push_node(ast, NodeKind::BinaryOperator);
                let var = push_node(ast, NodeKind::DeclRefExpr);
                let lit = push_node(ast, NodeKind::IntegerLiteral);
                let p = params[rng.random_range(0..params.len())];
                ast.nodes[var].symbol = ast.nodes[p].symbol.clone();
                ast.nodes[lit].literal = Some(rng.random_range(1..=9).to_string());
                ast.nodes[op].op = Some("+".into());
                ast.nodes[op].children = vec![var, lit];
                op
            }
            _ => {
                let lit = push_node(ast, NodeKind::IntegerLiteral);
                ast.nodes[lit].literal = Some(rng.random_range(1..=99).to_string());
                lit
            }
        };
        let decl_stmt = push_node(ast, NodeKind::DeclStmt);
        let var = push_node(ast, NodeKind::VarDecl);
        ast.nodes[var].symbol = Some(format!("dead{k}_{}", rng.random_range(0..1000)));
        ast.decl_types.insert(var, crate::frontend::Ty::Int);
        ast.nodes[var].children = vec![init];
        ast.nodes[decl_stmt].children = vec![var];
        ast.nodes[block].children.insert(pos, decl_stmt);
    }
}

fn push_node(ast: &mut Ast, kind: NodeKind) -> usize {
    let id = ast.nodes.len();
    ast.nodes.push(crate::frontend::AstNode::new(id, kind));
    ast.lines.push(0);
    id
}

fn subtree_blocks(ast: &Ast, root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if ast.nodes[id].kind == NodeKind::CompoundStmt {
            out.push(id);
        }
        stack.extend(ast.nodes[id].children.iter().copied());
    }
    out.sort_unstable();
    out
}

/// One mutated instance of a template, rendered back to source. Structural
/// mutations run first; renaming runs last so inserted names are randomized
/// too. The result is reparsed as a self-check.
pub fn mutate_template(template: &str, cfg: &SynthConfig, instance_seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let mut ast = parse_source(template).expect("template must parse");
    if rng.random_bool(cfg.permute_rate) {
        permute_statements(&mut ast, &mut rng);
    }
    if rng.random_bool(cfg.jitter_rate) {
        jitter_literals(&mut ast, &mut rng);
    }
    if rng.random_bool(cfg.dead_code_rate) {
        insert_dead_code(&mut ast, &mut rng);
    }
    if rng.random_bool(cfg.rename_rate) {
        rename_identifiers(&mut ast, &mut rng);
    }
    let source = render_source(&ast);
    let reparsed = parse_source(&source).expect("mutant must parse");
    build_fda(&reparsed, "synth-check").expect("mutant must build a graph");
    source
}

/// A rename-only mutant: same graph as the template, different identifiers.
pub fn rename_mutant(template: &str, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ast = parse_source(template).expect("template must parse");
    rename_identifiers(&mut ast, &mut rng);
    render_source(&ast)
}

/// Generates the full labeled corpus described by `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Vec<LabeledProgram> {
    cfg.validate();
    let templates = task_templates(cfg.num_tasks, cfg.similar);
    let mut out = Vec::with_capacity(cfg.num_tasks * cfg.per_task);
    for (task, (name, template)) in templates.iter().enumerate() {
        for idx in 0..cfg.per_task {
            let instance_seed = mix(mix(cfg.seed, task as u64), idx as u64);
            let source = mutate_template(template, cfg, instance_seed);
            out.push(LabeledProgram {
                source_id: format!("{task}/{name}_{idx:04}.mc"),
                task_id: task,
                source,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_fda;

    #[test]
    fn default_corpus_counts() {
        let cfg = SynthConfig {
            per_task: 6,
            ..SynthConfig::default()
        };
        let programs = synthesize(&cfg);
        assert_eq!(programs.len(), 48);
        for t in 0..8 {
            assert_eq!(programs.iter().filter(|p| p.task_id == t).count(), 6);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig {
            per_task: 5,
            num_tasks: 3,
            ..SynthConfig::default()
        };
        let a = synthesize(&cfg);
        let b = synthesize(&cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn rename_mutant_builds_identical_graph() {
        for (name, template) in super::super::templates::DEFAULT_TEMPLATES {
            let base = build_fda(&parse_source(template).unwrap(), "t").unwrap();
            for seed in 0..5 {
                let mutant = rename_mutant(template, seed);
                assert_ne!(mutant, template, "{name}: renaming changed nothing");
                let g = build_fda(&parse_source(&mutant).unwrap(), "t").unwrap();
                assert_eq!(g, base, "{name} seed {seed}");
            }
        }
    }

    #[test]
    fn every_mutant_parses_and_builds() {
        let cfg = SynthConfig {
            per_task: 10,
            ..SynthConfig::default()
        };
        for p in synthesize(&cfg) {
            let ast = parse_source(&p.source).unwrap();
            crate::graph::version_variables(&ast).unwrap();
            build_fda(&ast, p.source_id.as_str()).unwrap();
        }
    }

    #[test]
    fn similar_mode_builds_two_groups() {
        let cfg = SynthConfig {
            per_task: 5,
            similar: true,
            ..SynthConfig::default()
        };
        let programs = synthesize(&cfg);
        assert_eq!(programs.len(), 40);
        let names: Vec<&str> = programs
            .iter()
            .map(|p| p.source_id.split('/').nth(1).unwrap())
            .collect();
        assert!(names.iter().any(|n| n.starts_with("sum")));
        assert!(names.iter().any(|n| n.starts_with("product")));
    }

    #[test]
    fn at_least_one_task_pair_differs_in_kind_multiset() {
        let multisets: Vec<[usize; crate::frontend::NodeKind::COUNT]> =
            super::super::templates::DEFAULT_TEMPLATES
                .iter()
                .map(|(_, t)| parse_source(t).unwrap().kind_counts())
                .collect();
        let mut differing = 0;
        for i in 0..multisets.len() {
            for j in i + 1..multisets.len() {
                if multisets[i] != multisets[j] {
                    differing += 1;
                }
            }
        }
        assert!(differing > 0);
    }

    #[test]
    fn permutation_preserves_validity() {
        let src = "int f(int n) {\n int a = 1;\n int b = 2;\n int c = a + n;\n int d = b * 2;\n return c + d;\n}\n";
        let mut any = false;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ast = parse_source(src).unwrap();
            if permute_statements(&mut ast, &mut rng) {
                any = true;
                let rendered = render_source(&ast);
                let back = parse_source(&rendered).unwrap();
                crate::graph::version_variables(&back).unwrap();
            }
        }
        assert!(any, "no permutation candidates found");
    }
}
