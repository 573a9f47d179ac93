//! FDA graph construction: AST edges, the five DFG edge types, call edges,
//! and their integration.

use std::collections::BTreeSet;

use crate::frontend::{Ast, NodeKind};

use super::analysis::{
    assign_statuses, function_flows, reach_in, resolve, Callee, Resolution, VarStatus,
};
use super::{Edge, EdgeType, FdaGraph, GraphError};

/// One Ast-typed edge parent -> child per tree link.
pub fn build_ast_edges(ast: &Ast) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(ast.nodes.len().saturating_sub(1));
    for node in &ast.nodes {
        for &c in &node.children {
            edges.push(Edge::new(node.id, c, EdgeType::Ast));
        }
    }
    edges
}

/// Node id of the synthetic FunctionDecl standing in for the `idx`-th
/// undeclared callee.
fn external_node(ast: &Ast, idx: usize) -> usize {
    ast.nodes.len() + idx
}

fn callee_node(ast: &Ast, callee: Callee) -> usize {
    match callee {
        Callee::Internal(f) => f,
        Callee::External(i) => external_node(ast, i),
    }
}

/// Emits the five DFG edge types.
///
/// - LastUse: from a status to each status of the same variable that may
///   immediately reach it (later -> earlier along data flow).
/// - Compute: from each right-hand-side operand status, literal, and callee
///   function node to the defined variable's status.
/// - Operand: from each operator node to its operand children.
/// - Return: from the returned expression's root node to its FunctionDecl.
/// - Formal: from each actual argument to the callee's matching ParmVarDecl
///   (to the synthetic FunctionDecl itself for undeclared callees).
pub fn build_dfg(ast: &Ast, statuses: &[VarStatus]) -> Result<Vec<Edge>, GraphError> {
    let res = resolve(ast)?;
    let edges = dfg_with_resolution(ast, &res)?;
    debug_assert_eq!(statuses.len(), {
        let flows = function_flows(ast, &res);
        flows
            .iter()
            .map(|f| assign_statuses(ast, f).statuses.len())
            .sum::<usize>()
    });
    Ok(edges)
}

fn dfg_with_resolution(ast: &Ast, res: &Resolution) -> Result<Vec<Edge>, GraphError> {
    let mut edges = Vec::new();

    // Operand edges: operator node -> each direct operand.
    for node in &ast.nodes {
        let is_operator = matches!(
            node.kind,
            NodeKind::BinaryOperator
                | NodeKind::UnaryOperator
                | NodeKind::CompoundAssignOperator
                | NodeKind::ConditionalOperator
        );
        if is_operator {
            for &c in &node.children {
                edges.push(Edge::new(node.id, c, EdgeType::Operand));
            }
        }
    }

    // Return edges: returned expression root -> enclosing FunctionDecl.
    for &f in &res.functions {
        let mut stack = vec![*ast.nodes[f].children.last().expect("function body")];
        while let Some(id) = stack.pop() {
            let n = &ast.nodes[id];
            if n.kind == NodeKind::ReturnStmt {
                if let Some(&e) = n.children.first() {
                    edges.push(Edge::new(e, f, EdgeType::Return));
                }
            }
            stack.extend(n.children.iter().copied());
        }
    }

    // Formal edges + arity checks, per call site.
    for (&call, &callee) in res.callee_of.iter().collect::<BTreeSet<_>>() {
        let args = &ast.nodes[call].children;
        match callee {
            Callee::Internal(f) => {
                let params = &res.params_of[&f];
                if params.len() != args.len() {
                    return Err(GraphError::ArityMismatch {
                        callee: ast.nodes[f].symbol.clone().unwrap_or_default(),
                        expected: params.len(),
                        got: args.len(),
                    });
                }
                for (&a, &p) in args.iter().zip(params.iter()) {
                    edges.push(Edge::new(a, p, EdgeType::Formal));
                }
            }
            Callee::External(i) => {
                let ext = external_node(ast, i);
                for &a in args {
                    edges.push(Edge::new(a, ext, EdgeType::Formal));
                }
            }
        }
    }

    // LastUse and Compute need the per-function unit flow.
    let flows = function_flows(ast, res);
    for flow in &flows {
        let status_map = assign_statuses(ast, flow);
        let reach = reach_in(flow, &status_map);
        for (uid, unit) in flow.units.iter().enumerate() {
            for (&decl, &canon) in &unit.occurrences {
                if let Some(prev) = reach[uid].get(&decl) {
                    for &p in prev {
                        edges.push(Edge::new(canon, p, EdgeType::LastUse));
                    }
                }
            }
            for assign in &unit.assigns {
                let target = status_map.canon[&(uid, assign.target_decl)];
                let mut stack = vec![assign.rhs_root];
                while let Some(id) = stack.pop() {
                    let n = &ast.nodes[id];
                    match n.kind {
                        NodeKind::DeclRefExpr => {
                            if let Some(&d) = res.decl_of.get(&id) {
                                if d != assign.target_decl {
                                    let src = status_map.canon[&(uid, d)];
                                    edges.push(Edge::new(src, target, EdgeType::Compute));
                                }
                            }
                        }
                        NodeKind::IntegerLiteral
                        | NodeKind::FloatingLiteral
                        | NodeKind::StringLiteral => {
                            edges.push(Edge::new(id, target, EdgeType::Compute));
                        }
                        NodeKind::CallExpr => {
                            let c = callee_node(ast, res.callee_of[&id]);
                            edges.push(Edge::new(c, target, EdgeType::Compute));
                            stack.extend(n.children.iter().copied());
                        }
                        _ => stack.extend(n.children.iter().copied()),
                    }
                }
            }
        }
    }

    Ok(edges)
}

/// One Call edge caller -> callee per call site; undeclared callees point at
/// their synthetic FunctionDecl node.
pub fn build_fcg(ast: &Ast) -> Result<Vec<Edge>, GraphError> {
    let res = resolve(ast)?;
    Ok(fcg_with_resolution(ast, &res))
}

fn fcg_with_resolution(ast: &Ast, res: &Resolution) -> Vec<Edge> {
    let mut edges = Vec::new();
    for &f in &res.functions {
        let mut stack = vec![*ast.nodes[f].children.last().expect("function body")];
        while let Some(id) = stack.pop() {
            let n = &ast.nodes[id];
            if n.kind == NodeKind::CallExpr {
                edges.push(Edge::new(
                    f,
                    callee_node(ast, res.callee_of[&id]),
                    EdgeType::Call,
                ));
            }
            stack.extend(n.children.iter().copied());
        }
    }
    edges
}

/// Integrates AST, DFG and FCG edges into the FDA graph.
///
/// Nodes are the AST nodes plus one synthetic FunctionDecl per undeclared
/// callee (in first-occurrence order). Edges are deduplicated and sorted by
/// (type, src, dst).
pub fn build_fda(ast: &Ast, source_id: impl Into<String>) -> Result<FdaGraph, GraphError> {
    let res = resolve(ast)?;
    if res.functions.is_empty() {
        return Err(GraphError::EmptyProgram);
    }

    let mut set: BTreeSet<(u8, usize, usize)> = BTreeSet::new();
    for e in build_ast_edges(ast) {
        set.insert((e.ty.code(), e.src, e.dst));
    }
    for e in dfg_with_resolution(ast, &res)? {
        set.insert((e.ty.code(), e.src, e.dst));
    }
    for e in fcg_with_resolution(ast, &res) {
        set.insert((e.ty.code(), e.src, e.dst));
    }

    let mut kinds: Vec<u16> = ast.nodes.iter().map(|n| n.kind.code()).collect();
    kinds.extend(std::iter::repeat_n(
        NodeKind::FunctionDecl.code(),
        res.externals.len(),
    ));

    let edges = set
        .into_iter()
        .map(|(ty, src, dst)| Edge::new(src, dst, EdgeType::from_code(ty).unwrap()))
        .collect();

    Ok(FdaGraph {
        source_id: source_id.into(),
        label: None,
        num_nodes: kinds.len(),
        kinds,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_source;
    use crate::graph::version_variables;

    const GOLDEN: &str = "int Foo(int m){ return m + 1; } int add(int m){ int x = Foo(m); int y = x + 3; y = y * 2; return y; }";

    fn golden_graph() -> FdaGraph {
        let ast = parse_source(GOLDEN).unwrap();
        build_fda(&ast, "golden_add.mc").unwrap()
    }

    #[test]
    fn ast_edges_count_and_acyclic() {
        let ast = parse_source("int main(){int x = 1; return x;}").unwrap();
        let edges = build_ast_edges(&ast);
        assert_eq!(edges.len(), ast.nodes.len() - 1);
        // parent < child in canonical numbering implies acyclicity
        for e in &edges {
            assert!(e.src < e.dst);
        }
        let single = parse_source("").unwrap();
        assert!(build_ast_edges(&single).is_empty());
    }

    #[test]
    fn golden_has_all_seven_types() {
        let g = golden_graph();
        let stats = g.stats();
        for t in EdgeType::ALL {
            assert!(stats.count(t) > 0, "missing edge type {t}");
        }
    }

    #[test]
    fn golden_paper_edges() {
        let ast = parse_source(GOLDEN).unwrap();
        let g = golden_graph();
        let fns = ast.nodes_of_kind(NodeKind::FunctionDecl);
        let (foo, add) = (fns[0], fns[1]);
        // Call add -> Foo
        assert!(g.edges.contains(&Edge::new(add, foo, EdgeType::Call)));
        // Return y3 -> add: the returned DeclRefExpr y
        let ret_y = ast.nodes[*ast.nodes[ast.nodes_of_kind(NodeKind::ReturnStmt)[1]]
            .children
            .first()
            .unwrap()]
        .id;
        assert!(g.edges.contains(&Edge::new(ret_y, add, EdgeType::Return)));
        // Formal: actual m at Foo(m) -> ParmVarDecl m of Foo
        let call = ast.nodes_of_kind(NodeKind::CallExpr)[0];
        let actual = ast.nodes[call].children[0];
        let foo_param = res_param(&ast, foo);
        assert!(g
            .edges
            .contains(&Edge::new(actual, foo_param, EdgeType::Formal)));
    }

    fn res_param(ast: &Ast, f: usize) -> usize {
        ast.nodes[f]
            .children
            .iter()
            .copied()
            .find(|&c| ast.nodes[c].kind == NodeKind::ParmVarDecl)
            .unwrap()
    }

    #[test]
    fn last_use_links_use_to_def() {
        let ast = parse_source(GOLDEN).unwrap();
        let statuses = version_variables(&ast).unwrap();
        let edges = build_dfg(&ast, &statuses).unwrap();
        // x2 (use in y = x + 3) -> x1 (VarDecl)
        let x: Vec<&VarStatus> = statuses.iter().filter(|s| s.var == "x").collect();
        assert!(edges.contains(&Edge::new(x[1].node, x[0].node, EdgeType::LastUse)));
        // y chain: y2 -> y1, y3 -> y2
        let y: Vec<&VarStatus> = statuses.iter().filter(|s| s.var == "y").collect();
        assert!(edges.contains(&Edge::new(y[1].node, y[0].node, EdgeType::LastUse)));
        assert!(edges.contains(&Edge::new(y[2].node, y[1].node, EdgeType::LastUse)));
        assert!(!edges.contains(&Edge::new(y[2].node, y[0].node, EdgeType::LastUse)));
    }

    #[test]
    fn compute_from_literal_and_no_lastuse() {
        let ast = parse_source("int f(){int a=1;}").unwrap();
        let statuses = version_variables(&ast).unwrap();
        let edges = build_dfg(&ast, &statuses).unwrap();
        let lit = ast.nodes_of_kind(NodeKind::IntegerLiteral)[0];
        let a1 = statuses.iter().find(|s| s.var == "a").unwrap().node;
        assert!(edges.contains(&Edge::new(lit, a1, EdgeType::Compute)));
        assert!(edges.iter().all(|e| e.ty != EdgeType::LastUse));
    }

    #[test]
    fn operand_edges_from_plus() {
        let ast = parse_source(GOLDEN).unwrap();
        let statuses = version_variables(&ast).unwrap();
        let edges = build_dfg(&ast, &statuses).unwrap();
        // the + in `y = x + 3`
        let plus = ast
            .nodes_of_kind(NodeKind::BinaryOperator)
            .into_iter()
            .filter(|&i| ast.nodes[i].op.as_deref() == Some("+"))
            .nth(1)
            .unwrap();
        let x2 = ast.nodes[plus].children[0];
        let three = ast.nodes[plus].children[1];
        assert!(edges.contains(&Edge::new(plus, x2, EdgeType::Operand)));
        assert!(edges.contains(&Edge::new(plus, three, EdgeType::Operand)));
    }

    #[test]
    fn call_graph_cases() {
        // no calls
        let ast = parse_source("int f(){ return 1; }").unwrap();
        assert!(build_fcg(&ast).unwrap().is_empty());
        // recursion gives a self loop
        let ast =
            parse_source("int f(int n){ if (n < 1) { return 1; } return f(n - 1); }").unwrap();
        let f = ast.nodes_of_kind(NodeKind::FunctionDecl)[0];
        assert_eq!(
            build_fcg(&ast).unwrap(),
            vec![Edge::new(f, f, EdgeType::Call)]
        );
    }

    #[test]
    fn external_callee_gets_synthetic_node() {
        let ast = parse_source("int f(int x){ printf(x); return x; }").unwrap();
        let g = build_fda(&ast, "ext").unwrap();
        assert_eq!(g.num_nodes, ast.nodes.len() + 1);
        let ext = ast.nodes.len();
        assert_eq!(g.kinds[ext], NodeKind::FunctionDecl.code());
        let f = ast.nodes_of_kind(NodeKind::FunctionDecl)[0];
        assert!(g.edges.contains(&Edge::new(f, ext, EdgeType::Call)));
        // Formal edge from the actual argument to the synthetic node
        let call = ast.nodes_of_kind(NodeKind::CallExpr)[0];
        let arg = ast.nodes[call].children[0];
        assert!(g.edges.contains(&Edge::new(arg, ext, EdgeType::Formal)));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let ast =
            parse_source("int g(int a, int b){ return a + b; } int f(){ return g(1); }").unwrap();
        let statuses = version_variables(&ast).unwrap();
        let err = build_dfg(&ast, &statuses).unwrap_err();
        assert!(matches!(
            err,
            GraphError::ArityMismatch { ref callee, expected: 2, got: 1 } if callee == "g"
        ));
    }

    #[test]
    fn empty_program_rejected() {
        let ast = parse_source("").unwrap();
        assert_eq!(build_fda(&ast, "e").unwrap_err(), GraphError::EmptyProgram);
    }

    #[test]
    fn edges_sorted_and_unique() {
        let g = golden_graph();
        let mut sorted = g.edges.clone();
        sorted.sort_by_key(|e| (e.ty.code(), e.src, e.dst));
        sorted.dedup();
        assert_eq!(g.edges, sorted);
    }

    #[test]
    fn ast_subset_spans_original_nodes() {
        let g = golden_graph();
        let ast = parse_source(GOLDEN).unwrap();
        let ast_edges: Vec<&Edge> = g.edges.iter().filter(|e| e.ty == EdgeType::Ast).collect();
        assert_eq!(ast_edges.len(), ast.nodes.len() - 1);
        let mut seen = vec![false; ast.nodes.len()];
        seen[0] = true;
        for e in &ast_edges {
            assert!(!seen[e.dst], "node {} has two Ast parents", e.dst);
            seen[e.dst] = true;
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn alpha_renaming_invariance() {
        let renamed = "int Qux(int w){ return w + 1; } int total(int w){ int alpha = Qux(w); int beta = alpha + 3; beta = beta * 2; return beta; }";
        let a = build_fda(&parse_source(GOLDEN).unwrap(), "p").unwrap();
        let b = build_fda(&parse_source(renamed).unwrap(), "p").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loop_statuses_may_reach_themselves() {
        let ast = parse_source(
            "int f(int n){ int v = 0; while (n > 0) { v = v + 1; n = n - 1; } return v; }",
        )
        .unwrap();
        let statuses = version_variables(&ast).unwrap();
        let edges = build_dfg(&ast, &statuses).unwrap();
        let v: Vec<&VarStatus> = statuses.iter().filter(|s| s.var == "v").collect();
        // v2 (in the loop) reaches itself through the back edge
        assert!(edges.contains(&Edge::new(v[1].node, v[1].node, EdgeType::LastUse)));
        // and links back to the declaration
        assert!(edges.contains(&Edge::new(v[1].node, v[0].node, EdgeType::LastUse)));
        // the return-site status joins both reaching definitions
        assert!(edges.contains(&Edge::new(v[2].node, v[0].node, EdgeType::LastUse)));
        assert!(edges.contains(&Edge::new(v[2].node, v[1].node, EdgeType::LastUse)));
    }

    #[test]
    fn branch_join_unions_last_statuses() {
        let ast = parse_source(
            "int f(int c){ int v = 0; if (c > 0) { v = 1; } else { v = 2; } return v; }",
        )
        .unwrap();
        let statuses = version_variables(&ast).unwrap();
        let edges = build_dfg(&ast, &statuses).unwrap();
        let v: Vec<&VarStatus> = statuses.iter().filter(|s| s.var == "v").collect();
        assert_eq!(v.len(), 4);
        let ret = v[3].node;
        assert!(edges.contains(&Edge::new(ret, v[1].node, EdgeType::LastUse)));
        assert!(edges.contains(&Edge::new(ret, v[2].node, EdgeType::LastUse)));
        // the two branch writes don't reach each other
        assert!(!edges.contains(&Edge::new(v[2].node, v[1].node, EdgeType::LastUse)));
    }
}
