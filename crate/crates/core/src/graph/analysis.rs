//! Variable resolution, statement units, and status numbering.
//!
//! A "unit" is a statement-level evaluation site: one variable declaration,
//! one expression statement, one loop/branch condition, one for-loop part, or
//! one returned expression. Every variable read or written inside a unit gets
//! exactly one status there (so `y = y * 2` yields a single status for `y`),
//! numbered consecutively per declaration in source order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::frontend::{Ast, NodeKind};

use super::GraphError;

/// One status of a variable: a superscripted version tied to the statement
/// unit that touches it. `node` is the canonical occurrence (the VarDecl or
/// the first DeclRefExpr of that variable inside the unit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarStatus {
    pub var: String,
    /// 1-based, consecutive in source order per declaration per function.
    pub ordinal: u32,
    pub node: usize,
}

/// How a call site resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Callee {
    /// FunctionDecl node id.
    Internal(usize),
    /// Index into `Resolution::externals`.
    External(usize),
}

#[derive(Debug, Default)]
pub struct Resolution {
    /// DeclRefExpr node -> VarDecl/ParmVarDecl node.
    pub decl_of: HashMap<usize, usize>,
    /// CallExpr node -> resolved callee.
    pub callee_of: HashMap<usize, Callee>,
    /// FunctionDecl nodes in id order.
    pub functions: Vec<usize>,
    /// FunctionDecl node -> its ParmVarDecl nodes in order.
    pub params_of: HashMap<usize, Vec<usize>>,
    /// Undeclared callee names in first-occurrence order.
    pub externals: Vec<String>,
}

/// Resolves every DeclRefExpr to its declaration and every CallExpr to its
/// callee, with C-style lexical block scoping inside each function.
pub fn resolve(ast: &Ast) -> Result<Resolution, GraphError> {
    let mut res = Resolution::default();
    let mut fn_by_name: HashMap<&str, usize> = HashMap::new();
    for &f in &ast.nodes[ast.root].children {
        if ast.nodes[f].kind == NodeKind::FunctionDecl {
            res.functions.push(f);
            let name = ast.nodes[f].symbol.as_deref().unwrap_or("");
            fn_by_name.entry(name).or_insert(f);
            let params: Vec<usize> = ast.nodes[f]
                .children
                .iter()
                .copied()
                .filter(|&c| ast.nodes[c].kind == NodeKind::ParmVarDecl)
                .collect();
            res.params_of.insert(f, params);
        }
    }

    let functions = res.functions.clone();
    for f in functions {
        let mut scopes: Vec<HashMap<&str, usize>> = vec![HashMap::new()];
        for &p in &res.params_of[&f] {
            scopes[0].insert(ast.nodes[p].symbol.as_deref().unwrap_or(""), p);
        }
        let body = *ast.nodes[f].children.last().expect("function body");
        resolve_walk(ast, body, &mut scopes, &fn_by_name, &mut res)?;
    }
    Ok(res)
}

fn resolve_walk<'a>(
    ast: &'a Ast,
    node: usize,
    scopes: &mut Vec<HashMap<&'a str, usize>>,
    fn_by_name: &HashMap<&str, usize>,
    res: &mut Resolution,
) -> Result<(), GraphError> {
    let n = &ast.nodes[node];
    match n.kind {
        NodeKind::CompoundStmt | NodeKind::ForStmt => {
            scopes.push(HashMap::new());
            for &c in &n.children {
                resolve_walk(ast, c, scopes, fn_by_name, res)?;
            }
            scopes.pop();
        }
        NodeKind::VarDecl => {
            // The declaration is in scope inside its own initializer.
            scopes
                .last_mut()
                .unwrap()
                .insert(n.symbol.as_deref().unwrap_or(""), node);
            for &c in &n.children {
                resolve_walk(ast, c, scopes, fn_by_name, res)?;
            }
        }
        NodeKind::DeclRefExpr => {
            let name = n.symbol.as_deref().unwrap_or("");
            let decl = scopes.iter().rev().find_map(|s| s.get(name).copied());
            match decl {
                Some(d) => {
                    res.decl_of.insert(node, d);
                }
                None => {
                    return Err(GraphError::UnresolvedIdentifier {
                        name: name.to_string(),
                        line: ast.line(node),
                    })
                }
            }
        }
        NodeKind::CallExpr => {
            let name = n.symbol.as_deref().unwrap_or("");
            let callee = match fn_by_name.get(name) {
                Some(&f) => Callee::Internal(f),
                None => {
                    let idx = res
                        .externals
                        .iter()
                        .position(|e| e == name)
                        .unwrap_or_else(|| {
                            res.externals.push(name.to_string());
                            res.externals.len() - 1
                        });
                    Callee::External(idx)
                }
            };
            res.callee_of.insert(node, callee);
            for &c in &n.children {
                resolve_walk(ast, c, scopes, fn_by_name, res)?;
            }
        }
        _ => {
            for &c in &n.children {
                resolve_walk(ast, c, scopes, fn_by_name, res)?;
            }
        }
    }
    Ok(())
}

/// An assignment inside a unit: the defined declaration and the subtree the
/// value is computed from.
#[derive(Debug, Clone)]
pub(super) struct UnitAssign {
    pub target_decl: usize,
    pub rhs_root: usize,
}

#[derive(Debug, Clone)]
pub(super) struct Unit {
    /// Per declaration touched in this unit: (decl node, canonical occurrence).
    pub occurrences: BTreeMap<usize, usize>,
    pub assigns: Vec<UnitAssign>,
}

/// Per-function unit list (textual order) and control-flow successor sets.
#[derive(Debug)]
pub(super) struct FnFlow {
    pub units: Vec<Unit>,
    pub succs: Vec<BTreeSet<usize>>,
}

struct Flow {
    frontier: Vec<usize>,
    entry: Option<usize>,
}

struct LoopCtx {
    breaks: Vec<usize>,
    continues: Vec<usize>,
}

struct FlowBuilder<'a> {
    ast: &'a Ast,
    res: &'a Resolution,
    units: Vec<Unit>,
    succs: Vec<BTreeSet<usize>>,
    loops: Vec<LoopCtx>,
}

pub(super) fn function_flows(ast: &Ast, res: &Resolution) -> Vec<FnFlow> {
    res.functions
        .iter()
        .map(|&f| {
            let mut b = FlowBuilder {
                ast,
                res,
                units: Vec::new(),
                succs: Vec::new(),
                loops: Vec::new(),
            };
            let body = *ast.nodes[f].children.last().expect("function body");
            b.walk_stmt(body, vec![]);
            FnFlow {
                units: b.units,
                succs: b.succs,
            }
        })
        .collect()
}

impl<'a> FlowBuilder<'a> {
    fn new_unit(&mut self, root: usize, frontier: &[usize]) -> usize {
        let id = self.units.len();
        let mut occurrences = BTreeMap::new();
        let mut assigns = Vec::new();
        if self.ast.nodes[root].kind == NodeKind::VarDecl {
            occurrences.insert(root, root);
            if let Some(&init) = self.ast.nodes[root].children.first() {
                assigns.push(UnitAssign {
                    target_decl: root,
                    rhs_root: init,
                });
                self.collect_expr(init, &mut occurrences, &mut assigns);
            }
        } else {
            self.collect_expr(root, &mut occurrences, &mut assigns);
        }
        self.units.push(Unit {
            occurrences,
            assigns,
        });
        self.succs.push(BTreeSet::new());
        for &f in frontier {
            self.succs[f].insert(id);
        }
        id
    }

    fn collect_expr(
        &self,
        node: usize,
        occurrences: &mut BTreeMap<usize, usize>,
        assigns: &mut Vec<UnitAssign>,
    ) {
        let n = &self.ast.nodes[node];
        match n.kind {
            NodeKind::DeclRefExpr => {
                if let Some(&decl) = self.res.decl_of.get(&node) {
                    let canon = occurrences.entry(decl).or_insert(node);
                    if node < *canon {
                        *canon = node;
                    }
                }
            }
            NodeKind::BinaryOperator if n.op.as_deref() == Some("=") => {
                if let Some(target) = self.lvalue_decl(n.children[0]) {
                    assigns.push(UnitAssign {
                        target_decl: target,
                        rhs_root: n.children[1],
                    });
                }
                for &c in &n.children {
                    self.collect_expr(c, occurrences, assigns);
                }
            }
            NodeKind::CompoundAssignOperator => {
                if let Some(target) = self.lvalue_decl(n.children[0]) {
                    assigns.push(UnitAssign {
                        target_decl: target,
                        rhs_root: n.children[1],
                    });
                }
                for &c in &n.children {
                    self.collect_expr(c, occurrences, assigns);
                }
            }
            _ => {
                for &c in &n.children {
                    self.collect_expr(c, occurrences, assigns);
                }
            }
        }
    }

    /// Declaration written by an lvalue; subscripted arrays count as
    /// whole-variable writes.
    fn lvalue_decl(&self, node: usize) -> Option<usize> {
        match self.ast.nodes[node].kind {
            NodeKind::DeclRefExpr => self.res.decl_of.get(&node).copied(),
            NodeKind::ArraySubscriptExpr => self.lvalue_decl(self.ast.nodes[node].children[0]),
            _ => None,
        }
    }

    fn connect(&mut self, from: &[usize], to: usize) {
        for &f in from {
            self.succs[f].insert(to);
        }
    }

    fn walk_stmt(&mut self, node: usize, frontier: Vec<usize>) -> Flow {
        let kind = self.ast.nodes[node].kind;
        let children = self.ast.nodes[node].children.clone();
        match kind {
            NodeKind::CompoundStmt => {
                let mut entry = None;
                let mut frontier = frontier;
                for c in children {
                    let flow = self.walk_stmt(c, frontier);
                    entry = entry.or(flow.entry);
                    frontier = flow.frontier;
                }
                Flow { frontier, entry }
            }
            NodeKind::DeclStmt => {
                let mut entry = None;
                let mut frontier = frontier;
                for v in children {
                    let u = self.new_unit(v, &frontier);
                    entry = entry.or(Some(u));
                    frontier = vec![u];
                }
                Flow { frontier, entry }
            }
            NodeKind::IfStmt => {
                let cond = self.new_unit(children[0], &frontier);
                let then_flow = self.walk_stmt(children[1], vec![cond]);
                let mut out = then_flow.frontier;
                match children.get(2) {
                    Some(&els) => {
                        let else_flow = self.walk_stmt(els, vec![cond]);
                        out.extend(else_flow.frontier);
                    }
                    None => out.push(cond),
                }
                Flow {
                    frontier: out,
                    entry: Some(cond),
                }
            }
            NodeKind::WhileStmt => {
                let cond = self.new_unit(children[0], &frontier);
                self.loops.push(LoopCtx {
                    breaks: vec![],
                    continues: vec![],
                });
                let body_flow = self.walk_stmt(children[1], vec![cond]);
                let ctx = self.loops.pop().unwrap();
                self.connect(&body_flow.frontier, cond);
                for c in ctx.continues {
                    self.succs[c].insert(cond);
                }
                let mut out = vec![cond];
                out.extend(ctx.breaks);
                Flow {
                    frontier: out,
                    entry: Some(cond),
                }
            }
            NodeKind::DoStmt => {
                self.loops.push(LoopCtx {
                    breaks: vec![],
                    continues: vec![],
                });
                let body_flow = self.walk_stmt(children[0], frontier);
                let ctx = self.loops.pop().unwrap();
                let cond = self.new_unit(children[1], &body_flow.frontier);
                for c in ctx.continues {
                    self.succs[c].insert(cond);
                }
                // loop back into the body (or the condition itself when the
                // body holds no units)
                let back = body_flow.entry.unwrap_or(cond);
                self.succs[cond].insert(back);
                let mut out = vec![cond];
                out.extend(ctx.breaks);
                Flow {
                    frontier: out,
                    entry: Some(body_flow.entry.unwrap_or(cond)),
                }
            }
            NodeKind::ForStmt => self.walk_for(node, frontier),
            NodeKind::ReturnStmt => {
                let entry = children.first().map(|&e| self.new_unit(e, &frontier));
                Flow {
                    frontier: vec![],
                    entry,
                }
            }
            NodeKind::BreakStmt => {
                if let Some(ctx) = self.loops.last_mut() {
                    ctx.breaks.extend(frontier);
                }
                Flow {
                    frontier: vec![],
                    entry: None,
                }
            }
            NodeKind::ContinueStmt => {
                if let Some(ctx) = self.loops.last_mut() {
                    ctx.continues.extend(frontier);
                }
                Flow {
                    frontier: vec![],
                    entry: None,
                }
            }
            // expression statement
            _ => {
                let u = self.new_unit(node, &frontier);
                Flow {
                    frontier: vec![u],
                    entry: Some(u),
                }
            }
        }
    }

    // Units are created in source order (init, cond, update, body) while the
    // control flow runs init -> cond -> body -> update -> cond.
    fn walk_for(&mut self, node: usize, frontier: Vec<usize>) -> Flow {
        let mask = self.ast.nodes[node].op.clone().unwrap_or_default();
        let children = self.ast.nodes[node].children.clone();
        let mut idx = 0usize;

        let mut frontier = frontier;
        let mut entry = None;
        let mut init_units: Vec<usize> = Vec::new();
        if mask.contains('i') {
            let init = children[idx];
            idx += 1;
            if self.ast.nodes[init].kind == NodeKind::DeclStmt {
                for &v in self.ast.nodes[init].children.clone().iter() {
                    let u = self.new_unit(v, &frontier);
                    entry = entry.or(Some(u));
                    frontier = vec![u];
                    init_units.push(u);
                }
            } else {
                let u = self.new_unit(init, &frontier);
                entry = entry.or(Some(u));
                frontier = vec![u];
                init_units.push(u);
            }
        }
        let cond = if mask.contains('c') {
            let c = self.new_unit(children[idx], &frontier);
            idx += 1;
            entry = entry.or(Some(c));
            Some(c)
        } else {
            None
        };
        let update = if mask.contains('u') {
            // created now for source order, wired after the body
            let u = self.new_unit(children[idx], &[]);
            idx += 1;
            Some(u)
        } else {
            None
        };
        let body = children[idx];

        self.loops.push(LoopCtx {
            breaks: vec![],
            continues: vec![],
        });
        let body_in = match cond {
            Some(c) => vec![c],
            None => frontier.clone(),
        };
        let body_flow = self.walk_stmt(body, body_in.clone());
        let ctx = self.loops.pop().unwrap();

        // continue targets the update part, else the condition, else the top
        // of the body.
        let loop_top = cond.or(body_flow.entry).or(update);
        let continue_to = update.or(cond).or(body_flow.entry);
        if let Some(t) = continue_to {
            for c in &ctx.continues {
                self.succs[*c].insert(t);
            }
        }
        match update {
            Some(u) => {
                self.connect(&body_flow.frontier, u);
                if let Some(t) = loop_top {
                    self.succs[u].insert(t);
                }
            }
            None => {
                if let Some(t) = loop_top {
                    self.connect(&body_flow.frontier, t);
                }
            }
        }

        let mut out = Vec::new();
        if let Some(c) = cond {
            out.push(c);
        }
        out.extend(ctx.breaks);
        let entry = entry.or(body_flow.entry).or(update);
        Flow {
            frontier: out,
            entry,
        }
    }
}

/// Per-function status assignment: unit index -> (decl -> canonical node),
/// plus the ordinal numbering.
pub(super) struct StatusMap {
    /// (unit, decl) -> canonical occurrence node.
    pub canon: BTreeMap<(usize, usize), usize>,
    pub statuses: Vec<VarStatus>,
}

pub(super) fn assign_statuses(ast: &Ast, flow: &FnFlow) -> StatusMap {
    let mut canon = BTreeMap::new();
    let mut ordinals: BTreeMap<usize, u32> = BTreeMap::new();
    let mut statuses = Vec::new();
    for (uid, unit) in flow.units.iter().enumerate() {
        // within a unit, occurrences ordered by canonical node id
        let mut occs: Vec<(usize, usize)> =
            unit.occurrences.iter().map(|(&d, &c)| (c, d)).collect();
        occs.sort_unstable();
        for (c, d) in occs {
            let ord = ordinals.entry(d).or_insert(0);
            *ord += 1;
            canon.insert((uid, d), c);
            statuses.push(VarStatus {
                var: ast.nodes[d].symbol.clone().unwrap_or_default(),
                ordinal: *ord,
                node: c,
            });
        }
    }
    StatusMap { canon, statuses }
}

/// Derives every variable status of the program, function by function in id
/// order.
pub fn version_variables(ast: &Ast) -> Result<Vec<VarStatus>, GraphError> {
    let res = resolve(ast)?;
    let flows = function_flows(ast, &res);
    let mut out = Vec::new();
    for flow in &flows {
        out.extend(assign_statuses(ast, flow).statuses);
    }
    Ok(out)
}

/// May-reach sets: for each unit, the latest statuses of each variable that
/// can immediately reach its entry. Loop back edges participate, so a status
/// inside a loop body can reach itself.
pub(super) fn reach_in(
    flow: &FnFlow,
    statuses: &StatusMap,
) -> Vec<BTreeMap<usize, BTreeSet<usize>>> {
    let n = flow.units.len();
    let mut reach: Vec<BTreeMap<usize, BTreeSet<usize>>> = vec![BTreeMap::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for u in 0..n {
            // out(u) = reach[u] overridden by u's own statuses
            let mut out = reach[u].clone();
            for &decl in flow.units[u].occurrences.keys() {
                let c = statuses.canon[&(u, decl)];
                out.insert(decl, BTreeSet::from([c]));
            }
            for &s in &flow.succs[u] {
                for (&decl, nodes) in &out {
                    let entry = reach[s].entry(decl).or_default();
                    for &nd in nodes {
                        if entry.insert(nd) {
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    reach
}
