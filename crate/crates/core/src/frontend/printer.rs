use super::ast::{Ast, NodeKind, Ty};

/// Renders an `Ast` back to MiniC source.
///
/// Intended for freshly parsed (and possibly mutated) trees that still carry
/// `decl_types`; declarations on a tree without that bookkeeping fall back to
/// `int`. The output reparses to a tree with the same kinds and shape,
/// which is how the corpus generator validates its mutants.
pub fn render_source(ast: &Ast) -> String {
    let mut out = String::new();
    for &f in &ast.nodes[ast.root].children {
        render_funcdef(ast, f, &mut out);
        out.push('\n');
    }
    out
}

fn decl_ty(ast: &Ast, id: usize) -> Ty {
    ast.decl_types.get(&id).copied().unwrap_or(Ty::Int)
}

fn render_funcdef(ast: &Ast, f: usize, out: &mut String) {
    let node = &ast.nodes[f];
    out.push_str(decl_ty(ast, f).name());
    out.push(' ');
    out.push_str(node.symbol.as_deref().unwrap_or("_"));
    out.push('(');
    let params: Vec<usize> = node
        .children
        .iter()
        .copied()
        .filter(|&c| ast.nodes[c].kind == NodeKind::ParmVarDecl)
        .collect();
    for (i, &p) in params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(decl_ty(ast, p).name());
        out.push(' ');
        out.push_str(ast.nodes[p].symbol.as_deref().unwrap_or("_"));
    }
    out.push_str(") ");
    let body = *node.children.last().expect("function without body");
    render_stmt(ast, body, 0, out);
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn render_stmt(ast: &Ast, id: usize, depth: usize, out: &mut String) {
    let node = &ast.nodes[id];
    match node.kind {
        NodeKind::CompoundStmt => {
            out.push_str("{\n");
            for &c in &node.children {
                indent(depth + 1, out);
                render_stmt(ast, c, depth + 1, out);
                out.push('\n');
            }
            indent(depth, out);
            out.push('}');
        }
        NodeKind::DeclStmt => {
            render_decl(ast, id, out);
            out.push(';');
        }
        NodeKind::IfStmt => {
            out.push_str("if (");
            render_expr(ast, node.children[0], 0, out);
            out.push_str(") ");
            render_stmt(ast, node.children[1], depth, out);
            if let Some(&els) = node.children.get(2) {
                out.push_str(" else ");
                render_stmt(ast, els, depth, out);
            }
        }
        NodeKind::WhileStmt => {
            out.push_str("while (");
            render_expr(ast, node.children[0], 0, out);
            out.push_str(") ");
            render_stmt(ast, node.children[1], depth, out);
        }
        NodeKind::DoStmt => {
            out.push_str("do ");
            render_stmt(ast, node.children[0], depth, out);
            out.push_str(" while (");
            render_expr(ast, node.children[1], 0, out);
            out.push_str(");");
        }
        NodeKind::ForStmt => {
            let mask = node.op.as_deref().unwrap_or("");
            let mut idx = 0usize;
            out.push_str("for (");
            if mask.contains('i') {
                let init = node.children[idx];
                if ast.nodes[init].kind == NodeKind::DeclStmt {
                    render_decl(ast, init, out);
                } else {
                    render_expr(ast, init, 0, out);
                }
                idx += 1;
            }
            out.push_str("; ");
            if mask.contains('c') {
                render_expr(ast, node.children[idx], 0, out);
                idx += 1;
            }
            out.push_str("; ");
            if mask.contains('u') {
                render_expr(ast, node.children[idx], 0, out);
                idx += 1;
            }
            out.push_str(") ");
            render_stmt(ast, node.children[idx], depth, out);
        }
        NodeKind::ReturnStmt => {
            out.push_str("return");
            if let Some(&e) = node.children.first() {
                out.push(' ');
                render_expr(ast, e, 0, out);
            }
            out.push(';');
        }
        NodeKind::BreakStmt => out.push_str("break;"),
        NodeKind::ContinueStmt => out.push_str("continue;"),
        _ => {
            render_expr(ast, id, 0, out);
            out.push(';');
        }
    }
}

fn render_decl(ast: &Ast, id: usize, out: &mut String) {
    let node = &ast.nodes[id];
    let ty = node
        .children
        .first()
        .map(|&v| decl_ty(ast, v))
        .unwrap_or(Ty::Int);
    out.push_str(ty.name());
    out.push(' ');
    for (i, &v) in node.children.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(ast.nodes[v].symbol.as_deref().unwrap_or("_"));
        if let Some(&init) = ast.nodes[v].children.first() {
            out.push_str(" = ");
            render_expr(ast, init, 0, out);
        }
    }
}

// Binding strengths for parenthesization; assignment is loosest.
fn precedence(ast: &Ast, id: usize) -> u8 {
    let node = &ast.nodes[id];
    match node.kind {
        NodeKind::BinaryOperator | NodeKind::CompoundAssignOperator => {
            match node.op.as_deref().unwrap_or("") {
                "=" | "+=" | "-=" | "*=" | "/=" | "%=" | ">>=" | "<<=" => 1,
                "||" => 3,
                "&&" => 4,
                "==" | "!=" => 5,
                "<" | "<=" | ">" | ">=" => 6,
                "+" | "-" => 7,
                _ => 8,
            }
        }
        NodeKind::ConditionalOperator => 2,
        NodeKind::UnaryOperator => 9,
        NodeKind::ImplicitCastExpr => precedence(ast, node.children[0]),
        _ => 10,
    }
}

fn render_expr(ast: &Ast, id: usize, min_prec: u8, out: &mut String) {
    let node = &ast.nodes[id];
    let prec = precedence(ast, id);
    let needs_parens = prec < min_prec;
    if needs_parens {
        out.push('(');
    }
    match node.kind {
        NodeKind::BinaryOperator | NodeKind::CompoundAssignOperator => {
            let op = node.op.as_deref().unwrap_or("?");
            if prec == 1 {
                // right-associative
                render_expr(ast, node.children[0], prec + 1, out);
                out.push(' ');
                out.push_str(op);
                out.push(' ');
                render_expr(ast, node.children[1], prec, out);
            } else {
                render_expr(ast, node.children[0], prec, out);
                out.push(' ');
                out.push_str(op);
                out.push(' ');
                render_expr(ast, node.children[1], prec + 1, out);
            }
        }
        NodeKind::ConditionalOperator => {
            render_expr(ast, node.children[0], 3, out);
            out.push_str(" ? ");
            render_expr(ast, node.children[1], 0, out);
            out.push_str(" : ");
            render_expr(ast, node.children[2], 2, out);
        }
        NodeKind::UnaryOperator => {
            let op = node.op.as_deref().unwrap_or("?");
            let operand = node.children[0];
            let postfix = matches!(op, "++" | "--")
                && matches!(
                    ast.nodes[operand].kind,
                    NodeKind::DeclRefExpr | NodeKind::ArraySubscriptExpr
                );
            if postfix {
                render_expr(ast, operand, 10, out);
                out.push_str(op);
            } else {
                out.push_str(op);
                if op == "-" || op == "!" {
                    render_expr(ast, operand, 9, out);
                } else {
                    render_expr(ast, operand, 10, out);
                }
            }
        }
        NodeKind::CallExpr => {
            out.push_str(node.symbol.as_deref().unwrap_or("_"));
            out.push('(');
            for (i, &a) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_expr(ast, a, 0, out);
            }
            out.push(')');
        }
        NodeKind::ArraySubscriptExpr => {
            render_expr(ast, node.children[0], 10, out);
            out.push('[');
            render_expr(ast, node.children[1], 0, out);
            out.push(']');
        }
        NodeKind::DeclRefExpr => out.push_str(node.symbol.as_deref().unwrap_or("_")),
        NodeKind::IntegerLiteral | NodeKind::FloatingLiteral | NodeKind::StringLiteral => {
            out.push_str(node.literal.as_deref().unwrap_or("0"))
        }
        NodeKind::ImplicitCastExpr => render_expr(ast, node.children[0], min_prec, out),
        other => panic!("render_expr on non-expression kind {other}"),
    }
    if needs_parens {
        out.push(')');
    }
}
