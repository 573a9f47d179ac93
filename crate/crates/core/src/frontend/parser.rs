use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::ast::{Ast, AstNode, NodeKind, Ty};
use super::lexer::{Token, TokenKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at {line}:{col}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub expected: String,
    pub found: String,
}

const ASSIGN_OPS: [&str; 8] = ["=", "+=", "-=", "*=", "/=", "%=", ">>=", "<<="];

#[derive(Clone, Copy)]
struct ExprInfo {
    id: usize,
    ty: Option<Ty>,
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    nodes: Vec<AstNode>,
    lines: Vec<u32>,
    decl_types: BTreeMap<usize, Ty>,
    fn_sigs: HashMap<String, (Ty, Vec<Ty>)>,
    scopes: Vec<HashMap<String, Ty>>,
}

/// Parses a token stream into an `Ast` rooted at a TranslationUnit.
pub fn parse(tokens: &[Token]) -> Result<Ast, ParseError> {
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        nodes: Vec::new(),
        lines: Vec::new(),
        decl_types: BTreeMap::new(),
        fn_sigs: scan_signatures(tokens),
        scopes: Vec::new(),
    };
    let root = p.mk(NodeKind::TranslationUnit);
    while !p.at_end() {
        let f = p.parse_funcdef()?;
        p.nodes[root].children.push(f);
    }
    Ok(canonicalize(root, p.nodes, p.lines, p.decl_types))
}

/// Collects `name -> (return type, parameter types)` for every top-level
/// function definition, so call expressions can be typed before the callee's
/// body has been parsed.
fn scan_signatures(tokens: &[Token]) -> HashMap<String, (Ty, Vec<Ty>)> {
    let mut sigs = HashMap::new();
    let mut depth = 0usize;
    let mut i = 0usize;
    while i < tokens.len() {
        match tokens[i].text.as_str() {
            "{" => depth += 1,
            "}" => depth = depth.saturating_sub(1),
            _ => {
                if depth == 0 {
                    if let Some(ret) = type_keyword(&tokens[i]) {
                        if i + 2 < tokens.len()
                            && tokens[i + 1].kind == TokenKind::Identifier
                            && tokens[i + 2].text == "("
                        {
                            let name = tokens[i + 1].text.clone();
                            let mut params = Vec::new();
                            let mut j = i + 3;
                            while j < tokens.len() && tokens[j].text != ")" {
                                if let Some(t) = type_keyword(&tokens[j]) {
                                    params.push(t);
                                }
                                j += 1;
                            }
                            sigs.insert(name, (ret, params));
                            i = j;
                        }
                    }
                }
            }
        }
        i += 1;
    }
    sigs
}

fn type_keyword(tok: &Token) -> Option<Ty> {
    if tok.kind != TokenKind::Keyword {
        return None;
    }
    match tok.text.as_str() {
        "int" => Some(Ty::Int),
        "float" => Some(Ty::Float),
        "void" => Some(Ty::Void),
        _ => None,
    }
}

/// Renumbers nodes into pre-order so that ids are 0..N-1, the root is 0, and
/// every parent id is smaller than its children's. Child order is preserved.
fn canonicalize(
    root: usize,
    nodes: Vec<AstNode>,
    lines: Vec<u32>,
    decl_types: BTreeMap<usize, Ty>,
) -> Ast {
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        order.push(id);
        for &c in nodes[id].children.iter().rev() {
            stack.push(c);
        }
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    for (new_id, &old_id) in order.iter().enumerate() {
        remap[old_id] = new_id;
    }
    let mut new_nodes = vec![AstNode::new(0, NodeKind::TranslationUnit); order.len()];
    let mut new_lines = vec![0u32; order.len()];
    for (old_id, node) in nodes.into_iter().enumerate() {
        let new_id = remap[old_id];
        if new_id == usize::MAX {
            continue;
        }
        new_lines[new_id] = lines[old_id];
        new_nodes[new_id] = AstNode {
            id: new_id,
            kind: node.kind,
            op: node.op,
            symbol: node.symbol,
            literal: node.literal,
            children: node.children.iter().map(|&c| remap[c]).collect(),
        };
    }
    let new_decl_types = decl_types
        .into_iter()
        .map(|(id, ty)| (remap[id], ty))
        .collect();
    Ast {
        root: remap[root],
        nodes: new_nodes,
        lines: new_lines,
        decl_types: new_decl_types,
    }
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_text(&self) -> &str {
        self.peek().map(|t| t.text.as_str()).unwrap_or("")
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(t) => ParseError {
                line: t.line,
                col: t.col,
                expected: expected.into(),
                found: format!("'{}'", t.text),
            },
            None => {
                let (line, col) = self
                    .toks
                    .last()
                    .map(|t| (t.line, t.col + t.text.len() as u32))
                    .unwrap_or((1, 1));
                ParseError {
                    line,
                    col,
                    expected: expected.into(),
                    found: "end of input".into(),
                }
            }
        }
    }

    fn expect(&mut self, text: &str) -> Result<(), ParseError> {
        if self.peek_text() == text {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("'{text}'")))
        }
    }

    fn expect_type(&mut self) -> Result<Ty, ParseError> {
        let ty = self
            .peek()
            .and_then(type_keyword)
            .ok_or_else(|| self.err("a type"))?;
        self.pos += 1;
        Ok(ty)
    }

    fn expect_identifier(&mut self) -> Result<(String, u32), ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let out = (t.text.clone(), t.line);
                self.pos += 1;
                Ok(out)
            }
            _ => Err(self.err("an identifier")),
        }
    }

    fn mk(&mut self, kind: NodeKind) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode::new(id, kind));
        let line = self
            .peek()
            .map(|t| t.line)
            .unwrap_or_else(|| self.toks.last().map(|t| t.line).unwrap_or(1));
        self.lines.push(line);
        id
    }

    fn lookup_var(&self, name: &str) -> Option<Ty> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn bind_var(&mut self, name: &str, ty: Ty) {
        if let Some(scope) = self.scopes.last_mut() {
            scope.insert(name.to_string(), ty);
        }
    }

    // unit := {funcdef}
    fn parse_funcdef(&mut self) -> Result<usize, ParseError> {
        let ret = self.expect_type()?;
        let (name, _) = self.expect_identifier()?;
        let f = self.mk(NodeKind::FunctionDecl);
        self.nodes[f].symbol = Some(name);
        self.decl_types.insert(f, ret);
        self.expect("(")?;
        self.scopes.push(HashMap::new());
        if self.peek_text() != ")" {
            loop {
                let ty = self.expect_type()?;
                if ty == Ty::Void {
                    return Err(self.err("a non-void parameter type"));
                }
                let (pname, _) = self.expect_identifier()?;
                if self.peek_text() == "[" {
                    self.bump();
                    if self.peek().map(|t| t.kind) == Some(TokenKind::IntegerLiteral) {
                        self.bump();
                    }
                    self.expect("]")?;
                }
                let p = self.mk(NodeKind::ParmVarDecl);
                self.nodes[p].symbol = Some(pname.clone());
                self.decl_types.insert(p, ty);
                self.bind_var(&pname, ty);
                self.nodes[f].children.push(p);
                if self.peek_text() == "," {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        let body = self.parse_block()?;
        self.nodes[f].children.push(body);
        self.scopes.pop();
        Ok(f)
    }

    fn parse_block(&mut self) -> Result<usize, ParseError> {
        let b = self.mk(NodeKind::CompoundStmt);
        self.expect("{")?;
        self.scopes.push(HashMap::new());
        while self.peek_text() != "}" {
            if self.at_end() {
                return Err(self.err("'}'"));
            }
            let s = self.parse_stmt()?;
            self.nodes[b].children.push(s);
        }
        self.scopes.pop();
        self.expect("}")?;
        Ok(b)
    }

    fn parse_stmt(&mut self) -> Result<usize, ParseError> {
        match self.peek_text() {
            "{" => self.parse_block(),
            "if" => self.parse_if(),
            "while" => self.parse_while(),
            "do" => self.parse_do(),
            "for" => self.parse_for(),
            "return" => self.parse_return(),
            "break" => {
                self.bump();
                let n = self.mk(NodeKind::BreakStmt);
                self.expect(";")?;
                Ok(n)
            }
            "continue" => {
                self.bump();
                let n = self.mk(NodeKind::ContinueStmt);
                self.expect(";")?;
                Ok(n)
            }
            "int" | "float" | "void" => {
                let d = self.parse_decl()?;
                self.expect(";")?;
                Ok(d)
            }
            _ => {
                let e = self.parse_expr()?;
                self.expect(";")?;
                Ok(e.id)
            }
        }
    }

    // decl := type declarator {"," declarator}
    // declarator := ident ["[" [integer] "]"] ["=" expr]
    fn parse_decl(&mut self) -> Result<usize, ParseError> {
        let ty = self.expect_type()?;
        if ty == Ty::Void {
            return Err(self.err("a non-void variable type"));
        }
        let d = self.mk(NodeKind::DeclStmt);
        loop {
            let (name, _) = self.expect_identifier()?;
            let v = self.mk(NodeKind::VarDecl);
            self.nodes[v].symbol = Some(name.clone());
            self.decl_types.insert(v, ty);
            // Array sizes live in the type system, not the AST.
            if self.peek_text() == "[" {
                self.bump();
                if self.peek().map(|t| t.kind) == Some(TokenKind::IntegerLiteral) {
                    self.bump();
                }
                self.expect("]")?;
            }
            self.bind_var(&name, ty);
            if self.peek_text() == "=" {
                self.bump();
                let init = self.parse_assignment()?;
                let init = self.coerce(init, ty);
                self.nodes[v].children.push(init.id);
            }
            self.nodes[d].children.push(v);
            if self.peek_text() == "," {
                self.bump();
            } else {
                break;
            }
        }
        Ok(d)
    }

    fn parse_if(&mut self) -> Result<usize, ParseError> {
        let n = self.mk(NodeKind::IfStmt);
        self.bump();
        self.expect("(")?;
        let cond = self.parse_expr()?;
        self.expect(")")?;
        let then = self.parse_stmt()?;
        self.nodes[n].children.push(cond.id);
        self.nodes[n].children.push(then);
        if self.peek_text() == "else" {
            self.bump();
            let els = self.parse_stmt()?;
            self.nodes[n].children.push(els);
        }
        Ok(n)
    }

    fn parse_while(&mut self) -> Result<usize, ParseError> {
        let n = self.mk(NodeKind::WhileStmt);
        self.bump();
        self.expect("(")?;
        let cond = self.parse_expr()?;
        self.expect(")")?;
        let body = self.parse_stmt()?;
        self.nodes[n].children = vec![cond.id, body];
        Ok(n)
    }

    fn parse_do(&mut self) -> Result<usize, ParseError> {
        let n = self.mk(NodeKind::DoStmt);
        self.bump();
        let body = self.parse_stmt()?;
        if self.peek_text() != "while" {
            return Err(self.err("'while'"));
        }
        self.bump();
        self.expect("(")?;
        let cond = self.parse_expr()?;
        self.expect(")")?;
        self.expect(";")?;
        self.nodes[n].children = vec![body, cond.id];
        Ok(n)
    }

    // ForStmt children are the present parts of (init, cond, update) followed
    // by the body; `op` records which parts exist so the data-flow walker can
    // tell them apart.
    fn parse_for(&mut self) -> Result<usize, ParseError> {
        let n = self.mk(NodeKind::ForStmt);
        self.bump();
        self.expect("(")?;
        self.scopes.push(HashMap::new());
        let mut mask = String::new();
        if self.peek_text() != ";" {
            let init = if matches!(self.peek_text(), "int" | "float" | "void") {
                self.parse_decl()?
            } else {
                self.parse_expr()?.id
            };
            self.nodes[n].children.push(init);
            mask.push('i');
        }
        self.expect(";")?;
        if self.peek_text() != ";" {
            let cond = self.parse_expr()?;
            self.nodes[n].children.push(cond.id);
            mask.push('c');
        }
        self.expect(";")?;
        if self.peek_text() != ")" {
            let update = self.parse_expr()?;
            self.nodes[n].children.push(update.id);
            mask.push('u');
        }
        self.expect(")")?;
        let body = self.parse_stmt()?;
        self.nodes[n].children.push(body);
        self.nodes[n].op = Some(mask);
        self.scopes.pop();
        Ok(n)
    }

    fn parse_return(&mut self) -> Result<usize, ParseError> {
        let n = self.mk(NodeKind::ReturnStmt);
        self.bump();
        if self.peek_text() != ";" {
            let e = self.parse_expr()?;
            self.nodes[n].children.push(e.id);
        }
        self.expect(";")?;
        Ok(n)
    }

    fn parse_expr(&mut self) -> Result<ExprInfo, ParseError> {
        self.parse_assignment()
    }

    fn parse_assignment(&mut self) -> Result<ExprInfo, ParseError> {
        let lhs = self.parse_ternary()?;
        let op_text = self.peek_text().to_string();
        if !ASSIGN_OPS.contains(&op_text.as_str()) {
            return Ok(lhs);
        }
        let lvalue = matches!(
            self.nodes[lhs.id].kind,
            NodeKind::DeclRefExpr | NodeKind::ArraySubscriptExpr
        );
        if !lvalue {
            return Err(self.err("an assignable expression before assignment"));
        }
        self.bump();
        let rhs = self.parse_assignment()?;
        let rhs = match lhs.ty {
            Some(t) if t != Ty::Void => self.coerce(rhs, t),
            _ => rhs,
        };
        let kind = if op_text == "=" {
            NodeKind::BinaryOperator
        } else {
            NodeKind::CompoundAssignOperator
        };
        let n = self.mk(kind);
        self.nodes[n].op = Some(op_text);
        self.nodes[n].children = vec![lhs.id, rhs.id];
        Ok(ExprInfo { id: n, ty: lhs.ty })
    }

    fn parse_ternary(&mut self) -> Result<ExprInfo, ParseError> {
        let cond = self.parse_binary(0)?;
        if self.peek_text() != "?" {
            return Ok(cond);
        }
        self.bump();
        let then = self.parse_expr()?;
        self.expect(":")?;
        let els = self.parse_ternary()?;
        let (then, els, ty) = self.unify_arith(then, els);
        let n = self.mk(NodeKind::ConditionalOperator);
        self.nodes[n].children = vec![cond.id, then.id, els.id];
        Ok(ExprInfo { id: n, ty })
    }

    // Binary precedence tiers, loosest first.
    const TIERS: [&'static [&'static str]; 6] = [
        &["||"],
        &["&&"],
        &["==", "!="],
        &["<", "<=", ">", ">="],
        &["+", "-"],
        &["*", "/", "%"],
    ];

    fn parse_binary(&mut self, tier: usize) -> Result<ExprInfo, ParseError> {
        if tier == Self::TIERS.len() {
            return self.parse_unary();
        }
        let mut lhs = self.parse_binary(tier + 1)?;
        while Self::TIERS[tier].contains(&self.peek_text()) {
            let op_text = self.bump().unwrap().text.clone();
            let rhs = self.parse_binary(tier + 1)?;
            let arithmetic = tier >= 4;
            let (lhs2, rhs2, unified) = self.unify_arith(lhs, rhs);
            let ty = if arithmetic { unified } else { Some(Ty::Int) };
            let n = self.mk(NodeKind::BinaryOperator);
            self.nodes[n].op = Some(op_text);
            self.nodes[n].children = vec![lhs2.id, rhs2.id];
            lhs = ExprInfo { id: n, ty };
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<ExprInfo, ParseError> {
        let op_text = self.peek_text().to_string();
        if matches!(op_text.as_str(), "!" | "-" | "++" | "--") {
            self.bump();
            let operand = self.parse_unary()?;
            let n = self.mk(NodeKind::UnaryOperator);
            self.nodes[n].op = Some(op_text.clone());
            self.nodes[n].children = vec![operand.id];
            let ty = if op_text == "!" {
                Some(Ty::Int)
            } else {
                operand.ty
            };
            return Ok(ExprInfo { id: n, ty });
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<ExprInfo, ParseError> {
        let mut e = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let name = t.text.clone();
                if self.toks.get(self.pos + 1).map(|t| t.text.as_str()) == Some("(") {
                    self.bump();
                    self.parse_call(name)?
                } else {
                    self.bump();
                    let n = self.mk(NodeKind::DeclRefExpr);
                    self.nodes[n].symbol = Some(name.clone());
                    ExprInfo {
                        id: n,
                        ty: self.lookup_var(&name),
                    }
                }
            }
            _ => self.parse_primary()?,
        };
        loop {
            match self.peek_text() {
                "[" => {
                    self.bump();
                    let idx = self.parse_expr()?;
                    let idx = self.coerce(idx, Ty::Int);
                    self.expect("]")?;
                    let n = self.mk(NodeKind::ArraySubscriptExpr);
                    self.nodes[n].children = vec![e.id, idx.id];
                    e = ExprInfo { id: n, ty: e.ty };
                }
                "++" | "--" => {
                    let op_text = self.bump().unwrap().text.clone();
                    let n = self.mk(NodeKind::UnaryOperator);
                    self.nodes[n].op = Some(op_text);
                    self.nodes[n].children = vec![e.id];
                    e = ExprInfo { id: n, ty: e.ty };
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn parse_call(&mut self, name: String) -> Result<ExprInfo, ParseError> {
        self.expect("(")?;
        let n = self.mk(NodeKind::CallExpr);
        self.nodes[n].symbol = Some(name.clone());
        let sig = self.fn_sigs.get(&name).cloned();
        let mut arg_idx = 0usize;
        if self.peek_text() != ")" {
            loop {
                let arg = self.parse_assignment()?;
                let arg = match sig.as_ref().and_then(|(_, ps)| ps.get(arg_idx)) {
                    Some(&want) => self.coerce(arg, want),
                    None => arg,
                };
                self.nodes[n].children.push(arg.id);
                arg_idx += 1;
                if self.peek_text() == "," {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        Ok(ExprInfo {
            id: n,
            ty: sig.map(|(ret, _)| ret),
        })
    }

    fn parse_primary(&mut self) -> Result<ExprInfo, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::IntegerLiteral => {
                let text = t.text.clone();
                self.bump();
                let n = self.mk(NodeKind::IntegerLiteral);
                self.nodes[n].literal = Some(text);
                Ok(ExprInfo {
                    id: n,
                    ty: Some(Ty::Int),
                })
            }
            Some(t) if t.kind == TokenKind::FloatLiteral => {
                let text = t.text.clone();
                self.bump();
                let n = self.mk(NodeKind::FloatingLiteral);
                self.nodes[n].literal = Some(text);
                Ok(ExprInfo {
                    id: n,
                    ty: Some(Ty::Float),
                })
            }
            Some(t) if t.kind == TokenKind::StringLiteral => {
                let text = t.text.clone();
                self.bump();
                let n = self.mk(NodeKind::StringLiteral);
                self.nodes[n].literal = Some(text);
                Ok(ExprInfo { id: n, ty: None })
            }
            Some(t) if t.text == "(" => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => Err(self.err("an expression")),
        }
    }

    /// Wraps `expr` in an ImplicitCastExpr when it is an int/float variable
    /// reference or literal used where the other numeric type is required,
    /// approximating clang's implicit numeric conversions.
    fn coerce(&mut self, expr: ExprInfo, want: Ty) -> ExprInfo {
        let Some(have) = expr.ty else { return expr };
        if have == want || want == Ty::Void || have == Ty::Void {
            return expr;
        }
        let castable = matches!(
            self.nodes[expr.id].kind,
            NodeKind::DeclRefExpr | NodeKind::IntegerLiteral | NodeKind::FloatingLiteral
        );
        if !castable {
            return expr;
        }
        let n = self.mk(NodeKind::ImplicitCastExpr);
        self.nodes[n].children = vec![expr.id];
        ExprInfo {
            id: n,
            ty: Some(want),
        }
    }

    /// Applies the usual arithmetic conversions to an operand pair.
    fn unify_arith(&mut self, a: ExprInfo, b: ExprInfo) -> (ExprInfo, ExprInfo, Option<Ty>) {
        match (a.ty, b.ty) {
            (Some(Ty::Int), Some(Ty::Float)) => {
                let a2 = self.coerce(a, Ty::Float);
                (a2, b, Some(Ty::Float))
            }
            (Some(Ty::Float), Some(Ty::Int)) => {
                let b2 = self.coerce(b, Ty::Float);
                (a, b2, Some(Ty::Float))
            }
            (Some(x), Some(y)) if x == y => (a, b, Some(x)),
            _ => (a, b, a.ty.or(b.ty)),
        }
    }
}
