//! MiniC frontend: lexer, parser, AST model and serialization.
//!
//! MiniC is a small C-like language (`.mc` files): `int`/`float`/`void`
//! functions, block statements, `if`/`while`/`do`/`for`, C expression
//! operators, calls and array subscripts. The parser produces a flat,
//! pre-order-numbered tree whose node kinds mirror clang's; identifier
//! spellings are carried only as bookkeeping for graph construction and
//! never act as model features.

mod ast;
mod lexer;
mod parser;
mod printer;

pub use ast::{ast_from_json, ast_to_json, Ast, AstJsonError, AstNode, NodeKind, Ty};
pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use parser::{parse, ParseError};
pub use printer::render_source;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontendError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Tokenizes and parses MiniC source in one step.
pub fn parse_source(source: &str) -> Result<Ast, FrontendError> {
    let tokens = tokenize(source)?;
    Ok(parse(&tokens)?)
}
