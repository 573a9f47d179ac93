use thiserror::Error;

/// Lexical token categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identifier,
    IntegerLiteral,
    FloatLiteral,
    StringLiteral,
    Keyword,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based source line.
    pub line: u32,
    /// 1-based source column.
    pub col: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("lex error at {line}:{col}: {message}")]
pub struct LexError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

pub const KEYWORDS: [&str; 11] = [
    "int", "float", "void", "if", "else", "while", "do", "for", "return", "break", "continue",
];

// Longest match first.
const OPERATORS: [&str; 25] = [
    ">>=", "<<=", "+=", "-=", "*=", "/=", "%=", "==", "!=", "<=", ">=", "&&", "||", "++", "--",
    "=", "+", "-", "*", "/", "%", "<", ">", "!", "?",
];

const PUNCTUATION: [char; 8] = ['(', ')', '{', '}', '[', ']', ',', ';'];

struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    fn error(&self, message: impl Into<String>) -> LexError {
        LexError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }
}

/// Splits MiniC source text into tokens, dropping whitespace and comments.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut s = Scanner {
        src: source.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut tokens = Vec::new();

    'outer: while let Some(b) = s.peek() {
        if b.is_ascii_whitespace() {
            s.bump();
            continue;
        }
        if s.starts_with("//") {
            while let Some(b) = s.peek() {
                if b == b'\n' {
                    break;
                }
                s.bump();
            }
            continue;
        }
        if s.starts_with("/*") {
            let (line, col) = (s.line, s.col);
            s.bump();
            s.bump();
            while !s.starts_with("*/") {
                if s.bump().is_none() {
                    return Err(LexError {
                        line,
                        col,
                        message: "unterminated block comment".into(),
                    });
                }
            }
            s.bump();
            s.bump();
            continue;
        }

        let (line, col) = (s.line, s.col);

        if b.is_ascii_alphabetic() || b == b'_' {
            let start = s.pos;
            while let Some(c) = s.peek() {
                if c.is_ascii_alphanumeric() || c == b'_' {
                    s.bump();
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&s.src[start..s.pos])
                .unwrap()
                .to_string();
            let kind = if KEYWORDS.contains(&text.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token {
                kind,
                text,
                line,
                col,
            });
            continue;
        }

        if b.is_ascii_digit() {
            let start = s.pos;
            while s.peek().is_some_and(|c| c.is_ascii_digit()) {
                s.bump();
            }
            let mut kind = TokenKind::IntegerLiteral;
            if s.peek() == Some(b'.') && s.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
                kind = TokenKind::FloatLiteral;
                s.bump();
                while s.peek().is_some_and(|c| c.is_ascii_digit()) {
                    s.bump();
                }
            }
            let text = std::str::from_utf8(&s.src[start..s.pos])
                .unwrap()
                .to_string();
            tokens.push(Token {
                kind,
                text,
                line,
                col,
            });
            continue;
        }

        if b == b'"' {
            let start = s.pos;
            s.bump();
            loop {
                match s.peek() {
                    None | Some(b'\n') => {
                        return Err(LexError {
                            line,
                            col,
                            message: "unterminated string literal".into(),
                        })
                    }
                    Some(b'\\') => {
                        s.bump();
                        if s.bump().is_none() {
                            return Err(LexError {
                                line,
                                col,
                                message: "unterminated string literal".into(),
                            });
                        }
                    }
                    Some(b'"') => {
                        s.bump();
                        let text = std::str::from_utf8(&s.src[start..s.pos])
                            .unwrap()
                            .to_string();
                        tokens.push(Token {
                            kind: TokenKind::StringLiteral,
                            text,
                            line,
                            col,
                        });
                        continue 'outer;
                    }
                    Some(_) => {
                        s.bump();
                    }
                }
            }
        }

        if PUNCTUATION.contains(&(b as char)) {
            s.bump();
            tokens.push(Token {
                kind: TokenKind::Punctuation,
                text: (b as char).to_string(),
                line,
                col,
            });
            continue;
        }

        // `:` only occurs as the ternary separator; classified as operator.
        if b == b':' {
            s.bump();
            tokens.push(Token {
                kind: TokenKind::Operator,
                text: ":".into(),
                line,
                col,
            });
            continue;
        }

        for op in OPERATORS {
            if s.starts_with(op) {
                for _ in 0..op.len() {
                    s.bump();
                }
                tokens.push(Token {
                    kind: TokenKind::Operator,
                    text: op.to_string(),
                    line,
                    col,
                });
                continue 'outer;
            }
        }

        return Err(s.error(format!("illegal character '{}'", b as char)));
    }

    Ok(tokens)
}
