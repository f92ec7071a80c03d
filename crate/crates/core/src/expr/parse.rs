//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := atom ('^' uint)?
//! atom   := number | ident | '(' expr ')' | func '(' expr ')' | '-' atom
//! func   := sin | cos | exp | tanh | sqrt
//! ```
//!
//! Whitespace is insignificant. Identifiers must be declared up front;
//! unknown names are rejected at parse time.

use super::{BinOp, Expr, UnOp, VarSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnknownIdentifier(String),
    InvalidNumber,
    ExpectedUintExponent,
    TrailingInput,
}

/// Syntax or resolution error, with the byte offset where it occurred.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parse error at offset {offset}: {kind:?}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Parse against the variable layout of a system (states then inputs).
pub fn parse(text: &str, vars: &VarSpace) -> Result<Expr, ParseError> {
    parse_with_names(text, vars.names())
}

/// Parse against an arbitrary ordered name list.
pub fn parse_with_names(text: &str, names: &[String]) -> Result<Expr, ParseError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        names,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.err(ParseErrorKind::TrailingInput));
    }
    Ok(e)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    names: &'a [String],
}

impl<'a> Parser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.factor()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    let rhs = self.factor()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.peek().map_or(false, |c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == start {
                return Err(self.err(ParseErrorKind::ExpectedUintExponent));
            }
            let k: u32 = std::str::from_utf8(&self.bytes[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::ExpectedUintExponent,
                })?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.err(ParseErrorKind::UnexpectedEnd)),
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                // A minus directly before a literal folds into the constant;
                // anything else stays an explicit negation node.
                if self
                    .peek()
                    .map_or(false, |c| c.is_ascii_digit() || c == b'.')
                {
                    match self.number()? {
                        Expr::Const(v) => Ok(Expr::Const(-v)),
                        _ => unreachable!(),
                    }
                } else {
                    let inner = self.atom()?;
                    Ok(Expr::Un(UnOp::Neg, Box::new(inner)))
                }
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.err(ParseErrorKind::UnexpectedChar(c as char))),
        }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(c) => self.err(ParseErrorKind::UnexpectedChar(c as char)),
            None => self.err(ParseErrorKind::UnexpectedEnd),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().map_or(false, |c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.peek().map_or(false, |c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.peek().map_or(false, |c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == digits {
                // Not an exponent after all (e.g. an identifier follows).
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::InvalidNumber,
            })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .map_or(false, |c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let func = match name {
            "sin" => Some(UnOp::Sin),
            "cos" => Some(UnOp::Cos),
            "exp" => Some(UnOp::Exp),
            "tanh" => Some(UnOp::Tanh),
            "sqrt" => Some(UnOp::Sqrt),
            _ => None,
        };
        if let Some(op) = func {
            self.skip_ws();
            if self.peek() != Some(b'(') {
                return Err(self.unexpected());
            }
            self.pos += 1;
            self.skip_ws();
            let arg = self.expr()?;
            self.skip_ws();
            if self.peek() != Some(b')') {
                return Err(self.unexpected());
            }
            self.pos += 1;
            return Ok(Expr::Un(op, Box::new(arg)));
        }
        match self.names.iter().position(|n| n == name) {
            Some(i) => Ok(Expr::Var(i)),
            None => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
            }),
        }
    }
}
