//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 't' | '(' expr ')' | 'abs' '(' expr ')' | 'exp' '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. Constant
//! subexpressions are folded while parsing.

use super::{Expr, ExprError};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Token::Plus),
            '-' => Some(Token::Minus),
            '*' => Some(Token::Star),
            '/' => Some(Token::Slash),
            '^' => Some(Token::Caret),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, i));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Token::Number(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Token::Ident(src[start..i].to_string()), start));
        } else {
            return Err(ExprError::Syntax {
                pos: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    out.push((Token::End, src.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.cursor].0
    }

    fn pos(&self) -> usize {
        self.tokens[self.cursor].1
    }

    fn advance(&mut self) -> (Token, usize) {
        let tok = self.tokens[self.cursor].clone();
        if self.cursor + 1 < self.tokens.len() {
            self.cursor += 1;
        }
        tok
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            Err(ExprError::Syntax {
                pos: self.pos(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Token::Plus => {
                    self.advance();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Token::Minus => {
                    self.advance();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Token::Star => {
                    self.advance();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Token::Slash => {
                    let (_, pos) = self.advance();
                    let rhs = self.unary()?;
                    match rhs {
                        Expr::Const(c) if c == 0.0 => return Err(ExprError::DivisionByZero { pos }),
                        Expr::Const(c) => lhs = Expr::mul(lhs, Expr::Const(1.0 / c)),
                        _ => return Err(ExprError::NonConstantDivision { pos }),
                    }
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Token::Minus => {
                self.advance();
                Ok(Expr::neg(self.unary()?))
            }
            Token::Plus => {
                self.advance();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() != Token::Caret {
            return Ok(base);
        }
        let (_, pos) = self.advance();
        let exponent = match self.unary()? {
            Expr::Const(e) => e,
            _ => {
                return Err(ExprError::InvalidExponent {
                    pos,
                    message: "exponent must be a constant".into(),
                })
            }
        };
        match base {
            Expr::Const(b) => {
                let v = b.powf(exponent);
                if v.is_finite() {
                    Ok(Expr::Const(v))
                } else {
                    Err(ExprError::InvalidExponent {
                        pos,
                        message: format!("{b}^{exponent} is not a finite real"),
                    })
                }
            }
            Expr::AbsPow(inner, r) => {
                let s = r * exponent;
                if s > 0.0 {
                    Ok(Expr::AbsPow(inner, s))
                } else {
                    Err(ExprError::NegativeAbsExponent { pos, exponent: s })
                }
            }
            base if exponent.fract() == 0.0 && exponent >= 0.0 && exponent <= u32::MAX as f64 => {
                Ok(Expr::pow(base, exponent as u32))
            }
            _ if exponent.fract() == 0.0 && exponent < 0.0 => {
                Err(ExprError::NonConstantDivision { pos })
            }
            _ => Err(ExprError::InvalidExponent {
                pos,
                message: format!("non-integer power {exponent} needs an abs() base"),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let (tok, pos) = self.advance();
        match tok {
            Token::Number(v) => Ok(Expr::Const(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Token::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::X),
                "t" => Ok(Expr::T),
                "abs" | "exp" => {
                    self.expect(Token::LParen, &format!("`(` after `{name}`"))?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen, "`)`")?;
                    if name == "abs" {
                        Expr::abs_pow(arg, 1.0)
                    } else {
                        Ok(Expr::exp(arg))
                    }
                }
                other => Err(ExprError::Syntax {
                    pos,
                    message: format!("unknown identifier `{other}`"),
                }),
            },
            Token::End => Err(ExprError::Syntax {
                pos,
                message: "unexpected end of input".into(),
            }),
            other => Err(ExprError::Syntax {
                pos,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// Parse an expression over `x` and `t`.
pub fn parse(source: &str) -> Result<Expr, ExprError> {
    let mut parser = Parser {
        tokens: tokenize(source)?,
        cursor: 0,
    };
    let expr = parser.expr()?;
    if *parser.peek() != Token::End {
        return Err(ExprError::Syntax {
            pos: parser.pos(),
            message: "trailing input".into(),
        });
    }
    Ok(expr)
}
