//! A small arithmetic expression grammar for declaring deformation
//! components in configuration files.
//!
//! Supported: `+ - * / ^`, `pow(a, b)`, `exp`, `log`, `sin`, `cos`,
//! numeric literals, and a single free variable (`s`, `t` or `r`).
//! Expressions can be evaluated and differentiated symbolically.

use crate::{Error, Result};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sin,
    Cos,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var,
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, Arc<Node>),
    Neg(Arc<Node>),
    Call(Func, Arc<Node>),
}

/// A parsed expression in one variable.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Arc<Node>,
    var: char,
    text: String,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)
    }
}

impl Expr {
    /// Parse `text` with `var` as the free variable name.
    pub fn parse(text: &str, var: char) -> Result<Self> {
        let tokens = tokenize(text, var)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expression(0)?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in `{text}`"
            )));
        }
        Ok(Expr {
            root: Arc::new(root),
            var,
            text: text.to_string(),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_node(&self.root, x)
    }

    /// Symbolic derivative with respect to the free variable.
    pub fn derivative(&self) -> Expr {
        Expr {
            root: Arc::new(diff(&self.root)),
            var: self.var,
            text: format!("d/d{}({})", self.var, self.text),
        }
    }
}

fn eval_node(n: &Node, x: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var => x,
        Node::Add(a, b) => eval_node(a, x) + eval_node(b, x),
        Node::Sub(a, b) => eval_node(a, x) - eval_node(b, x),
        Node::Mul(a, b) => eval_node(a, x) * eval_node(b, x),
        Node::Div(a, b) => eval_node(a, x) / eval_node(b, x),
        Node::Pow(a, b) => eval_node(a, x).powf(eval_node(b, x)),
        Node::Neg(a) => -eval_node(a, x),
        Node::Call(f, a) => {
            let v = eval_node(a, x);
            match f {
                Func::Exp => v.exp(),
                Func::Log => v.ln(),
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
            }
        }
    }
}

fn diff(n: &Node) -> Node {
    match n {
        Node::Num(_) => Node::Num(0.0),
        Node::Var => Node::Num(1.0),
        Node::Add(a, b) => Node::Add(Arc::new(diff(a)), Arc::new(diff(b))),
        Node::Sub(a, b) => Node::Sub(Arc::new(diff(a)), Arc::new(diff(b))),
        Node::Mul(a, b) => Node::Add(
            Arc::new(Node::Mul(Arc::new(diff(a)), b.clone())),
            Arc::new(Node::Mul(a.clone(), Arc::new(diff(b)))),
        ),
        Node::Div(a, b) => Node::Div(
            Arc::new(Node::Sub(
                Arc::new(Node::Mul(Arc::new(diff(a)), b.clone())),
                Arc::new(Node::Mul(a.clone(), Arc::new(diff(b)))),
            )),
            Arc::new(Node::Mul(b.clone(), b.clone())),
        ),
        // d(a^b) = a^b * (b' ln a + b a' / a); exact when either side is constant.
        Node::Pow(a, b) => {
            let a_of_b = Node::Pow(a.clone(), b.clone());
            let ln_a = Node::Call(Func::Log, a.clone());
            let term1 = Node::Mul(Arc::new(diff(b)), Arc::new(ln_a));
            let term2 = Node::Div(Arc::new(Node::Mul(b.clone(), Arc::new(diff(a)))), a.clone());
            Node::Mul(
                Arc::new(a_of_b),
                Arc::new(Node::Add(Arc::new(term1), Arc::new(term2))),
            )
        }
        Node::Neg(a) => Node::Neg(Arc::new(diff(a))),
        Node::Call(f, a) => {
            let da = Arc::new(diff(a));
            let outer = match f {
                Func::Exp => Node::Call(Func::Exp, a.clone()),
                Func::Log => {
                    return Node::Div(da, a.clone());
                }
                Func::Sin => Node::Call(Func::Cos, a.clone()),
                Func::Cos => Node::Neg(Arc::new(Node::Call(Func::Sin, a.clone()))),
            };
            Node::Mul(Arc::new(outer), da)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Var,
    Func(Func),
    PowFn,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(text: &str, var: char) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Expr(format!("bad numeric literal `{s}`")))?;
                out.push(Token::Num(v));
            }
            _ if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "exp" => out.push(Token::Func(Func::Exp)),
                    "log" => out.push(Token::Func(Func::Log)),
                    "sin" => out.push(Token::Func(Func::Sin)),
                    "cos" => out.push(Token::Func(Func::Cos)),
                    "pow" => out.push(Token::PowFn),
                    w if w.len() == 1 && w.starts_with(var) => out.push(Token::Var),
                    w => {
                        return Err(Error::Expr(format!(
                            "unknown identifier `{w}` (variable is `{var}`)"
                        )))
                    }
                }
            }
            _ => return Err(Error::Expr(format!("unexpected character `{c}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token) -> Result<()> {
        match self.next() {
            Some(found) if found == t => Ok(()),
            other => Err(Error::Expr(format!("expected {t:?}, found {other:?}"))),
        }
    }

    /// Pratt parser; `^` binds tightest and is right-associative.
    fn expression(&mut self, min_bp: u8) -> Result<Node> {
        let mut lhs = match self.next() {
            Some(Token::Num(v)) => Node::Num(v),
            Some(Token::Var) => Node::Var,
            Some(Token::Minus) => Node::Neg(Arc::new(self.expression(5)?)),
            Some(Token::Plus) => self.expression(5)?,
            Some(Token::LParen) => {
                let e = self.expression(0)?;
                self.expect(Token::RParen)?;
                e
            }
            Some(Token::Func(f)) => {
                self.expect(Token::LParen)?;
                let arg = self.expression(0)?;
                self.expect(Token::RParen)?;
                Node::Call(f, Arc::new(arg))
            }
            Some(Token::PowFn) => {
                self.expect(Token::LParen)?;
                let base = self.expression(0)?;
                self.expect(Token::Comma)?;
                let exponent = self.expression(0)?;
                self.expect(Token::RParen)?;
                Node::Pow(Arc::new(base), Arc::new(exponent))
            }
            other => return Err(Error::Expr(format!("unexpected token {other:?}"))),
        };
        loop {
            let (l_bp, r_bp, op) = match self.peek() {
                Some(Token::Plus) => (1, 2, Token::Plus),
                Some(Token::Minus) => (1, 2, Token::Minus),
                Some(Token::Star) => (3, 4, Token::Star),
                Some(Token::Slash) => (3, 4, Token::Slash),
                Some(Token::Caret) => (8, 7, Token::Caret),
                _ => break,
            };
            if l_bp < min_bp {
                break;
            }
            self.next();
            let rhs = self.expression(r_bp)?;
            lhs = match op {
                Token::Plus => Node::Add(Arc::new(lhs), Arc::new(rhs)),
                Token::Minus => Node::Sub(Arc::new(lhs), Arc::new(rhs)),
                Token::Star => Node::Mul(Arc::new(lhs), Arc::new(rhs)),
                Token::Slash => Node::Div(Arc::new(lhs), Arc::new(rhs)),
                Token::Caret => Node::Pow(Arc::new(lhs), Arc::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_polynomial() {
        let e = Expr::parse("s^3/3 + s", 's').unwrap();
        assert_relative_eq!(e.eval(2.0), 8.0 / 3.0 + 2.0, epsilon = 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let exprs = [
            ("s^3/3 + s", 's'),
            ("exp(-s^2)", 's'),
            ("log(1 + r) * cos(r)", 'r'),
            ("pow(t, 1.5) + sin(2*t)", 't'),
            ("2*r", 'r'),
        ];
        for (text, var) in exprs {
            let e = Expr::parse(text, var).unwrap();
            let d = e.derivative();
            for &x in &[0.3, 0.9, 1.7] {
                let h = 1e-6;
                let fd = (e.eval(x + h) - e.eval(x - h)) / (2.0 * h);
                assert_relative_eq!(d.eval(x), fd, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn unary_minus_and_precedence() {
        let e = Expr::parse("-s^2", 's').unwrap();
        // Unary minus binds looser than `^`.
        assert_relative_eq!(e.eval(3.0), -9.0, epsilon = 1e-14);
        let f = Expr::parse("2 - -s", 's').unwrap();
        assert_relative_eq!(f.eval(1.0), 3.0, epsilon = 1e-14);
        let g = Expr::parse("2^3^2", 's').unwrap();
        // Right-associative exponentiation.
        assert_relative_eq!(g.eval(0.0), 512.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("s +", 's').is_err());
        assert!(Expr::parse("q + 1", 's').is_err());
        assert!(Expr::parse("sin s", 's').is_err());
        assert!(Expr::parse("1..2", 's').is_err());
    }
}
