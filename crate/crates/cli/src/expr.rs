//! Arithmetic expressions in `x`, `y` and `t` for potentials, speeds,
//! boundary data and input signals.
//!
//! Grammar (`^` is right associative and binds tighter than unary minus):
//!
//! ```text
//! sum     = product (("+" | "-") product)*
//! product = unary (("*" | "/") unary)*
//! unary   = "-" unary | power
//! power   = atom ("^" unary)?
//! atom    = number | "x" | "y" | "t" | "pi" | "e" | func "(" sum ")" | "(" sum ")"
//! func    = "sin" | "cos" | "exp" | "abs"
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at column {column} of `{source_text}`")]
pub struct ExprError {
    pub column: usize,
    pub message: String,
    pub source_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
}

impl Func {
    const ALL: [(&'static str, Func); 4] = [("sin", Func::Sin), ("cos", Func::Cos), ("exp", Func::Exp), ("abs", Func::Abs)];

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Abs => v.abs(),
        }
    }

    fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, f)| *f == self).map(|(n, _)| *n).unwrap_or("?")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    X,
    Y,
    T,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn eval(&self, p: [f64; 2], t: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X => p[0],
            Node::Y => p[1],
            Node::T => t,
            Node::Neg(a) => -a.eval(p, t),
            Node::Add(a, b) => a.eval(p, t) + b.eval(p, t),
            Node::Sub(a, b) => a.eval(p, t) - b.eval(p, t),
            Node::Mul(a, b) => a.eval(p, t) * b.eval(p, t),
            Node::Div(a, b) => a.eval(p, t) / b.eval(p, t),
            Node::Pow(a, b) => {
                let e = b.eval(p, t);
                let base = a.eval(p, t);
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Node::Call(f, a) => f.apply(a.eval(p, t)),
        }
    }

    fn mentions(&self, var: &Node) -> bool {
        match self {
            Node::X | Node::Y | Node::T => self == var,
            Node::Num(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.mentions(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.mentions(var) || b.mentions(var)
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::X => write!(f, "x"),
            Node::Y => write!(f, "y"),
            Node::T => write!(f, "t"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub text: String,
    pub root: Node,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let mut p = Parser { src: text, bytes: text.as_bytes(), pos: 0 };
        let root = p.sum()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self { text: text.to_string(), root })
    }

    /// Value at a point, with `t = 0`.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.root.eval(p, 0.0)
    }

    pub fn eval_at(&self, p: [f64; 2], t: f64) -> f64 {
        self.root.eval(p, t)
    }

    pub fn uses_y(&self) -> bool {
        self.root.mentions(&Node::Y)
    }

    pub fn uses_t(&self) -> bool {
        self.root.mentions(&Node::T)
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError { column: self.pos + 1, message: message.to_string(), source_text: self.src.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut left = self.product()?;
        loop {
            if self.eat(b'+') {
                left = Node::Add(Box::new(left), Box::new(self.product()?));
            } else if self.eat(b'-') {
                left = Node::Sub(Box::new(left), Box::new(self.product()?));
            } else {
                return Ok(left);
            }
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut left = self.unary()?;
        loop {
            if self.eat(b'*') {
                left = Node::Mul(Box::new(left), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                left = Node::Div(Box::new(left), Box::new(self.unary()?));
            } else {
                return Ok(left);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = &self.src[start..self.pos];
                match word {
                    "x" => Ok(Node::X),
                    "y" => Ok(Node::Y),
                    "t" => Ok(Node::T),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => {
                        let Some(&(_, func)) = Func::ALL.iter().find(|(n, _)| *n == word) else {
                            self.pos = start;
                            return Err(self.error(&format!(
                                "unknown name `{word}` (expected x, y, t, pi, e, sin, cos, exp or abs)"
                            )));
                        };
                        if !self.eat(b'(') {
                            return Err(self.error(&format!("expected `(` after `{word}`")));
                        }
                        let arg = self.sum()?;
                        if !self.eat(b')') {
                            return Err(self.error("expected `)`"));
                        }
                        Ok(Node::Call(func, Box::new(arg)))
                    }
                }
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.bytes.len() && (self.bytes[self.pos] == b'e' || self.bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && (self.bytes[self.pos] == b'+' || self.bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                digits(self);
            } else {
                // `2e` is 2 times Euler's number
                self.pos = save;
            }
        }
        self.src[start..self.pos].parse::<f64>().map(Node::Num).map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval([x, y])
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("(1 - 2) - 3", 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("x^2 + y^2", 3.0, 4.0), 25.0);
        assert_eq!(ev("2*e", 0.0, 0.0), 2.0 * std::f64::consts::E);
        assert!(Expr::parse("2e").is_err());
        assert_eq!(ev("1.5e-1", 0.0, 0.0), 0.15);
        assert_eq!(Expr::parse("x + 2*t").unwrap().eval_at([1.0, 0.0], 3.0), 7.0);
    }

    #[test]
    fn functions() {
        assert!((ev("sin(pi / 2) + cos(0) + exp(0) + abs(-2)", 0.0, 0.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn errors_point_at_the_offender() {
        let e = Expr::parse("x + foo(1)").unwrap_err();
        assert_eq!(e.column, 5);
        assert!(e.message.contains("foo"));
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("x y").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["x^2 - 3*y", "-sin(x)/(1+abs(y))", "exp(-x^2) * 2.5"] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.root.to_string()).unwrap();
            for p in [[0.3, -0.2], [1.1, 0.7]] {
                assert_eq!(e.eval(p), again.eval(p));
            }
        }
    }
}
