//! A small arithmetic expression language for rate functions and initial data.
//!
//! Expressions range over the variables `x` (space), `a` (age) and `t`
//! (time), the constant `pi`, numeric literals, the binary operators
//! `+ - * / ^`, unary minus and the functions `sin cos exp sqrt abs min max`.
//! Precedence, from tightest: `^` (right associative), unary `-`, `* /`,
//! `+ -`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    /// `offset` is the 1-based byte position where parsing stopped.
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("domain error in {op} at x={x}, a={a}, t={t}")]
    Domain {
        op: &'static str,
        x: f64,
        a: f64,
        t: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    A,
    T,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::A => "a",
            Var::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn count(&self) -> usize {
        match self {
            Node::Num(_) | Node::Pi | Node::Var(_) => 1,
            Node::Neg(e) => 1 + e.count(),
            Node::Bin(_, l, r) => 1 + l.count() + r.count(),
            Node::Call(_, args) => 1 + args.iter().map(Node::count).sum::<usize>(),
        }
    }

    fn uses(&self, v: Var) -> bool {
        match self {
            Node::Num(_) | Node::Pi => false,
            Node::Var(w) => *w == v,
            Node::Neg(e) => e.uses(v),
            Node::Bin(_, l, r) => l.uses(v) || r.uses(v),
            Node::Call(_, args) => args.iter().any(|e| e.uses(v)),
        }
    }

    fn eval(&self, x: f64, a: f64, t: f64) -> Result<f64, ExprError> {
        let domain = |op| ExprError::Domain { op, x, a, t };
        let value = match self {
            Node::Num(v) => *v,
            Node::Pi => std::f64::consts::PI,
            Node::Var(Var::X) => x,
            Node::Var(Var::A) => a,
            Node::Var(Var::T) => t,
            Node::Neg(e) => -e.eval(x, a, t)?,
            Node::Bin(op, l, r) => {
                let l = l.eval(x, a, t)?;
                let r = r.eval(x, a, t)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(domain("division"));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if l < 0.0 && r.fract() != 0.0 {
                            return Err(domain("power of a negative base"));
                        }
                        if l == 0.0 && r < 0.0 {
                            return Err(domain("power of zero"));
                        }
                        l.powf(r)
                    }
                }
            }
            Node::Call(f, args) => {
                let u = args[0].eval(x, a, t)?;
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Sqrt => {
                        if u < 0.0 {
                            return Err(domain("sqrt"));
                        }
                        u.sqrt()
                    }
                    Func::Abs => u.abs(),
                    Func::Min => u.min(args[1].eval(x, a, t)?),
                    Func::Max => u.max(args[1].eval(x, a, t)?),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(domain("overflow"))
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Pi => f.write_str("pi"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(e) => write!(f, "(-{e})"),
            Node::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A parsed rate expression. Evaluation is deterministic and reports domain
/// errors instead of producing NaN or infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExpr {
    root: Node,
}

impl RateExpr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser { src, pos: 0 };
        p.skip_ws();
        if p.pos == src.len() {
            return Err(p.error("empty expression"));
        }
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(RateExpr { root })
    }

    pub fn constant(value: f64) -> Self {
        RateExpr {
            root: Node::Num(value),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn eval(&self, x: f64, a: f64, t: f64) -> Result<f64, ExprError> {
        self.root.eval(x, a, t)
    }

    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.root.uses(v)
    }

    pub fn is_constant(&self) -> bool {
        ![Var::X, Var::A, Var::T].iter().any(|&v| self.depends_on(v))
    }
}

impl FromStr for RateExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RateExpr::parse(s)
    }
}

impl fmt::Display for RateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

pub fn parse_rate_expression(src: &str) -> Result<RateExpr, ExprError> {
    RateExpr::parse(src)
}

pub fn eval_expr(e: &RateExpr, x: f64, a: f64, t: f64) -> Result<f64, ExprError> {
    e.eval(x, a, t)
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number(),
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < bytes.len() && matches!(bytes[self.pos], b'e' | b'E') {
            let mut look = self.pos + 1;
            if look < bytes.len() && matches!(bytes[look], b'+' | b'-') {
                look += 1;
            }
            if look < bytes.len() && bytes[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Node::Num(v)),
            _ => {
                self.pos = start;
                Err(self.error("malformed number"))
            }
        }
    }

    fn identifier(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "x" => return Ok(Node::Var(Var::X)),
            "a" => return Ok(Node::Var(Var::A)),
            "t" => return Ok(Node::Var(Var::T)),
            "pi" => return Ok(Node::Pi),
            _ => {}
        }
        let Some(func) = Func::lookup(name) else {
            return Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                offset: start + 1,
            });
        };
        if !self.eat(b'(') {
            return Err(self.error("expected `(` after function name"));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.error("expected `)`"));
        }
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                name: name.to_string(),
                expected: func.arity(),
                found: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}
