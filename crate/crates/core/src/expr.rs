//! Arithmetic expressions for boundary data, nonlinearities, coefficient
//! entries and densities.
//!
//! Grammar (precedence from loosest to tightest):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?          right associative
//! primary := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Variables are resolved to fixed slots at parse time, so evaluation is a
//! pure fold over the tree and never allocates.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::geometry::{BoundaryPoint, Point, Side};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("variable `{0}` is not bound")]
    Unbound(Var),
}

/// Free variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    Z,
    U,
    Theta,
    /// +1 above a slit, -1 below, 0 elsewhere.
    Side,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::X, Var::Y, Var::Z, Var::U, Var::Theta, Var::Side];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::U => "u",
            Var::Theta => "theta",
            Var::Side => "side",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        Var::ALL.iter().copied().find(|v| v.name() == name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
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
    Log,
    Abs,
    Sqrt,
    Sign,
    Min,
    Max,
    Clamp,
}

impl Func {
    const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Abs,
        Func::Sqrt,
        Func::Sign,
        Func::Min,
        Func::Max,
        Func::Clamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Clamp => 3,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Real power: integer fast path, `exp(b ln a)` otherwise.
pub fn real_pow(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        (exponent * base.ln()).exp()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Node {
    fn eval(&self, vals: &[f64; 6]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(v) => vals[v.slot()],
            Node::Neg(a) => -a.eval(vals),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(vals), b.eval(vals));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => real_pow(a, b),
                }
            }
            Node::Call(f, args) => {
                let a = args[0].eval(vals);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Sign => sign(a),
                    Func::Min => a.min(args[1].eval(vals)),
                    Func::Max => a.max(args[1].eval(vals)),
                    Func::Clamp => {
                        let lo = args[1].eval(vals);
                        let hi = args[2].eval(vals);
                        a.max(lo).min(hi)
                    }
                }
            }
        }
    }

    fn used_mask(&self) -> u8 {
        match self {
            Node::Num(_) => 0,
            Node::Var(v) => 1 << v.slot(),
            Node::Neg(a) => a.used_mask(),
            Node::Bin(_, a, b) => a.used_mask() | b.used_mask(),
            Node::Call(_, args) => args.iter().fold(0, |m, a| m | a.used_mask()),
        }
    }
}

impl fmt::Display for Node {
    // Fully parenthesised so that re-parsing reproduces the tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "(-{:?})", -v)
            }
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Values for the variable slots. Unset slots make `eval` fail for
/// expressions that reference them.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings {
    vals: [f64; 6],
    bound: u8,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: f64) -> &mut Self {
        self.vals[var.slot()] = value;
        self.bound |= 1 << var.slot();
        self
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    /// Binds x, y, z and the polar angle theta = atan2(y, x).
    pub fn at_point(p: &Point) -> Self {
        Self::new()
            .with(Var::X, p.x)
            .with(Var::Y, p.y)
            .with(Var::Z, p.z)
            .with(Var::Theta, p.y.atan2(p.x))
    }

    pub fn at_boundary(bp: &BoundaryPoint) -> Self {
        let side = match bp.side {
            Some(Side::Above) => 1.0,
            Some(Side::Below) => -1.0,
            _ => 0.0,
        };
        Self::at_point(&bp.position).with(Var::Side, side)
    }

    pub fn from_map(map: &HashMap<Var, f64>) -> Self {
        let mut b = Self::new();
        for (&k, &v) in map {
            b.set(k, v);
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    root: Node,
    used: u8,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expression {
    /// Parses over the default variable set {x, y, z, u, theta, side}.
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        ExprParser::new().parse(source)
    }

    pub fn constant(value: f64) -> Self {
        Self {
            source: format!("{value:?}"),
            root: Node::Num(value),
            used: 0,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Node {
        &self.root
    }

    pub fn uses(&self, var: Var) -> bool {
        self.used & (1 << var.slot()) != 0
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64, ExprError> {
        let missing = self.used & !bindings.bound;
        if missing != 0 {
            let var = Var::ALL[missing.trailing_zeros() as usize];
            return Err(ExprError::Unbound(var));
        }
        Ok(self.root.eval(&bindings.vals))
    }

    /// Evaluates at a point in space (binds x, y, z, theta) with extra `u`.
    pub fn eval_at(&self, p: &Point, u: f64) -> f64 {
        let b = Bindings::at_point(p).with(Var::U, u);
        self.root.eval(&b.vals)
    }

    pub fn eval_boundary(&self, bp: &BoundaryPoint) -> f64 {
        self.root.eval(&Bindings::at_boundary(bp).vals)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

/// Parser with a configurable variable set and named constants.
#[derive(Debug, Clone)]
pub struct ExprParser {
    allowed: u8,
    constants: Vec<(String, f64)>,
}

impl Default for ExprParser {
    fn default() -> Self {
        Self::new()
    }
}

impl ExprParser {
    pub fn new() -> Self {
        Self {
            allowed: 0b11_1111,
            constants: vec![("pi".into(), PI)],
        }
    }

    pub fn variables(mut self, vars: &[Var]) -> Self {
        self.allowed = vars.iter().fold(0, |m, v| m | (1 << v.slot()));
        self
    }

    pub fn constant(mut self, name: &str, value: f64) -> Self {
        self.constants.retain(|(n, _)| n != name);
        self.constants.push((name.to_string(), value));
        self
    }

    pub fn parse(&self, source: &str) -> Result<Expression, ExprError> {
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            cfg: self,
            end: source.len(),
        };
        let root = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("unexpected {}", t.kind.describe()),
            });
        }
        let used = root.used_mask();
        Ok(Expression {
            source: source.to_string(),
            root,
            used,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' | b'.' => {
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
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Token {
                    kind: TokKind::Num(v),
                    offset: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push(Token {
                    kind: TokKind::Op(c as char),
                    offset: i,
                });
                i += 1;
            }
            b'(' | b')' | b',' => {
                let kind = match c {
                    b'(' => TokKind::LParen,
                    b')' => TokKind::RParen,
                    _ => TokKind::Comma,
                };
                out.push(Token { kind, offset: i });
                i += 1;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    cfg: &'a ExprParser,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<(), ExprError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected {what}, found {}", t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op('+') {
                BinOp::Add
            } else if self.eat_op('-') {
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
            let op = if self.eat_op('*') {
                BinOp::Mul
            } else if self.eat_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op('-') {
            let inner = self.unary()?;
            // Literal negation folds into the literal so printing round-trips.
            return Ok(match inner {
                Node::Num(v) => Node::Num(-v),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                offset: self.end,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Num(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(e)
            }
            TokKind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: TokKind::LParen, .. })) {
                    return self.call(&name, tok.offset);
                }
                if let Some(var) = Var::from_name(&name) {
                    if self.cfg.allowed & (1 << var.slot()) != 0 {
                        return Ok(Node::Var(var));
                    }
                }
                if let Some((_, v)) = self.cfg.constants.iter().find(|(n, _)| *n == name) {
                    return Ok(Node::Num(*v));
                }
                Err(ExprError::UnknownIdentifier {
                    offset: tok.offset,
                    name,
                })
            }
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ExprError> {
        let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownIdentifier {
            offset,
            name: name.to_string(),
        })?;
        self.expect(TokKind::LParen, "`(`")?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Some(Token { kind: TokKind::RParen, .. })) {
            loop {
                args.push(self.expr()?);
                if matches!(self.peek(), Some(Token { kind: TokKind::Comma, .. })) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(TokKind::RParen, "`)`")?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                offset,
                name: name.to_string(),
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}

/// A violation of monotonicity in `u`: f(x, u_lo) < f(x, u_hi) with u_lo < u_hi.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneViolation {
    pub x: Point,
    pub u_lo: f64,
    pub u_hi: f64,
}

/// Checks that `f(x, .)` is nonincreasing on `u_range`, sampling 64 values
/// of `u` at each probe.
pub fn check_nonincreasing(
    f: &Expression,
    probes: &[Point],
    u_range: (f64, f64),
) -> Result<(), MonotoneViolation> {
    const SAMPLES: usize = 64;
    let (lo, hi) = u_range;
    for x in probes {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..SAMPLES {
            let u = lo + (hi - lo) * k as f64 / (SAMPLES - 1) as f64;
            let v = f.eval_at(x, u);
            if let Some((pu, pv)) = prev {
                let scale = pv.abs().max(v.abs()).max(1.0);
                if v > pv + 1e-12 * scale {
                    return Err(MonotoneViolation {
                        x: *x,
                        u_lo: pu,
                        u_hi: u,
                    });
                }
            }
            prev = Some((u, v));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(vars: &[(Var, f64)]) -> Bindings {
        let mut b = Bindings::new();
        for &(v, x) in vars {
            b.set(v, x);
        }
        b
    }

    #[test]
    fn arithmetic_examples() {
        let e = Expression::parse("x^2+y^2").unwrap();
        assert_eq!(e.eval(&at(&[(Var::X, 3.0), (Var::Y, 4.0)])).unwrap(), 25.0);
        let e = Expression::parse("max(0,u)").unwrap();
        assert_eq!(e.eval(&at(&[(Var::U, -2.0)])).unwrap(), 0.0);
        let e = Expression::parse("-u*abs(u)^1").unwrap();
        assert_eq!(e.eval(&at(&[(Var::U, 2.0)])).unwrap(), -4.0);
    }

    #[test]
    fn eval_examples() {
        let e = Expression::parse("sin(theta)").unwrap();
        assert_eq!(e.eval(&at(&[(Var::Theta, 0.0)])).unwrap(), 0.0);
        let e = Expression::parse("1/x").unwrap();
        assert_eq!(e.eval(&at(&[(Var::X, 0.0)])).unwrap(), f64::INFINITY);
        let e = Expression::parse("exp(log(x))").unwrap();
        let v = e.eval(&at(&[(Var::X, 3.0)])).unwrap();
        assert!((v - 3.0).abs() <= 1e-15 * 3.0 * 2.0);
    }

    #[test]
    fn precedence() {
        let e = Expression::parse("-2^2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), -4.0);
        let e = Expression::parse("2^3^2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 512.0);
        let e = Expression::parse("8-3-2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 3.0);
        let e = Expression::parse("8/4/2").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 1.0);
        let e = Expression::parse("2^-1").unwrap();
        assert_eq!(e.eval(&Bindings::new()).unwrap(), 0.5);
        let e = Expression::parse("-x*3").unwrap();
        assert_eq!(e.eval(&at(&[(Var::X, 2.0)])).unwrap(), -6.0);
    }

    #[test]
    fn non_integer_power() {
        let e = Expression::parse("u^1.5").unwrap();
        let v = e.eval(&at(&[(Var::U, 4.0)])).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
        assert!(e.eval(&at(&[(Var::U, -4.0)])).unwrap().is_nan());
        let e = Expression::parse("u^2").unwrap();
        assert_eq!(e.eval(&at(&[(Var::U, -3.0)])).unwrap(), 9.0);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expression::parse("x + * y") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match Expression::parse("1 + foo") {
            Err(ExprError::UnknownIdentifier { offset, name }) => {
                assert_eq!(offset, 4);
                assert_eq!(name, "foo");
            }
            other => panic!("{other:?}"),
        }
        match Expression::parse("max(1)") {
            Err(ExprError::Arity { expected, got, .. }) => assert_eq!((expected, got), (2, 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expression::parse("(x"),
            Err(ExprError::Syntax { offset: 2, .. })
        ));
        assert!(matches!(
            Expression::parse("x $ 2"),
            Err(ExprError::Syntax { offset: 2, .. })
        ));
    }

    #[test]
    fn restricted_variables_and_constants() {
        let p = ExprParser::new().variables(&[Var::U]).constant("p", 3.0);
        let e = p.parse("-u*abs(u)^(p-1)").unwrap();
        assert_eq!(e.eval(&at(&[(Var::U, 2.0)])).unwrap(), -8.0);
        assert!(matches!(
            p.parse("x+u"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn unbound_variable() {
        let e = Expression::parse("x+u").unwrap();
        assert_eq!(
            e.eval(&at(&[(Var::X, 1.0)])),
            Err(ExprError::Unbound(Var::U))
        );
    }

    #[test]
    fn clamp_and_sign() {
        let e = Expression::parse("clamp(u, -1, 1) + sign(x)").unwrap();
        assert_eq!(e.eval(&at(&[(Var::U, 5.0), (Var::X, -0.1)])).unwrap(), 0.0);
    }

    #[test]
    fn print_round_trip_examples() {
        for src in [
            "x^2+y^2",
            "-u*abs(u)^(2.5-1)",
            "clamp(sin(theta),-0.5,0.5)/(1+exp(-x))",
            "-(x+1)",
            "2^-1",
        ] {
            let e = Expression::parse(src).unwrap();
            let again = Expression::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
    }

    #[test]
    fn monotone_check() {
        let probes = [Point::new(0.1, 0.2, 0.0), Point::new(-0.5, 0.3, 0.0)];
        let f = Expression::parse("-u*abs(u)").unwrap();
        assert!(check_nonincreasing(&f, &probes, (-5.0, 5.0)).is_ok());
        let g = Expression::parse("u^3 - x").unwrap();
        assert!(check_nonincreasing(&g, &probes, (-5.0, 5.0)).is_err());
    }
}
