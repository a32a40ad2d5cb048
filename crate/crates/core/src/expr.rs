//! Scalar family expressions over base variables `q1..qn`, fiber variables
//! `l1..lk` and named parameters.
//!
//! Grammar, lowest to highest precedence:
//!
//! ```text
//! expr    := expr ('+' | '-') term | term
//! term    := term ('*' | '/') unary | unary
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?            (right associative)
//! atom    := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Exponents must be constant and integral. Functions: `sqrt sin cos exp log`.
//! There is no implicit multiplication.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::autodiff::{Jet2, Scalar, ScalarFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the source.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("empty expression")]
    Empty,
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("function `{name}` takes 1 argument, got {got}")]
    Arity { name: String, got: usize },
    #[error("exponent {0} is not an integer")]
    FractionalExponent(f64),
    #[error("exponent must be a constant")]
    NonConstantExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Zero-based variable reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Base(usize),
    Fiber(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Param { name: String, value: f64 },
    Neg(Box<Node>),
    Binary { op: BinOp, lhs: Box<Node>, rhs: Box<Node> },
    Pow { base: Box<Node>, exp: i32 },
    Call { func: Func, arg: Box<Node> },
}

impl Node {
    fn eval<S: Scalar>(&self, vars: &[S], n: usize) -> Result<S> {
        let ctx = |e: crate::error::DomainError| e.with_context(self.to_string());
        Ok(match self {
            Node::Const(c) => S::from_f64(*c),
            Node::Param { value, .. } => S::from_f64(*value),
            Node::Var(Var::Base(i)) => vars[*i].clone(),
            Node::Var(Var::Fiber(i)) => vars[n + *i].clone(),
            Node::Neg(a) => -a.eval(vars, n)?,
            Node::Binary { op, lhs, rhs } => {
                let a = lhs.eval(vars, n)?;
                let b = rhs.eval(vars, n)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a.div(b).map_err(ctx)?,
                }
            }
            Node::Pow { base, exp } => base.eval(vars, n)?.powi(*exp).map_err(ctx)?,
            Node::Call { func, arg } => {
                let a = arg.eval(vars, n)?;
                match func {
                    Func::Sqrt => a.sqrt().map_err(ctx)?,
                    Func::Log => a.ln().map_err(ctx)?,
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                }
            }
        })
    }

    fn has_vars(&self) -> bool {
        match self {
            Node::Var(_) => true,
            Node::Const(_) | Node::Param { .. } => false,
            Node::Neg(a) | Node::Pow { base: a, .. } | Node::Call { arg: a, .. } => a.has_vars(),
            Node::Binary { lhs, rhs, .. } => lhs.has_vars() || rhs.has_vars(),
        }
    }
}

// Fully parenthesised; `{}` on f64 prints the shortest round-tripping form.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(Var::Base(i)) => write!(f, "q{}", i + 1),
            Node::Var(Var::Fiber(i)) => write!(f, "l{}", i + 1),
            Node::Param { name, .. } => f.write_str(name),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Node::Pow { base, exp } => write!(f, "({base}^({exp}))"),
            Node::Call { func, arg } => write!(f, "{}({arg})", func.name()),
        }
    }
}

/// A parsed expression bound to a base dimension `n` and fiber dimension `k`.
/// Evaluation takes the concatenated point `(q, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    root: Node,
    n: usize,
    k: usize,
    params: BTreeMap<String, f64>,
}

impl ExprAst {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn fiber_dim(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Evaluate over any scalar type; `vars` is `(q, λ)` of length `n + k`.
    pub fn eval<S: Scalar>(&self, vars: &[S]) -> Result<S> {
        if vars.len() != self.n + self.k {
            return Err(Error::DimensionMismatch {
                expected: self.n + self.k,
                got: vars.len(),
            });
        }
        self.root.eval(vars, self.n)
    }

    fn join(&self, q: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: q.len() });
        }
        if lambda.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: lambda.len() });
        }
        Ok(q.iter().chain(lambda).copied().collect())
    }

    pub fn eval_f64(&self, q: &[f64], lambda: &[f64]) -> Result<f64> {
        self.eval(&self.join(q, lambda)?)
    }

    pub fn eval_jet2(&self, q: &[f64], lambda: &[f64]) -> Result<Jet2> {
        crate::autodiff::jet2_eval(self, &self.join(q, lambda)?)
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl ScalarFunction for ExprAst {
    fn dim(&self) -> usize {
        self.n + self.k
    }
    fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet2]) -> Result<Jet2> {
        self.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> std::result::Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let t = lx.next()?;
            let end = t.0 == Tok::End;
            out.push(t);
            if end {
                return Ok(out);
            }
        }
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next(&mut self) -> std::result::Result<(Tok, usize), ParseError> {
        while self.peek_byte().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek_byte() else {
            return Ok((Tok::End, start));
        };
        if b.is_ascii_digit() || b == b'.' {
            return self.number(start);
        }
        if b.is_ascii_alphabetic() || b == b'_' {
            while self.peek_byte().is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if b"+-*/^(),".contains(&b) {
            self.pos += 1;
            return Ok((Tok::Op(b as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError {
            kind: ParseErrorKind::Syntax(format!("unexpected character `{ch}`")),
            offset: start,
        })
    }

    fn number(&mut self, start: usize) -> std::result::Result<(Tok, usize), ParseError> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.peek_byte().is_some_and(|b| b.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut count = digits(self);
        if self.peek_byte() == Some(b'.') {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return Err(ParseError {
                kind: ParseErrorKind::Syntax("malformed number".into()),
                offset: start,
            });
        }
        if matches!(self.peek_byte(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek_byte(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let v: f64 = text.parse().map_err(|_| ParseError {
            kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
            offset: start,
        })?;
        Ok((Tok::Num(v), start))
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    n: usize,
    k: usize,
    params: &'a BTreeMap<String, f64>,
}

const BP_ADD: u8 = 10;
const BP_MUL: u8 = 20;
const BP_UNARY: u8 = 30;
const BP_POW: u8 = 40;

impl Parser<'_> {
    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if t.0 != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, offset: usize, msg: impl Into<String>) -> std::result::Result<T, ParseError> {
        Err(ParseError {
            kind: ParseErrorKind::Syntax(msg.into()),
            offset,
        })
    }

    fn expect(&mut self, ch: char) -> std::result::Result<(), ParseError> {
        let (t, off) = self.bump();
        if t == Tok::Op(ch) {
            Ok(())
        } else {
            self.syntax(off, format!("expected `{ch}`"))
        }
    }

    fn expr(&mut self, min_bp: u8) -> std::result::Result<Node, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, bp) = match self.peek().0 {
                Tok::Op('+') => (BinOp::Add, BP_ADD),
                Tok::Op('-') => (BinOp::Sub, BP_ADD),
                Tok::Op('*') => (BinOp::Mul, BP_MUL),
                Tok::Op('/') => (BinOp::Div, BP_MUL),
                Tok::Op('^') => {
                    if BP_POW < min_bp {
                        break;
                    }
                    self.bump();
                    let exp_off = self.peek().1;
                    // Right operand at the unary level: `a^-2`, `a^b^c = a^(b^c)`.
                    let exp = self.expr(BP_UNARY)?;
                    lhs = Node::Pow {
                        base: Box::new(lhs),
                        exp: self.integer_exponent(&exp, exp_off)?,
                    };
                    continue;
                }
                _ => break,
            };
            if bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr(bp + 1)?;
            lhs = Node::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn integer_exponent(&self, exp: &Node, offset: usize) -> std::result::Result<i32, ParseError> {
        if exp.has_vars() {
            return Err(ParseError {
                kind: ParseErrorKind::NonConstantExponent,
                offset,
            });
        }
        let v = exp.eval::<f64>(&[], 0).map_err(|_| ParseError {
            kind: ParseErrorKind::NonConstantExponent,
            offset,
        })?;
        if v.fract() != 0.0 || !v.is_finite() || v.abs() > i32::MAX as f64 {
            return Err(ParseError {
                kind: ParseErrorKind::FractionalExponent(v),
                offset,
            });
        }
        Ok(v as i32)
    }

    fn prefix(&mut self) -> std::result::Result<Node, ParseError> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Op('-') => {
                let operand = self.expr(BP_UNARY)?;
                Ok(Node::Neg(Box::new(operand)))
            }
            Tok::Op('(') => {
                let inner = self.expr(0)?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek().0 == Tok::Op('(') {
                    return self.call(name, off);
                }
                self.identifier(&name, off)
            }
            Tok::End => self.syntax(off, "unexpected end of input"),
            Tok::Op(c) => self.syntax(off, format!("unexpected `{c}`")),
        }
    }

    fn call(&mut self, name: String, off: usize) -> std::result::Result<Node, ParseError> {
        let Some(func) = Func::lookup(&name) else {
            return Err(ParseError {
                kind: ParseErrorKind::UnknownIdentifier(name),
                offset: off,
            });
        };
        self.expect('(')?;
        let mut args = Vec::new();
        if self.peek().0 != Tok::Op(')') {
            loop {
                args.push(self.expr(0)?);
                if self.peek().0 == Tok::Op(',') {
                    self.bump();
                    continue;
                }
                break;
            }
        }
        self.expect(')')?;
        if args.len() != 1 {
            return Err(ParseError {
                kind: ParseErrorKind::Arity {
                    name,
                    got: args.len(),
                },
                offset: off,
            });
        }
        Ok(Node::Call {
            func,
            arg: Box::new(args.pop().expect("one argument")),
        })
    }

    fn identifier(&self, name: &str, off: usize) -> std::result::Result<Node, ParseError> {
        let unknown = || ParseError {
            kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
            offset: off,
        };
        if let Some(&value) = self.params.get(name) {
            return Ok(Node::Param {
                name: name.to_string(),
                value,
            });
        }
        let index = |prefix: &str, bound: usize| -> Option<usize> {
            let digits = name.strip_prefix(prefix)?;
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
                return None;
            }
            let i: usize = digits.parse().ok()?;
            (1..=bound).contains(&i).then_some(i - 1)
        };
        if let Some(i) = index("q", self.n) {
            return Ok(Node::Var(Var::Base(i)));
        }
        if let Some(i) = index("l", self.k) {
            return Ok(Node::Var(Var::Fiber(i)));
        }
        if Func::lookup(name).is_some() {
            return Err(ParseError {
                kind: ParseErrorKind::Arity {
                    name: name.to_string(),
                    got: 0,
                },
                offset: off,
            });
        }
        Err(unknown())
    }
}

/// Parse `src` for a family with base dimension `n` and fiber dimension `k`.
/// Parameter values are bound at parse time.
pub fn parse(src: &str, n: usize, k: usize, params: &BTreeMap<String, f64>) -> std::result::Result<ExprAst, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::Empty,
            offset: 0,
        });
    }
    let toks = Lexer::tokens(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        n,
        k,
        params,
    };
    let root = p.expr(0)?;
    let (tok, off) = p.peek().clone();
    if tok != Tok::End {
        return p.syntax(off, "unexpected trailing input");
    }
    Ok(ExprAst {
        root,
        n,
        k,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str, n: usize, k: usize) -> std::result::Result<ExprAst, ParseError> {
        parse(src, n, k, &BTreeMap::new())
    }

    #[test]
    fn parse_examples() {
        let a = p("l1*q1^2", 1, 1).unwrap();
        assert_eq!(a.eval_f64(&[3.0], &[2.0]).unwrap(), 18.0);
        let b = p("sqrt(q1^2+q2^2)", 2, 0).unwrap();
        assert_eq!(b.eval_f64(&[3.0, 4.0], &[]).unwrap(), 5.0);
        let e = p("q1 + * 2", 1, 0).unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn precedence_and_associativity() {
        let ev = |s: &str| p(s, 0, 0).unwrap().eval_f64(&[], &[]).unwrap();
        assert_eq!(ev("2+3*4"), 14.0);
        assert_eq!(ev("10-4-3"), 3.0);
        assert_eq!(ev("64/4/2"), 8.0);
        assert_eq!(ev("2^3^2"), 512.0);
        assert_eq!(ev("-2^2"), -4.0);
        assert_eq!(ev("(-2)^2"), 4.0);
        assert_eq!(ev("2^-1"), 0.5);
        assert_eq!(ev("-3*2"), -6.0);
        assert_eq!(ev("1.5e1 + .5"), 15.5);
        assert_eq!(ev("2*-3"), -6.0);
    }

    #[test]
    fn jet_evaluation() {
        let a = p("l1*q1^2", 1, 1).unwrap();
        let j = a.eval_jet2(&[1.0], &[2.0]).unwrap();
        assert_eq!(j.grad(), &[4.0, 1.0]);
        let c = p("3.5", 1, 1).unwrap();
        let j = c.eval_jet2(&[0.3], &[0.1]).unwrap();
        assert_eq!(j.value(), 3.5);
        assert_eq!(j.grad(), &[0.0, 0.0]);
        assert_eq!(j.hess_matrix(2), nalgebra::DMatrix::zeros(2, 2));
    }

    #[test]
    fn domain_error_names_subexpression() {
        let a = p("1 + log(q1)", 1, 0).unwrap();
        match a.eval_f64(&[-1.0], &[]) {
            Err(Error::Domain { expr, op, .. }) => {
                assert_eq!(op, "log");
                assert_eq!(expr, "log(q1)");
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(matches!(p("1/q1", 1, 0).unwrap().eval_f64(&[0.0], &[]), Err(Error::Domain { .. })));
    }

    #[test]
    fn identifier_errors() {
        assert!(matches!(p("q2", 1, 0).unwrap_err().kind, ParseErrorKind::UnknownIdentifier(_)));
        assert!(matches!(p("l1", 1, 0).unwrap_err().kind, ParseErrorKind::UnknownIdentifier(_)));
        assert!(matches!(p("q0", 1, 0).unwrap_err().kind, ParseErrorKind::UnknownIdentifier(_)));
        assert!(matches!(p("foo(q1)", 1, 0).unwrap_err().kind, ParseErrorKind::UnknownIdentifier(_)));
        let e = p("1 + alpha", 1, 0).unwrap_err();
        assert_eq!(e.offset, 4);
    }

    #[test]
    fn arity_and_exponent_errors() {
        assert!(matches!(p("sqrt(q1, q1)", 1, 0).unwrap_err().kind, ParseErrorKind::Arity { got: 2, .. }));
        assert!(matches!(p("sin()", 1, 0).unwrap_err().kind, ParseErrorKind::Arity { got: 0, .. }));
        assert!(matches!(p("q1^2.5", 1, 0).unwrap_err().kind, ParseErrorKind::FractionalExponent(_)));
        assert!(matches!(p("q1^q1", 1, 0).unwrap_err().kind, ParseErrorKind::NonConstantExponent));
        assert!(matches!(p("   ", 1, 0).unwrap_err().kind, ParseErrorKind::Empty));
        assert!(matches!(p("(q1", 1, 0).unwrap_err().kind, ParseErrorKind::Syntax(_)));
        assert!(matches!(p("q1 q1", 1, 0).unwrap_err().kind, ParseErrorKind::Syntax(_)));
        assert!(matches!(p("q1 # 2", 1, 0).unwrap_err(), ParseError { offset: 3, .. }));
    }

    #[test]
    fn parameters_bind_by_name() {
        let mut params = BTreeMap::new();
        params.insert("k".to_string(), 2.5);
        params.insert("n".to_string(), 3.0);
        let a = parse("k*q1^n", 1, 0, &params).unwrap();
        assert_eq!(a.eval_f64(&[2.0], &[]).unwrap(), 20.0);
        assert_eq!(a.to_string(), "(k * (q1^(3)))");
        params.insert("n".to_string(), 0.5);
        assert!(matches!(parse("q1^n", 1, 0, &params).unwrap_err().kind, ParseErrorKind::FractionalExponent(_)));
    }

    #[test]
    fn print_round_trip() {
        let src = "-q1^2*exp(-l1) + 3e-4/(1+cos(q2)^2) - sqrt(q1^2 + l1^2)";
        let a = p(src, 2, 1).unwrap();
        let b = p(&a.to_string(), 2, 1).unwrap();
        assert_eq!(a, b);
    }
}
