//! A small closed expression grammar for coefficients and functionals.
//!
//! Expressions are built from constants, the time `t`, the state `x`, the
//! statistics `s1, s2, …`, the operators `+ - *`, division by constants,
//! integer powers up to [`MAX_POWER`], and `exp`, `sin`, `cos`. Named
//! parameters are substituted as constants at parse time, so a parsed
//! expression is self-contained and can be differentiated symbolically.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest integer exponent accepted by the parser.
pub const MAX_POWER: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    State,
    /// Zero-based statistic index; written `s1` for index 0.
    Stat(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

/// Differentiation variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    State,
    Stat(usize),
}

/// Evaluation point. Missing statistics evaluate to NaN.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: f64,
    pub stats: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: f64, stats: &'a [f64]) -> Self {
        Self { t, x, stats }
    }

    pub fn time(t: f64) -> Env<'static> {
        Env { t, x: 0.0, stats: &[] }
    }

    pub fn stats(stats: &'a [f64]) -> Self {
        Self { t: 0.0, x: 0.0, stats }
    }
}

pub fn constant(c: f64) -> Expr {
    Expr::Const(c)
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p + q),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p - q),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p * q),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        e => Expr::Neg(Box::new(e)),
    }
}

pub fn pow(a: Expr, k: u32) -> Expr {
    match (a, k) {
        (_, 0) => Expr::Const(1.0),
        (e, 1) => e,
        (Expr::Const(c), k) => Expr::Const(c.powi(k as i32)),
        (e, k) => Expr::Pow(Box::new(e), k),
    }
}

pub fn exp(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(c.exp()),
        e => Expr::Exp(Box::new(e)),
    }
}

pub fn sin(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(c.sin()),
        e => Expr::Sin(Box::new(e)),
    }
}

pub fn cos(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(c.cos()),
        e => Expr::Cos(Box::new(e)),
    }
}

impl Expr {
    pub fn stat(index: usize) -> Expr {
        Expr::Stat(index)
    }

    pub fn eval(&self, env: &Env<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Time => env.t,
            Expr::State => env.x,
            Expr::Stat(j) => env.stats.get(*j).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Pow(a, k) => a.eval(env).powi(*k as i32),
            Expr::Exp(a) => a.eval(env).exp(),
            Expr::Sin(a) => a.eval(env).sin(),
            Expr::Cos(a) => a.eval(env).cos(),
        }
    }

    /// Symbolic partial derivative, simplified through the smart constructors.
    pub fn derivative(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => constant(0.0),
            Expr::Time => constant(if var == Var::Time { 1.0 } else { 0.0 }),
            Expr::State => constant(if var == Var::State { 1.0 } else { 0.0 }),
            Expr::Stat(j) => constant(if var == Var::Stat(*j) { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Pow(_, 0) => constant(0.0),
            Expr::Pow(a, k) => mul(
                mul(constant(*k as f64), pow((**a).clone(), k - 1)),
                a.derivative(var),
            ),
            Expr::Exp(a) => mul(exp((**a).clone()), a.derivative(var)),
            Expr::Sin(a) => mul(cos((**a).clone()), a.derivative(var)),
            Expr::Cos(a) => mul(neg(sin((**a).clone())), a.derivative(var)),
        }
    }

    /// `order`-fold derivative in `var`.
    pub fn nth_derivative(&self, var: Var, order: usize) -> Expr {
        (0..order).fold(self.clone(), |e, _| e.derivative(var))
    }

    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Time => var == Var::Time,
            Expr::State => var == Var::State,
            Expr::Stat(j) => var == Var::Stat(*j),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Sin(a) | Expr::Cos(a) => {
                a.depends_on(var)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }

    /// Whether any statistic appears.
    pub fn depends_on_stats(&self) -> bool {
        self.max_stat_index().is_some()
    }

    pub fn max_stat_index(&self) -> Option<usize> {
        match self {
            Expr::Stat(j) => Some(*j),
            Expr::Const(_) | Expr::Time | Expr::State => None,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Sin(a) | Expr::Cos(a) => {
                a.max_stat_index()
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                match (a.max_stat_index(), b.max_stat_index()) {
                    (Some(p), Some(q)) => Some(p.max(q)),
                    (p, q) => p.or(q),
                }
            }
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Parse with named parameters substituted as constants.
    pub fn parse_with(src: &str, params: &BTreeMap<String, f64>) -> Result<Expr> {
        let mut parser = Parser { src, pos: 0, params };
        let expr = parser.expr()?;
        parser.skip_ws();
        if parser.pos < src.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(expr)
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse_with(s, &BTreeMap::new())
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = add(lhs, self.term()?);
            } else if self.eat('-') {
                lhs = sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = mul(lhs, self.unary()?);
            } else if self.eat('/') {
                let at = self.pos;
                let rhs = self.unary()?;
                match rhs.as_const() {
                    Some(c) if c != 0.0 => lhs = mul(lhs, constant(1.0 / c)),
                    _ => {
                        return Err(Error::Parse {
                            offset: at,
                            message: "division is only allowed by a nonzero constant".into(),
                        })
                    }
                }
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            Ok(neg(self.unary()?))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            self.skip_ws();
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            let k: u32 = self.src[start..self.pos]
                .parse()
                .map_err(|_| self.error("expected a non-negative integer exponent"))?;
            if k > MAX_POWER {
                return Err(self.error(format!("exponent {k} exceeds maximum {MAX_POWER}")));
            }
            Ok(pow(base, k))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.ident(),
            Some(c) => Err(self.error(format!("unexpected character `{c}`"))),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                look += 1;
            }
            if look < bytes.len() && bytes[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(constant)
            .map_err(|_| Error::Parse { offset: start, message: "malformed number".into() })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let func: Option<fn(Expr) -> Expr> = match name {
            "exp" => Some(exp),
            "sin" => Some(sin),
            "cos" => Some(cos),
            _ => None,
        };
        if let Some(func) = func {
            if !self.eat('(') {
                return Err(self.error(format!("expected `(` after `{name}`")));
            }
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(func(arg));
        }
        match name {
            "x" => Ok(Expr::State),
            "t" => Ok(Expr::Time),
            "pi" => Ok(constant(std::f64::consts::PI)),
            _ => {
                if let Some(value) = self.params.get(name) {
                    return Ok(constant(*value));
                }
                if let Some(index) = name.strip_prefix('s').and_then(|d| d.parse::<usize>().ok()) {
                    if index >= 1 {
                        return Ok(Expr::Stat(index - 1));
                    }
                }
                Err(Error::Parse { offset: start, message: format!("unknown identifier `{name}`") })
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(self, f, 0)
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Const(c) if c.is_sign_negative() => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn write_prec(e: &Expr, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
    let own = precedence(e);
    let paren = own < parent;
    if paren {
        f.write_str("(")?;
    }
    match e {
        Expr::Const(c) => write!(f, "{c:?}")?,
        Expr::Time => f.write_str("t")?,
        Expr::State => f.write_str("x")?,
        Expr::Stat(j) => write!(f, "s{}", j + 1)?,
        Expr::Neg(a) => {
            f.write_str("-")?;
            write_prec(a, f, 4)?;
        }
        Expr::Add(a, b) => {
            write_prec(a, f, 1)?;
            f.write_str(" + ")?;
            write_prec(b, f, 2)?;
        }
        Expr::Sub(a, b) => {
            write_prec(a, f, 1)?;
            f.write_str(" - ")?;
            write_prec(b, f, 2)?;
        }
        Expr::Mul(a, b) => {
            write_prec(a, f, 2)?;
            f.write_str(" * ")?;
            write_prec(b, f, 3)?;
        }
        Expr::Pow(a, k) => {
            write_prec(a, f, 5)?;
            write!(f, "^{k}")?;
        }
        Expr::Exp(a) => write!(f, "exp({a})")?,
        Expr::Sin(a) => write!(f, "sin({a})")?,
        Expr::Cos(a) => write!(f, "cos({a})")?,
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        s.parse().unwrap()
    }

    #[test]
    fn precedence_and_unary_minus() {
        let env = Env::new(0.0, 3.0, &[]);
        assert_eq!(p("-x^2").eval(&env), -9.0);
        assert_eq!(p("2 - x - 1").eval(&env), -2.0);
        assert_eq!(p("2 * (x + 1) / 4").eval(&env), 2.0);
        assert_eq!(p("1e-1 * 10").eval(&env), 1.0);
    }

    #[test]
    fn params_and_stats() {
        let params = BTreeMap::from([("theta".to_string(), 2.0)]);
        let e = Expr::parse_with("-theta * (x - s1)", &params).unwrap();
        assert_eq!(e.eval(&Env::new(0.0, 2.0, &[0.5])), -3.0);
        assert_eq!(e.max_stat_index(), Some(0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!("x^5".parse::<Expr>(), Err(Error::Parse { .. })));
        assert!(matches!("x / x".parse::<Expr>(), Err(Error::Parse { .. })));
        assert!(matches!("median(x)".parse::<Expr>(), Err(Error::Parse { .. })));
        assert!(matches!("s0".parse::<Expr>(), Err(Error::Parse { .. })));
        assert!(matches!("(x + 1".parse::<Expr>(), Err(Error::Parse { .. })));
        assert!(matches!("x x".parse::<Expr>(), Err(Error::Parse { .. })));
    }

    #[test]
    fn derivatives() {
        let e = p("-x^3 + x - 2 * (x - s1)");
        let dx = e.derivative(Var::State);
        let ds = e.derivative(Var::Stat(0));
        let env = Env::new(0.0, 2.0, &[1.0]);
        assert_eq!(dx.eval(&env), -12.0 + 1.0 - 2.0);
        assert_eq!(ds.eval(&env), 2.0);
        let c = p("cos(t)");
        let env = Env::time(0.7);
        assert!((c.nth_derivative(Var::Time, 3).eval(&env) - 0.7f64.sin()).abs() < 1e-15);
        assert_eq!(p("exp(2 * s1)").derivative(Var::Stat(0)).eval(&Env::stats(&[0.0])), 2.0);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Const),
            Just(Expr::Time),
            Just(Expr::State),
            (0usize..3).prop_map(Expr::Stat),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), 0u32..=MAX_POWER).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(e in arb_expr(), t in -1.0f64..1.0, x in -1.0f64..1.0) {
            let stats = [0.3, -0.7, 1.1];
            let env = Env::new(t, x, &stats);
            let back: Expr = e.to_string().parse().unwrap();
            let (a, b) = (e.eval(&env), back.eval(&env));
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} -> {} vs {}", e, a, b);
        }

        #[test]
        fn derivative_matches_central_difference(e in arb_expr(), x in -1.0f64..1.0) {
            let stats = [0.3, -0.7, 1.1];
            let h = 1e-5;
            let f = |x: f64| e.eval(&Env::new(0.2, x, &stats));
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            let exact = e.derivative(Var::State).eval(&Env::new(0.2, x, &stats));
            let scale = 1.0 + exact.abs() + f(x).abs();
            prop_assume!(scale < 1e4);
            prop_assert!((fd - exact).abs() <= 1e-5 * scale, "{}: fd {} exact {}", e, fd, exact);
        }
    }
}
