//! Scalar expressions over named variables.
//!
//! The grammar (see `docs/field-grammar.md`) admits numbers, variables,
//! `+ - *` (also `·` and `−`), non-negative integer powers `^k`, parentheses,
//! the atom `gauss(v)` = `exp(-v^2)` for a variable `v`, and `sin`, `cos`,
//! `exp` of any subexpression. Every expression is analytic, so jets of any
//! order are available.

use std::fmt;

use super::jet::Jet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Gauss(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Apply(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    fn eval(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
        }
    }

    /// `f^{(m)}(v)/m!` for `m = 0..=order`.
    fn series(self, v: f64, order: usize) -> Vec<f64> {
        let mut fact = 1.0;
        (0..=order)
            .map(|m| {
                if m > 0 {
                    fact *= m as f64;
                }
                let shift = m as f64 * std::f64::consts::FRAC_PI_2;
                let d = match self {
                    Func::Sin => (v + shift).sin(),
                    Func::Cos => (v + shift).cos(),
                    Func::Exp => v.exp(),
                };
                d / fact
            })
            .collect()
    }
}

/// Taylor coefficients `φ^{(m)}(x)/m!` of `φ(x) = e^{-x²}` for `m = 0..=order`.
///
/// Uses `φ^{(m)} = (-1)^m H_m e^{-x²}` through the scaled recurrence
/// `b_{m+1} = -(2x b_m + 2 b_{m-1})/(m+1)`.
pub fn gauss_series(x: f64, order: usize) -> Vec<f64> {
    let mut b = Vec::with_capacity(order + 1);
    let phi = (-x * x).exp();
    b.push(phi);
    if order >= 1 {
        b.push(-2.0 * x * phi);
    }
    for m in 1..order {
        let next = -(2.0 * x * b[m] + 2.0 * b[m - 1]) / (m as f64 + 1.0);
        b.push(next);
    }
    b
}

impl Expr {
    /// Parses `src` with the given variable names (e.g. `["x1", "x2"]`).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let mut p = Parser {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
            vars,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Gauss(i) => (-x[*i] * x[*i]).exp(),
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Pow(a, k) => a.eval(x).powi(*k as i32),
            Expr::Apply(func, a) => func.eval(a.eval(x)),
        }
    }

    /// Jet in all `x.len()` variables, expanded at `x`.
    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        let vars = x.len();
        match self {
            Expr::Const(c) => Jet::constant(vars, order, *c),
            Expr::Var(i) => Jet::variable(vars, order, *i, x[*i]),
            Expr::Gauss(i) => Jet::univariate(vars, order, *i, &gauss_series(x[*i], order)),
            Expr::Neg(a) => a.jet(x, order).scaled(-1.0),
            Expr::Add(a, b) => {
                let mut j = a.jet(x, order);
                j.add_assign(&b.jet(x, order));
                j
            }
            Expr::Sub(a, b) => {
                let mut j = a.jet(x, order);
                j.sub_assign(&b.jet(x, order));
                j
            }
            Expr::Mul(a, b) => {
                if let Expr::Const(c) = **a {
                    return b.jet(x, order).scaled(c);
                }
                a.jet(x, order).mul(&b.jet(x, order))
            }
            Expr::Pow(a, k) => a.jet(x, order).powi(*k),
            Expr::Apply(func, a) => {
                // f(g) = Σ a_m (g − g₀)^m, truncated at the jet order
                let g = a.jet(x, order);
                let g0 = g.value();
                let mut delta = g;
                delta.sub_assign(&Jet::constant(vars, order, g0));
                let coeffs = func.series(g0, order);
                let mut out = Jet::constant(vars, order, coeffs[order]);
                for &c in coeffs[..order].iter().rev() {
                    out = out.mul(&delta);
                    out.add_assign(&Jet::constant(vars, order, c));
                }
                out
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn display<'a>(&'a self, vars: &'a [&'a str]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a [&'a str],
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars = self.vars;
        let sub = |e: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let d = e.display(vars);
            if e.precedence() < min {
                write!(f, "({d})")
            } else {
                write!(f, "{d}")
            }
        };
        match self.expr {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "{}", self.vars[*i]),
            Expr::Gauss(i) => write!(f, "gauss({})", self.vars[*i]),
            Expr::Apply(func, a) => write!(f, "{}({})", func.name(), a.display(vars)),
            Expr::Neg(a) => {
                write!(f, "-")?;
                sub(a, 4, f)
            }
            Expr::Add(a, b) => {
                sub(a, 1, f)?;
                write!(f, " + ")?;
                sub(b, 2, f)
            }
            Expr::Sub(a, b) => {
                sub(a, 1, f)?;
                write!(f, " - ")?;
                sub(b, 2, f)
            }
            Expr::Mul(a, b) => {
                sub(a, 2, f)?;
                write!(f, "*")?;
                sub(b, 3, f)
            }
            Expr::Pow(a, k) => {
                sub(a, 5, f)?;
                write!(f, "^{k}")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        let offset = self.chars.get(self.pos).map_or(self.src.len(), |c| c.0);
        Error::Parse {
            source_text: self.src.to_string(),
            offset,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, options: &[char]) -> Option<char> {
        self.skip_ws();
        match self.peek() {
            Some(c) if options.contains(&c) => {
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat(&['+', '-', '−']) {
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while self.eat(&['*', '·']).is_some() {
            let rhs = self.factor()?;
            lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat(&['-', '−']).is_some() {
            let inner = self.factor()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        let base = self.atom()?;
        if self.eat(&['^']).is_some() {
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a non-negative integer exponent"));
            }
            let digits: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
            let k: u32 = digits.parse().map_err(|_| self.error("exponent out of range"))?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().map(|c| c.1).collect()
    }

    fn variable(&mut self) -> Result<usize> {
        self.skip_ws();
        let save = self.pos;
        let name = self.ident();
        match self.vars.iter().position(|v| *v == name) {
            Some(i) => Ok(i),
            None => {
                self.pos = save;
                Err(self.error(&format!("unknown variable `{name}` (expected one of {:?})", self.vars)))
            }
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.eat(&[')']).is_none() {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let save = self.pos;
                let name = self.ident();
                if name == "gauss" {
                    if self.eat(&['(']).is_none() {
                        return Err(self.error("expected `(` after gauss"));
                    }
                    let v = self.variable()?;
                    if self.eat(&[')']).is_none() {
                        return Err(self.error("gauss takes a single variable; expected `)`"));
                    }
                    return Ok(Expr::Gauss(v));
                }
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    _ => None,
                };
                if let Some(func) = func {
                    if self.eat(&['(']).is_none() {
                        return Err(self.error(&format!("expected `(` after {name}")));
                    }
                    let arg = self.expr()?;
                    if self.eat(&[')']).is_none() {
                        return Err(self.error("expected `)`"));
                    }
                    return Ok(Expr::Apply(func, Box::new(arg)));
                }
                self.pos = save;
                Ok(Expr::Var(self.variable()?))
            }
            _ => Err(self.error("expected a number, variable, function call or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
        text.parse::<f64>().map(Expr::Const).map_err(|_| {
            self.pos = start;
            self.error(&format!("malformed number `{text}`"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XY: [&str; 2] = ["x1", "x2"];

    #[test]
    fn function_jets_match_closed_form() {
        let e = Expr::parse("sin(2*x1) + exp(x2) * cos(x1)", &XY).unwrap();
        let x = [0.3, -0.4];
        let j = e.jet(&x, 6);
        assert!((j.value() - e.eval(&x)).abs() < 1e-15);
        // d/dx1 = 2cos(2x1) − exp(x2) sin(x1)
        let d1 = 2.0 * (0.6f64).cos() - (-0.4f64).exp() * (0.3f64).sin();
        assert!((j.coeff(&[1, 0]) - d1).abs() < 1e-13);
        // d³/dx1³ / 3! of sin(2x1) is −8cos(2x1)/6, plus exp(x2)·sin(x1)/6
        let d3 = -8.0 * (0.6f64).cos() / 6.0 + (-0.4f64).exp() * (0.3f64).sin() / 6.0;
        assert!((j.coeff(&[3, 0]) - d3).abs() < 1e-13);
        let shown = e.display(&XY).to_string();
        assert_eq!(Expr::parse(&shown, &XY).unwrap().eval(&x), e.eval(&x));
    }

    #[test]
    fn precedence_and_powers() {
        let e = Expr::parse("1 + 2*x1^2 - x2", &XY).unwrap();
        assert_eq!(e.eval(&[3.0, 4.0]), 1.0 + 18.0 - 4.0);
        let e = Expr::parse("-(x1 - 1)^2", &XY).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0]), -4.0);
        let e = Expr::parse("2e-1 * x1", &XY).unwrap();
        assert!((e.eval(&[1.0, 0.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unicode_operators() {
        let e = Expr::parse("x1 · x2 − 1", &XY).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0]), 5.0);
    }

    #[test]
    fn gauss_atom() {
        let e = Expr::parse("x2*gauss(x1)", &XY).unwrap();
        assert!((e.eval(&[1.0, 2.0]) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["x3", "gauss(x1 + 1)", "1 +", "(x1", "x1^-1", "tan(x1)", "sin x1", "1 2"] {
            assert!(Expr::parse(bad, &XY).is_err(), "{bad} should fail");
        }
    }

    #[test]
    fn gauss_series_matches_hermite() {
        // φ''(x) = (4x² − 2)e^{−x²}, φ'''(x) = (−8x³ + 12x)e^{−x²}
        let x = 0.7f64;
        let s = gauss_series(x, 3);
        let g = (-x * x).exp();
        assert!((s[2] * 2.0 - (4.0 * x * x - 2.0) * g).abs() < 1e-14);
        assert!((s[3] * 6.0 - (-8.0 * x.powi(3) + 12.0 * x) * g).abs() < 1e-14);
    }

    #[test]
    fn display_roundtrip() {
        for src in ["1 + 2*x1^2 - x2", "-(x1 - 1)^2*gauss(x2)", "x1 - (x2 - 3)", "-2*x1"] {
            let e = Expr::parse(src, &XY).unwrap();
            let shown = e.display(&XY).to_string();
            let back = Expr::parse(&shown, &XY).unwrap();
            for p in [[0.3, -1.2], [1.5, 0.25]] {
                assert_eq!(e.eval(&p), back.eval(&p), "{src} vs {shown}");
            }
        }
    }
}
