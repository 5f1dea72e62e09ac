//! Arithmetic expressions over named quantities.
//!
//! One expression type serves every indicator-like role in the crate: Petri
//! net rate functions (identifiers are place names), automaton guards, flows
//! and updates (identifiers are automaton variables or place names), and
//! target measures (identifiers are automaton variables). Parsing keeps the
//! grammar small: identifiers, decimal literals, `+ - * /`, unary minus and
//! parentheses.
//!
//! Expressions are resolved against an [`Env`] before evaluation so that the
//! hot simulation loop works on integer slots instead of string lookups.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Expression syntax tree. Identifiers are unresolved names.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Numeric literal.
    Const(f64),
    /// Named quantity: a place marking or an automaton variable.
    Ident(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn ident(name: impl Into<String>) -> Expr {
        Expr::Ident(name.into())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    /// All identifiers appearing in the expression, in first-seen order.
    pub fn idents(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_idents(&mut out);
        out
    }

    fn collect_idents<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Ident(name) => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_idents(out);
                b.collect_idents(out);
            }
            Expr::Neg(a) => a.collect_idents(out),
        }
    }

    /// Resolve identifiers to slots. Fails on names unknown to the
    /// environment.
    pub fn bind(&self, env: &Env) -> Result<BoundExpr, ExprError> {
        Ok(match self {
            Expr::Const(v) => BoundExpr::Const(*v),
            Expr::Ident(name) => match env.lookup(name) {
                Some(slot) => BoundExpr::Slot(slot),
                None => return Err(ExprError::UnknownIdent(name.clone())),
            },
            Expr::Add(a, b) => BoundExpr::Add(Box::new(a.bind(env)?), Box::new(b.bind(env)?)),
            Expr::Sub(a, b) => BoundExpr::Sub(Box::new(a.bind(env)?), Box::new(b.bind(env)?)),
            Expr::Mul(a, b) => BoundExpr::Mul(Box::new(a.bind(env)?), Box::new(b.bind(env)?)),
            Expr::Div(a, b) => BoundExpr::Div(Box::new(a.bind(env)?), Box::new(b.bind(env)?)),
            Expr::Neg(a) => BoundExpr::Neg(Box::new(a.bind(env)?)),
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Parenthesize conservatively; output is re-parseable, not pretty.
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Ident(name) => write!(f, "{name}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
        }
    }
}

/// Where a resolved identifier lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Index into the marking vector.
    Place(usize),
    /// Index into the automaton valuation.
    Var(usize),
}

/// Name-resolution environment: place names and (optionally) automaton
/// variable names. Variable names shadow nothing; a name bound in both maps
/// is rejected when the automaton is validated.
pub struct Env<'a> {
    places: &'a HashMap<String, usize>,
    vars: Option<&'a HashMap<String, usize>>,
}

impl<'a> Env<'a> {
    pub fn places_only(places: &'a HashMap<String, usize>) -> Env<'a> {
        Env { places, vars: None }
    }

    pub fn with_vars(
        places: &'a HashMap<String, usize>,
        vars: &'a HashMap<String, usize>,
    ) -> Env<'a> {
        Env {
            places,
            vars: Some(vars),
        }
    }

    fn lookup(&self, name: &str) -> Option<Slot> {
        if let Some(vars) = self.vars {
            if let Some(&i) = vars.get(name) {
                return Some(Slot::Var(i));
            }
        }
        self.places.get(name).map(|&i| Slot::Place(i))
    }
}

/// Expression with identifiers resolved to slots, ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Const(f64),
    Slot(Slot),
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Sub(Box<BoundExpr>, Box<BoundExpr>),
    Mul(Box<BoundExpr>, Box<BoundExpr>),
    Div(Box<BoundExpr>, Box<BoundExpr>),
    Neg(Box<BoundExpr>),
}

impl BoundExpr {
    /// Evaluate against a marking alone. Variable slots evaluate to 0 and
    /// never occur in place-only expressions by construction.
    #[inline]
    pub fn eval_marking(&self, marking: &[u64]) -> f64 {
        self.eval(marking, &[])
    }

    /// Evaluate against a marking and an automaton valuation.
    #[inline]
    pub fn eval(&self, marking: &[u64], vars: &[f64]) -> f64 {
        match self {
            BoundExpr::Const(v) => *v,
            BoundExpr::Slot(Slot::Place(i)) => marking[*i] as f64,
            BoundExpr::Slot(Slot::Var(i)) => vars[*i],
            BoundExpr::Add(a, b) => a.eval(marking, vars) + b.eval(marking, vars),
            BoundExpr::Sub(a, b) => a.eval(marking, vars) - b.eval(marking, vars),
            BoundExpr::Mul(a, b) => a.eval(marking, vars) * b.eval(marking, vars),
            BoundExpr::Div(a, b) => a.eval(marking, vars) / b.eval(marking, vars),
            BoundExpr::Neg(a) => -a.eval(marking, vars),
        }
    }

    /// True if no automaton variable occurs in the expression.
    pub fn is_marking_only(&self) -> bool {
        match self {
            BoundExpr::Const(_) => true,
            BoundExpr::Slot(Slot::Place(_)) => true,
            BoundExpr::Slot(Slot::Var(_)) => false,
            BoundExpr::Add(a, b)
            | BoundExpr::Sub(a, b)
            | BoundExpr::Mul(a, b)
            | BoundExpr::Div(a, b) => a.is_marking_only() && b.is_marking_only(),
            BoundExpr::Neg(a) => a.is_marking_only(),
        }
    }

    /// Constant value if the expression contains no slot at all.
    pub fn as_const(&self) -> Option<f64> {
        match self {
            BoundExpr::Const(v) => Some(*v),
            BoundExpr::Slot(_) => None,
            BoundExpr::Add(a, b) => Some(a.as_const()? + b.as_const()?),
            BoundExpr::Sub(a, b) => Some(a.as_const()? - b.as_const()?),
            BoundExpr::Mul(a, b) => Some(a.as_const()? * b.as_const()?),
            BoundExpr::Div(a, b) => Some(a.as_const()? / b.as_const()?),
            BoundExpr::Neg(a) => Some(-a.as_const()?),
        }
    }

    /// Split into a linear form over automaton variables:
    /// `sum_i coeff_i * x_i + remainder`, where every coefficient and the
    /// remainder are marking-only expressions. Fails when variables occur
    /// non-linearly (products of variables, variables in divisors).
    pub fn linearize(&self) -> Result<LinearForm, ExprError> {
        match self {
            BoundExpr::Const(_) | BoundExpr::Slot(Slot::Place(_)) => Ok(LinearForm {
                terms: Vec::new(),
                remainder: self.clone(),
            }),
            BoundExpr::Slot(Slot::Var(i)) => Ok(LinearForm {
                terms: vec![(*i, BoundExpr::Const(1.0))],
                remainder: BoundExpr::Const(0.0),
            }),
            BoundExpr::Add(a, b) => Ok(a.linearize()?.combine(b.linearize()?, false)),
            BoundExpr::Sub(a, b) => Ok(a.linearize()?.combine(b.linearize()?, true)),
            BoundExpr::Neg(a) => {
                let mut form = a.linearize()?;
                for (_, c) in &mut form.terms {
                    *c = BoundExpr::Neg(Box::new(c.clone()));
                }
                form.remainder = BoundExpr::Neg(Box::new(form.remainder));
                Ok(form)
            }
            BoundExpr::Mul(a, b) => {
                let (scalar, linear) = if a.is_marking_only() {
                    (a, b)
                } else if b.is_marking_only() {
                    (b, a)
                } else {
                    return Err(ExprError::NotLinear);
                };
                let mut form = linear.linearize()?;
                for (_, c) in &mut form.terms {
                    *c = BoundExpr::Mul(Box::new(scalar.as_ref().clone()), Box::new(c.clone()));
                }
                form.remainder = BoundExpr::Mul(Box::new(scalar.as_ref().clone()), Box::new(form.remainder));
                Ok(form)
            }
            BoundExpr::Div(a, b) => {
                if !b.is_marking_only() {
                    return Err(ExprError::NotLinear);
                }
                let mut form = a.linearize()?;
                for (_, c) in &mut form.terms {
                    *c = BoundExpr::Div(Box::new(c.clone()), Box::new(b.as_ref().clone()));
                }
                form.remainder = BoundExpr::Div(Box::new(form.remainder), Box::new(b.as_ref().clone()));
                Ok(form)
            }
        }
    }
}

/// `sum_i coeff_i * x_i + remainder` with marking-only coefficients.
#[derive(Debug, Clone)]
pub struct LinearForm {
    /// `(variable index, coefficient)` pairs; indices unique.
    pub terms: Vec<(usize, BoundExpr)>,
    pub remainder: BoundExpr,
}

impl LinearForm {
    fn combine(mut self, other: LinearForm, negate: bool) -> LinearForm {
        for (var, coeff) in other.terms {
            let coeff = if negate {
                BoundExpr::Neg(Box::new(coeff))
            } else {
                coeff
            };
            match self.terms.iter_mut().find(|(v, _)| *v == var) {
                Some((_, existing)) => {
                    *existing = BoundExpr::Add(Box::new(existing.clone()), Box::new(coeff));
                }
                None => self.terms.push((var, coeff)),
            }
        }
        self.remainder = if negate {
            BoundExpr::Sub(Box::new(self.remainder), Box::new(other.remainder))
        } else {
            BoundExpr::Add(Box::new(self.remainder), Box::new(other.remainder))
        };
        self
    }
}

/// Errors from parsing or resolving expressions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("expression is not linear in the automaton variables")]
    NotLinear,
}

// ---------------------------------------------------------------------------
// Parsing

pub(crate) struct Lexer<'a> {
    input: &'a str,
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    LBracket,
    RBracket,
    // Comparison / logical tokens used by guard and proposition parsers.
    Le,
    Ge,
    Lt,
    Gt,
    Eq,
    AndAnd,
    End,
}

impl<'a> Lexer<'a> {
    pub fn new(input: &'a str) -> Lexer<'a> {
        Lexer { input, pos: 0 }
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            message: message.into(),
        }
    }

    pub fn next_token(&mut self) -> Result<Token, ExprError> {
        let bytes = self.input.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(Token::End);
        }
        let start = self.pos;
        let c = bytes[self.pos];
        let token = match c {
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'/' => {
                self.pos += 1;
                Token::Slash
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b'[' => {
                self.pos += 1;
                Token::LBracket
            }
            b']' => {
                self.pos += 1;
                Token::RBracket
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'<' => {
                self.pos += 1;
                if bytes.get(self.pos) == Some(&b'=') {
                    self.pos += 1;
                    Token::Le
                } else {
                    Token::Lt
                }
            }
            b'>' => {
                self.pos += 1;
                if bytes.get(self.pos) == Some(&b'=') {
                    self.pos += 1;
                    Token::Ge
                } else {
                    Token::Gt
                }
            }
            b'=' => {
                self.pos += 1;
                if bytes.get(self.pos) == Some(&b'=') {
                    self.pos += 1;
                }
                Token::Eq
            }
            b'&' => {
                self.pos += 1;
                if bytes.get(self.pos) == Some(&b'&') {
                    self.pos += 1;
                }
                Token::AndAnd
            }
            b'0'..=b'9' | b'.' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_digit()
                        || bytes[self.pos] == b'.'
                        || bytes[self.pos] == b'e'
                        || bytes[self.pos] == b'E'
                        || ((bytes[self.pos] == b'+' || bytes[self.pos] == b'-')
                            && matches!(bytes.get(self.pos - 1), Some(b'e') | Some(b'E'))))
                {
                    self.pos += 1;
                }
                let text = &self.input[start..self.pos];
                let value: f64 = text
                    .parse()
                    .map_err(|_| self.error(format!("bad number `{text}`")))?;
                Token::Number(value)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Token::Ident(self.input[start..self.pos].to_string())
            }
            other => return Err(self.error(format!("unexpected character `{}`", other as char))),
        };
        Ok(token)
    }

    pub fn peek(&mut self) -> Result<Token, ExprError> {
        let saved = self.pos;
        let token = self.next_token()?;
        self.pos = saved;
        Ok(token)
    }

    pub fn expect(&mut self, expected: &Token, what: &str) -> Result<(), ExprError> {
        let token = self.next_token()?;
        if &token != expected {
            return Err(self.error(format!("expected {what}, found {token:?}")));
        }
        Ok(())
    }
}

/// Parse an arithmetic expression from text.
pub fn parse_expr(input: &str) -> Result<Expr, ExprError> {
    let mut lexer = Lexer::new(input);
    let expr = parse_sum(&mut lexer)?;
    lexer.expect(&Token::End, "end of expression")?;
    Ok(expr)
}

pub(crate) fn parse_sum(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let mut left = parse_product(lexer)?;
    loop {
        match lexer.peek()? {
            Token::Plus => {
                lexer.next_token()?;
                left = Expr::add(left, parse_product(lexer)?);
            }
            Token::Minus => {
                lexer.next_token()?;
                left = Expr::sub(left, parse_product(lexer)?);
            }
            _ => return Ok(left),
        }
    }
}

fn parse_product(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let mut left = parse_atom(lexer)?;
    loop {
        match lexer.peek()? {
            Token::Star => {
                lexer.next_token()?;
                left = Expr::mul(left, parse_atom(lexer)?);
            }
            Token::Slash => {
                lexer.next_token()?;
                left = Expr::div(left, parse_atom(lexer)?);
            }
            _ => return Ok(left),
        }
    }
}

fn parse_atom(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let pos = lexer.pos;
    match lexer.next_token()? {
        Token::Number(v) => Ok(Expr::Const(v)),
        Token::Ident(name) => Ok(Expr::Ident(name)),
        Token::Minus => Ok(Expr::Neg(Box::new(parse_atom(lexer)?))),
        Token::LParen => {
            let inner = parse_sum(lexer)?;
            lexer.expect(&Token::RParen, "`)`")?;
            Ok(inner)
        }
        other => Err(ExprError::Syntax {
            pos,
            message: format!("expected expression, found {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_places(names: &[&str]) -> HashMap<String, usize> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect()
    }

    #[test]
    fn parses_and_evaluates_arithmetic() {
        let places = env_places(&["A", "B"]);
        let expr = parse_expr("2 * A + B / 4 - 1").unwrap();
        let bound = expr.bind(&Env::places_only(&places)).unwrap();
        assert_eq!(bound.eval_marking(&[3, 8]), 2.0 * 3.0 + 8.0 / 4.0 - 1.0);
    }

    #[test]
    fn unary_minus_and_parens() {
        let places = env_places(&[]);
        let expr = parse_expr("-(2 + 1) * 4").unwrap();
        let bound = expr.bind(&Env::places_only(&places)).unwrap();
        assert_eq!(bound.eval_marking(&[]), -12.0);
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        let places = env_places(&["A"]);
        let expr = parse_expr("A + Z").unwrap();
        let err = expr.bind(&Env::places_only(&places)).unwrap_err();
        assert_eq!(err, ExprError::UnknownIdent("Z".to_string()));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_expr("1 + ?").unwrap_err();
        match err {
            ExprError::Syntax { pos, .. } => assert_eq!(pos, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn display_round_trips() {
        let expr = parse_expr("(2 * A + 3) / (B - 1)").unwrap();
        let printed = expr.to_string();
        assert_eq!(parse_expr(&printed).unwrap(), expr);
    }

    #[test]
    fn linearizes_variable_terms() {
        let places = env_places(&["A"]);
        let vars = env_places(&["x", "y"]);
        let expr = parse_expr("2 * x + A * y - 5").unwrap();
        let bound = expr.bind(&Env::with_vars(&places, &vars)).unwrap();
        let form = bound.linearize().unwrap();
        assert_eq!(form.terms.len(), 2);
        let marking = [7u64];
        let coeff_x = &form.terms.iter().find(|(v, _)| *v == 0).unwrap().1;
        let coeff_y = &form.terms.iter().find(|(v, _)| *v == 1).unwrap().1;
        assert_eq!(coeff_x.eval_marking(&marking), 2.0);
        assert_eq!(coeff_y.eval_marking(&marking), 7.0);
        assert_eq!(form.remainder.eval_marking(&marking), -5.0);
    }

    #[test]
    fn rejects_nonlinear_variable_use() {
        let places = env_places(&[]);
        let vars = env_places(&["x", "y"]);
        let expr = parse_expr("x * y").unwrap();
        let bound = expr.bind(&Env::with_vars(&places, &vars)).unwrap();
        assert!(matches!(bound.linearize(), Err(ExprError::NotLinear)));
    }
}
