//! The closed expression language used for sequence-flow conditions, ABAC
//! predicates and decision-table unary tests.
//!
//! Conditions:
//!
//! ```text
//! expr    := or
//! or      := and (("or" | "||") and)*
//! and     := unary (("and" | "&&") unary)*
//! unary   := ("not" | "!") unary | cmp
//! cmp     := primary (cmpop primary | "in" interval)?
//! primary := literal | ident | "(" expr ")"
//! cmpop   := "==" | "=" | "!=" | "<" | "<=" | ">" | ">="
//! interval:= ("[" | "(" | "]") number ".." number ("]" | ")" | "[")
//! ```
//!
//! Unary tests (decision-table input entries) are `-` (any), or a comma-separated
//! disjunction of `literal`, `cmpop literal` or `interval`, optionally wrapped in
//! `not( ... )`.
//!
//! Ordering comparisons and intervals apply only to numbers. Mixing types is an
//! [`ExprError::TypeMismatch`], never a coercion.

use std::fmt;

use rust_decimal::Decimal;
use thiserror::Error;

use super::value::{parse_decimal, Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    /// Applies the operator; ordering operators require numbers on both sides.
    pub fn apply(self, left: &Value, right: &Value) -> Result<bool, ExprError> {
        if left.kind() != right.kind() {
            return Err(ExprError::TypeMismatch(format!(
                "cannot compare {} {} {}",
                left.kind(),
                self.symbol(),
                right.kind()
            )));
        }
        match (self, left, right) {
            (CmpOp::Eq, l, r) => Ok(l == r),
            (CmpOp::Ne, l, r) => Ok(l != r),
            (op, Value::Number(l), Value::Number(r)) => Ok(match op {
                CmpOp::Lt => l < r,
                CmpOp::Le => l <= r,
                CmpOp::Gt => l > r,
                CmpOp::Ge => l >= r,
                CmpOp::Eq | CmpOp::Ne => unreachable!(),
            }),
            (op, l, _) => Err(ExprError::TypeMismatch(format!(
                "operator {} is not defined on {}",
                op.symbol(),
                l.kind()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub low: Decimal,
    pub high: Decimal,
    pub low_closed: bool,
    pub high_closed: bool,
}

impl Interval {
    pub fn contains(&self, value: &Value) -> Result<bool, ExprError> {
        let Value::Number(n) = value else {
            return Err(ExprError::TypeMismatch(format!(
                "interval test applied to {}",
                value.kind()
            )));
        };
        let above = if self.low_closed { *n >= self.low } else { *n > self.low };
        let below = if self.high_closed { *n <= self.high } else { *n < self.high };
        Ok(above && below)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}..{}{}",
            if self.low_closed { '[' } else { '(' },
            self.low,
            self.high,
            if self.high_closed { ']' } else { ')' }
        )
    }
}

/// Parsed condition expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Literal(Value),
    Var(String),
    Compare(Box<Expr>, CmpOp, Box<Expr>),
    In(Box<Expr>, Interval),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.len() };
        let e = p.expr()?;
        p.expect_end()?;
        Ok(e)
    }

    /// Evaluates against a variable lookup. Unknown variables are errors.
    pub fn eval(&self, vars: &dyn Fn(&str) -> Option<Value>) -> Result<Value, ExprError> {
        Ok(match self {
            Expr::Literal(v) => v.clone(),
            Expr::Var(name) => vars(name).ok_or_else(|| ExprError::UnknownVariable(name.clone()))?,
            Expr::Compare(l, op, r) => Value::Bool(op.apply(&l.eval(vars)?, &r.eval(vars)?)?),
            Expr::In(e, iv) => Value::Bool(iv.contains(&e.eval(vars)?)?),
            Expr::And(l, r) => Value::Bool(l.eval_bool(vars)? && r.eval_bool(vars)?),
            Expr::Or(l, r) => Value::Bool(l.eval_bool(vars)? || r.eval_bool(vars)?),
            Expr::Not(e) => Value::Bool(!e.eval_bool(vars)?),
        })
    }

    pub fn eval_bool(&self, vars: &dyn Fn(&str) -> Option<Value>) -> Result<bool, ExprError> {
        match self.eval(vars)? {
            Value::Bool(b) => Ok(b),
            other => Err(ExprError::TypeMismatch(format!(
                "expected boolean, found {}",
                other.kind()
            ))),
        }
    }

    /// Variable names referenced anywhere in the expression, in first-use order.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Literal(_) => {}
                Expr::Var(n) => {
                    if !out.contains(n) {
                        out.push(n.clone())
                    }
                }
                Expr::Compare(l, _, r) | Expr::And(l, r) | Expr::Or(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::In(e, _) | Expr::Not(e) => walk(e, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Literals compared against each variable; used to synthesize payloads that
    /// steer a condition either way.
    pub fn literals_by_variable(&self) -> Vec<(String, Value)> {
        fn walk(e: &Expr, out: &mut Vec<(String, Value)>) {
            match e {
                Expr::Compare(l, _, r) => match (l.as_ref(), r.as_ref()) {
                    (Expr::Var(n), Expr::Literal(v)) | (Expr::Literal(v), Expr::Var(n)) => {
                        out.push((n.clone(), v.clone()))
                    }
                    _ => {
                        walk(l, out);
                        walk(r, out);
                    }
                },
                Expr::In(inner, iv) => {
                    if let Expr::Var(n) = inner.as_ref() {
                        out.push((n.clone(), Value::Number(iv.low)));
                        out.push((n.clone(), Value::Number(iv.high)));
                    }
                }
                Expr::And(l, r) | Expr::Or(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::Not(e) => walk(e, out),
                Expr::Literal(_) | Expr::Var(_) => {}
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

/// One disjunct of a unary-test cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnaryTest {
    Equals(Value),
    Compare(CmpOp, Value),
    Interval(Interval),
}

impl UnaryTest {
    fn matches(&self, input: &Value) -> Result<bool, ExprError> {
        match self {
            UnaryTest::Equals(lit) => CmpOp::Eq.apply(input, lit),
            UnaryTest::Compare(op, lit) => op.apply(input, lit),
            UnaryTest::Interval(iv) => iv.contains(input),
        }
    }

    fn literals(&self) -> Vec<Value> {
        match self {
            UnaryTest::Equals(v) | UnaryTest::Compare(_, v) => vec![v.clone()],
            UnaryTest::Interval(iv) => vec![Value::Number(iv.low), Value::Number(iv.high)],
        }
    }
}

/// A decision-table input entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnaryTests {
    Any,
    AnyOf(Vec<UnaryTest>),
    NoneOf(Vec<UnaryTest>),
}

impl UnaryTests {
    pub fn parse(src: &str) -> Result<UnaryTests, ExprError> {
        let trimmed = src.trim();
        if trimmed.is_empty() || trimmed == "-" {
            return Ok(UnaryTests::Any);
        }
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.len() };
        let negated = matches!(p.peek(), Some(Tok::Not)) && matches!(p.peek_at(1), Some(Tok::LParen));
        if negated {
            p.pos += 2;
        }
        let mut tests = vec![p.unary_test()?];
        while p.eat(&Tok::Comma) {
            tests.push(p.unary_test()?);
        }
        if negated {
            p.expect(&Tok::RParen)?;
        }
        p.expect_end()?;
        Ok(if negated { UnaryTests::NoneOf(tests) } else { UnaryTests::AnyOf(tests) })
    }

    pub fn matches(&self, input: &Value) -> Result<bool, ExprError> {
        let any = |tests: &[UnaryTest]| -> Result<bool, ExprError> {
            let mut hit = false;
            // Evaluate every disjunct so a type error is never masked by an
            // earlier match.
            for t in tests {
                hit |= t.matches(input)?;
            }
            Ok(hit)
        };
        match self {
            UnaryTests::Any => Ok(true),
            UnaryTests::AnyOf(tests) => any(tests),
            UnaryTests::NoneOf(tests) => any(tests).map(|b| !b),
        }
    }

    /// Static check that every literal in the cell is usable against `ty`.
    pub fn check_type(&self, ty: ValueType) -> Result<(), ExprError> {
        let tests = match self {
            UnaryTests::Any => return Ok(()),
            UnaryTests::AnyOf(t) | UnaryTests::NoneOf(t) => t,
        };
        let kind = ty.runtime_kind();
        for t in tests {
            let ok = match t {
                UnaryTest::Equals(v) => v.kind() == kind,
                UnaryTest::Compare(op, v) => {
                    v.kind() == kind && (!op.is_ordering() || kind == ValueType::Number)
                }
                UnaryTest::Interval(_) => kind == ValueType::Number,
            };
            if !ok {
                return Err(ExprError::TypeMismatch(format!("unary test {t:?} against {ty}")));
            }
        }
        Ok(())
    }

    pub fn literals(&self) -> Vec<Value> {
        match self {
            UnaryTests::Any => Vec::new(),
            UnaryTests::AnyOf(t) | UnaryTests::NoneOf(t) => t.iter().flat_map(|t| t.literals()).collect(),
        }
    }
}

/// Parses a single literal (number, quoted string, `true`/`false`).
pub fn parse_literal(src: &str) -> Result<Value, ExprError> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens, pos: 0, len: src.len() };
    let v = p.literal()?;
    p.expect_end()?;
    Ok(v)
}

/// Renders a value as a literal the parser accepts.
pub fn literal_text(v: &Value) -> String {
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Number(d) => d.normalize().to_string(),
        Value::String(s) => {
            let mut out = String::with_capacity(s.len() + 2);
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Decimal),
    Str(String),
    Ident(String),
    True,
    False,
    And,
    Or,
    Not,
    In,
    Cmp(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    DotDot,
    Comma,
    Minus,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, message: &str| ExprError::Syntax { offset, message: message.to_string() };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b'[' => {
                out.push((start, Tok::LBracket));
                i += 1;
            }
            b']' => {
                out.push((start, Tok::RBracket));
                i += 1;
            }
            b',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            b'.' if bytes.get(i + 1) == Some(&b'.') => {
                out.push((start, Tok::DotDot));
                i += 2;
            }
            b'=' => {
                i += if bytes.get(i + 1) == Some(&b'=') { 2 } else { 1 };
                out.push((start, Tok::Cmp(CmpOp::Eq)));
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((start, Tok::Cmp(CmpOp::Ne)));
                    i += 2;
                } else {
                    out.push((start, Tok::Not));
                    i += 1;
                }
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', true) => CmpOp::Le,
                    (b'<', false) => CmpOp::Lt,
                    (_, true) => CmpOp::Ge,
                    (_, false) => CmpOp::Gt,
                };
                out.push((start, Tok::Cmp(op)));
                i += if eq { 2 } else { 1 };
            }
            b'&' if bytes.get(i + 1) == Some(&b'&') => {
                out.push((start, Tok::And));
                i += 2;
            }
            b'|' if bytes.get(i + 1) == Some(&b'|') => {
                out.push((start, Tok::Or));
                i += 2;
            }
            b'-' => {
                out.push((start, Tok::Minus));
                i += 1;
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(ch) = src[i..].chars().next() else {
                        return Err(err(start, "unterminated string"));
                    };
                    i += ch.len_utf8();
                    match ch {
                        '"' => break,
                        '\\' => {
                            let Some(esc) = src[i..].chars().next() else {
                                return Err(err(start, "unterminated escape"));
                            };
                            i += esc.len_utf8();
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                '"' => '"',
                                '\\' => '\\',
                                _ => return Err(err(i, "unknown escape")),
                            });
                        }
                        ch => s.push(ch),
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let n = parse_decimal(&src[start..i]).ok_or_else(|| err(start, "bad number"))?;
                out.push((start, Tok::Num(n)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || (bytes[i] == b'.' && bytes.get(i + 1) != Some(&b'.')))
                {
                    i += 1;
                }
                let word = &src[start..i];
                out.push((
                    start,
                    match word {
                        "true" => Tok::True,
                        "false" => Tok::False,
                        "and" => Tok::And,
                        "or" => Tok::Or,
                        "not" => Tok::Not,
                        "in" => Tok::In,
                        _ => Tok::Ident(word.to_string()),
                    },
                ));
            }
            _ => return Err(err(start, "unexpected character")),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + ahead).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.len)
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset: self.offset(), message: message.into() }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ExprError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.error(format!("expected {t:?}")))
        }
    }

    fn expect_end(&self) -> Result<(), ExprError> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.and()?;
        while self.eat(&Tok::Or) {
            left = Expr::Or(Box::new(left), Box::new(self.and()?));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.unary()?;
        while self.eat(&Tok::And) {
            left = Expr::And(Box::new(left), Box::new(self.unary()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let left = self.primary()?;
        match self.peek().cloned() {
            Some(Tok::Cmp(op)) => {
                self.pos += 1;
                let right = self.primary()?;
                Ok(Expr::Compare(Box::new(left), op, Box::new(right)))
            }
            Some(Tok::In) => {
                self.pos += 1;
                Ok(Expr::In(Box::new(left), self.interval()?))
            }
            _ => Ok(left),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                Ok(Expr::Var(name))
            }
            _ => Ok(Expr::Literal(self.literal()?)),
        }
    }

    fn literal(&mut self) -> Result<Value, ExprError> {
        let v = match self.peek().cloned() {
            Some(Tok::True) => Value::Bool(true),
            Some(Tok::False) => Value::Bool(false),
            Some(Tok::Str(s)) => Value::String(s),
            Some(Tok::Num(n)) => Value::Number(n),
            Some(Tok::Minus) => {
                self.pos += 1;
                return match self.peek().cloned() {
                    Some(Tok::Num(n)) => {
                        self.pos += 1;
                        Ok(Value::Number(-n))
                    }
                    _ => Err(self.error("expected number after '-'")),
                };
            }
            _ => return Err(self.error("expected literal")),
        };
        self.pos += 1;
        Ok(v)
    }

    fn number(&mut self) -> Result<Decimal, ExprError> {
        match self.literal()? {
            Value::Number(n) => Ok(n),
            other => Err(ExprError::TypeMismatch(format!(
                "interval bound must be a number, found {}",
                other.kind()
            ))),
        }
    }

    fn interval(&mut self) -> Result<Interval, ExprError> {
        let low_closed = match self.peek() {
            Some(Tok::LBracket) => true,
            Some(Tok::LParen) | Some(Tok::RBracket) => false,
            _ => return Err(self.error("expected interval")),
        };
        self.pos += 1;
        let low = self.number()?;
        self.expect(&Tok::DotDot)?;
        let high = self.number()?;
        let high_closed = match self.peek() {
            Some(Tok::RBracket) => true,
            Some(Tok::RParen) | Some(Tok::LBracket) => false,
            _ => return Err(self.error("expected interval end")),
        };
        self.pos += 1;
        Ok(Interval { low, high, low_closed, high_closed })
    }

    fn unary_test(&mut self) -> Result<UnaryTest, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Cmp(op)) => {
                self.pos += 1;
                let v = self.literal()?;
                Ok(if op == CmpOp::Eq { UnaryTest::Equals(v) } else { UnaryTest::Compare(op, v) })
            }
            Some(Tok::LBracket) | Some(Tok::RBracket) => Ok(UnaryTest::Interval(self.interval()?)),
            Some(Tok::LParen) if matches!(self.peek_at(2), Some(Tok::DotDot)) || matches!(self.peek_at(3), Some(Tok::DotDot)) => {
                Ok(UnaryTest::Interval(self.interval()?))
            }
            _ => Ok(UnaryTest::Equals(self.literal()?)),
        }
    }
}
