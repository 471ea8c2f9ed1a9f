//! Small arithmetic expressions over state variables `x1..xd` and action
//! variables `a1..ak`.
//!
//! The grammar is intentionally tiny: numbers, the constant `pi`, the four
//! binary operators, unary minus, parentheses and the functions
//! `sin cos exp sqrt abs` (one argument) and `min max` (two arguments).
//! There are no conditionals, so evaluation is branch-free apart from the
//! domain checks on `sqrt` and division.

use alloc::boxed::Box;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Zero-based state component (`x1` is `State(0)`).
    State(usize),
    /// Zero-based action component (`a1` is `Action(0)`).
    Action(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at column {}: {kind}", .pos + 1)]
pub struct ParseError {
    /// Zero-based byte offset into the source text.
    pub pos: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token")]
    UnexpectedToken,
    #[error("malformed number")]
    BadNumber,
    #[error("unknown identifier")]
    UnknownIdent,
    #[error("function expects {0} argument(s)")]
    Arity(usize),
    #[error("empty expression")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable {0:?} is not bound")]
    Unbound(Var),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        p.skip_ws();
        if p.pos >= p.src.len() {
            return Err(ParseError { pos: 0, kind: ParseErrorKind::Empty });
        }
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err_here());
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Evaluates at state `x` and action `a`. The result is always finite.
    pub fn eval(&self, x: &[f64], a: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_raw(x, a)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_raw(&self, x: &[f64], a: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => match *var {
                Var::State(i) => *x.get(i).ok_or(EvalError::Unbound(*var))?,
                Var::Action(i) => *a.get(i).ok_or(EvalError::Unbound(*var))?,
            },
            Expr::Neg(e) => -e.eval_raw(x, a)?,
            Expr::Bin(op, l, r) => {
                let l = l.eval_raw(x, a)?;
                let r = r.eval_raw(x, a)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        l / r
                    }
                }
            }
            Expr::Call1(f, e) => {
                let v = e.eval_raw(x, a)?;
                match f {
                    Func1::Sin => libm::sin(v),
                    Func1::Cos => libm::cos(v),
                    Func1::Exp => libm::exp(v),
                    Func1::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtDomain(v));
                        }
                        libm::sqrt(v)
                    }
                    Func1::Abs => v.abs(),
                }
            }
            Expr::Call2(f, l, r) => {
                let l = l.eval_raw(x, a)?;
                let r = r.eval_raw(x, a)?;
                match f {
                    Func2::Min => l.min(r),
                    Func2::Max => l.max(r),
                }
            }
        })
    }

    /// Largest one-based state index referenced (0 when none).
    pub fn max_state_var(&self) -> usize {
        self.fold_vars(0, &|acc, v| match v {
            Var::State(i) => acc.max(i + 1),
            Var::Action(_) => acc,
        })
    }

    /// Largest one-based action index referenced (0 when none).
    pub fn max_action_var(&self) -> usize {
        self.fold_vars(0, &|acc, v| match v {
            Var::Action(i) => acc.max(i + 1),
            Var::State(_) => acc,
        })
    }

    fn fold_vars(&self, acc: usize, f: &dyn Fn(usize, Var) -> usize) -> usize {
        match self {
            Expr::Num(_) => acc,
            Expr::Var(v) => f(acc, *v),
            Expr::Neg(e) | Expr::Call1(_, e) => e.fold_vars(acc, f),
            Expr::Bin(_, l, r) | Expr::Call2(_, l, r) => {
                let acc = l.fold_vars(acc, f);
                r.fold_vars(acc, f)
            }
        }
    }
}

impl core::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

// Fully parenthesized, so printing never depends on precedence rules.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{:?}", v)
                }
            }
            Expr::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Action(i)) => write!(f, "a{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{})", e),
            Expr::Bin(op, l, r) => {
                let op = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                };
                write!(f, "({} {} {})", l, op, r)
            }
            Expr::Call1(func, e) => {
                let name = match func {
                    Func1::Sin => "sin",
                    Func1::Cos => "cos",
                    Func1::Exp => "exp",
                    Func1::Sqrt => "sqrt",
                    Func1::Abs => "abs",
                };
                write!(f, "{}({})", name, e)
            }
            Expr::Call2(func, l, r) => {
                let name = match func {
                    Func2::Min => "min",
                    Func2::Max => "max",
                };
                write!(f, "{}({}, {})", name, l, r)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err_here(&self) -> ParseError {
        match self.src.get(self.pos) {
            None => ParseError { pos: self.pos, kind: ParseErrorKind::UnexpectedEnd },
            Some(&c) if is_token_start(c) => {
                ParseError { pos: self.pos, kind: ParseErrorKind::UnexpectedToken }
            }
            Some(_) => {
                let ch = core::str::from_utf8(&self.src[self.pos..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or('\u{FFFD}');
                ParseError { pos: self.pos, kind: ParseErrorKind::UnexpectedChar(ch) }
            }
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here())
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let e = self.unary()?;
            return Ok(Expr::Neg(Box::new(e)));
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.err_here()),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err_here()),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = core::str::from_utf8(&s[start..i]).map_err(|_| ParseError {
            pos: start,
            kind: ParseErrorKind::BadNumber,
        })?;
        let v: f64 = text
            .parse()
            .map_err(|_| ParseError { pos: start, kind: ParseErrorKind::BadNumber })?;
        if !v.is_finite() {
            return Err(ParseError { pos: start, kind: ParseErrorKind::BadNumber });
        }
        self.pos = i;
        Ok(Expr::Num(v))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_alphanumeric() || s[i] == b'_') {
            i += 1;
        }
        let name = core::str::from_utf8(&s[start..i]).unwrap_or("");
        self.pos = i;
        let unknown = ParseError { pos: start, kind: ParseErrorKind::UnknownIdent };

        if name == "pi" {
            return Ok(Expr::Num(core::f64::consts::PI));
        }
        if let Some(var) = parse_var(name) {
            return var.map(Expr::Var).ok_or(unknown);
        }
        let f1 = match name {
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "exp" => Some(Func1::Exp),
            "sqrt" => Some(Func1::Sqrt),
            "abs" => Some(Func1::Abs),
            _ => None,
        };
        let f2 = match name {
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if f1.is_none() && f2.is_none() {
            return Err(unknown);
        }
        self.expect(b'(')?;
        let first = self.expr()?;
        if let Some(f) = f1 {
            if self.peek() == Some(b',') {
                return Err(ParseError { pos: self.pos, kind: ParseErrorKind::Arity(1) });
            }
            self.expect(b')')?;
            return Ok(Expr::Call1(f, Box::new(first)));
        }
        if self.peek() != Some(b',') {
            return Err(ParseError { pos: self.pos, kind: ParseErrorKind::Arity(2) });
        }
        self.pos += 1;
        let second = self.expr()?;
        self.expect(b')')?;
        Ok(Expr::Call2(f2.unwrap(), Box::new(first), Box::new(second)))
    }
}

fn is_token_start(c: u8) -> bool {
    c.is_ascii_alphanumeric() || b"+-*/(),.".contains(&c)
}

/// `Some(Some(var))` for a valid variable name, `Some(None)` for something that
/// looks like a variable but has a bad index (`x0`), `None` otherwise.
fn parse_var(name: &str) -> Option<Option<Var>> {
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let idx: usize = match digits.parse() {
        Ok(v) => v,
        Err(_) => return Some(None),
    };
    if idx == 0 {
        return Some(None);
    }
    match head {
        "x" => Some(Some(Var::State(idx - 1))),
        "a" => Some(Some(Var::Action(idx - 1))),
        _ => None,
    }
}
