//! Expression trees over the elemental vocabulary and their s-expression form.
//!
//! Grammar (whitespace separates tokens, `;` starts a comment to end of line):
//!
//! ```text
//! expr   := atom | "(" op expr+ ")"
//! atom   := number | "x" index | "u" index | "p" index | "t"
//! index  := [0-9]+
//! number := optional sign, digits with optional fraction and exponent (finite only)
//! op     := "+" | "-" | "*" | "/"            binary
//!         | "neg" | "abs"                    unary
//!         | "exp" | "log" | "sin" | "cos" | "sqrt"
//!         | "max" | "min"                    binary
//!         | "mid"                            ternary
//!         | "pow"                            (pow expr number)
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::ld::{LdScalar, SmoothFn};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    State(usize),
    Input(usize),
    Param(usize),
    Time,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Smooth(SmoothFn, Box<Expr>),
    Abs(Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Mid(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn op_name(&self) -> &'static str {
        match self {
            Expr::Const(_) => "const",
            Expr::State(_) => "x",
            Expr::Input(_) => "u",
            Expr::Param(_) => "p",
            Expr::Time => "t",
            Expr::Add(..) => "+",
            Expr::Sub(..) => "-",
            Expr::Mul(..) => "*",
            Expr::Div(..) => "/",
            Expr::Neg(_) => "neg",
            Expr::Smooth(f, _) => f.name(),
            Expr::Abs(_) => "abs",
            Expr::Max(..) => "max",
            Expr::Min(..) => "min",
            Expr::Mid(..) => "mid",
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::State(_) | Expr::Input(_) | Expr::Param(_) | Expr::Time => {
                vec![]
            }
            Expr::Neg(a) | Expr::Smooth(_, a) | Expr::Abs(a) => vec![a],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => vec![a, b],
            Expr::Mid(a, b, c) => vec![a, b, c],
        }
    }

    /// Visits every node with its path, root first.
    pub fn walk<'a>(&'a self, path: &mut Vec<String>, visit: &mut dyn FnMut(&'a Expr, &[String])) {
        visit(self, path);
        for (i, c) in self.children().into_iter().enumerate() {
            path.push(format!("{}#{i}", self.op_name()));
            c.walk(path, visit);
            path.pop();
        }
    }

    /// True when every node is smooth (no abs/max/min/mid).
    pub fn is_smooth(&self) -> bool {
        let mut smooth = true;
        self.walk(&mut Vec::new(), &mut |e, _| {
            if matches!(e, Expr::Abs(_) | Expr::Max(..) | Expr::Min(..) | Expr::Mid(..)) {
                smooth = false;
            }
        });
        smooth
    }

    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut pos = 0;
        let e = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::model(
                format!("token {pos}"),
                format!("unexpected trailing input `{}`", tokens[pos]),
            ));
        }
        Ok(e)
    }
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::State(i) => write!(f, "x{i}"),
            Expr::Input(j) => write!(f, "u{j}"),
            Expr::Param(l) => write!(f, "p{l}"),
            Expr::Time => write!(f, "t"),
            Expr::Smooth(SmoothFn::Pow(a), x) => write!(f, "(pow {x} {a:?})"),
            other => {
                write!(f, "({}", other.op_name())?;
                for c in other.children() {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ';' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
                flush(&mut cur, &mut out);
            }
            '(' | ')' => {
                flush(&mut cur, &mut out);
                out.push(c.to_string());
            }
            c if c.is_whitespace() => flush(&mut cur, &mut out),
            c => cur.push(c),
        }
    }
    flush(&mut cur, &mut out);
    if out.is_empty() {
        return Err(Error::model("", "empty expression"));
    }
    Ok(out)
}

fn flush(cur: &mut String, out: &mut Vec<String>) {
    if !cur.is_empty() {
        out.push(std::mem::take(cur));
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    let first = tok.chars().next()?;
    let numeric_start = first.is_ascii_digit()
        || first == '.'
        || ((first == '-' || first == '+')
            && tok[1..]
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_digit() || c == '.'));
    if !numeric_start {
        return None;
    }
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_index(rest: &str) -> Option<usize> {
    if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn parse_atom(tok: &str, pos: usize) -> Result<Expr> {
    if let Some(v) = parse_number(tok) {
        return Ok(Expr::Const(v));
    }
    if tok == "t" {
        return Ok(Expr::Time);
    }
    let (head, rest) = tok.split_at(1);
    let idx = parse_index(rest);
    match (head, idx) {
        ("x", Some(i)) => Ok(Expr::State(i)),
        ("u", Some(i)) => Ok(Expr::Input(i)),
        ("p", Some(i)) => Ok(Expr::Param(i)),
        _ => Err(Error::model(
            format!("token {pos}"),
            format!("unknown atom `{tok}`"),
        )),
    }
}

fn parse_expr(tokens: &[String], pos: &mut usize) -> Result<Expr> {
    let start = *pos;
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::model(format!("token {start}"), "unexpected end of input"))?;
    *pos += 1;
    if tok == ")" {
        return Err(Error::model(format!("token {start}"), "unexpected `)`"));
    }
    if tok != "(" {
        return parse_atom(tok, start);
    }
    let op = tokens
        .get(*pos)
        .ok_or_else(|| Error::model(format!("token {}", *pos), "missing operator"))?
        .clone();
    *pos += 1;
    let mut args = Vec::new();
    let mut pow_exponent = None;
    loop {
        match tokens.get(*pos).map(String::as_str) {
            None => {
                return Err(Error::model(
                    format!("token {start}"),
                    format!("unclosed `({op}`"),
                ))
            }
            Some(")") => {
                *pos += 1;
                break;
            }
            Some(tok) if op == "pow" && args.len() == 1 => {
                let a = parse_number(tok).ok_or_else(|| {
                    Error::model(
                        format!("token {}", *pos),
                        format!("pow exponent must be a numeral, got `{tok}`"),
                    )
                })?;
                *pos += 1;
                pow_exponent = Some(a);
                args.push(Expr::Const(a));
            }
            Some(_) => args.push(parse_expr(tokens, pos)?),
        }
    }
    let path = format!("token {start} ({op})");
    let arity = |n: usize| -> Result<()> {
        if args.len() != n {
            Err(Error::model(
                path.clone(),
                format!("`{op}` takes {n} argument(s), got {}", args.len()),
            ))
        } else {
            Ok(())
        }
    };
    let unary_smooth = |f: SmoothFn, mut args: Vec<Expr>| Expr::Smooth(f, b(args.remove(0)));
    let e = match op.as_str() {
        "+" | "-" | "*" | "/" | "max" | "min" => {
            arity(2)?;
            let mut it = args.into_iter();
            let (x, y) = (b(it.next().unwrap()), b(it.next().unwrap()));
            match op.as_str() {
                "+" => Expr::Add(x, y),
                "-" => Expr::Sub(x, y),
                "*" => Expr::Mul(x, y),
                "/" => Expr::Div(x, y),
                "max" => Expr::Max(x, y),
                _ => Expr::Min(x, y),
            }
        }
        "neg" => {
            arity(1)?;
            Expr::Neg(b(args.remove(0)))
        }
        "abs" => {
            arity(1)?;
            Expr::Abs(b(args.remove(0)))
        }
        "exp" => {
            arity(1)?;
            unary_smooth(SmoothFn::Exp, args)
        }
        "log" => {
            arity(1)?;
            unary_smooth(SmoothFn::Log, args)
        }
        "sin" => {
            arity(1)?;
            unary_smooth(SmoothFn::Sin, args)
        }
        "cos" => {
            arity(1)?;
            unary_smooth(SmoothFn::Cos, args)
        }
        "sqrt" => {
            arity(1)?;
            unary_smooth(SmoothFn::Sqrt, args)
        }
        "pow" => {
            arity(2)?;
            let a = pow_exponent.expect("second pow argument is parsed as numeral");
            Expr::Smooth(SmoothFn::Pow(a), b(args.remove(0)))
        }
        "mid" => {
            arity(3)?;
            let mut it = args.into_iter();
            Expr::Mid(
                b(it.next().unwrap()),
                b(it.next().unwrap()),
                b(it.next().unwrap()),
            )
        }
        _ => return Err(Error::model(path, format!("unknown elemental `{op}`"))),
    };
    Ok(e)
}

/// Values the evaluator can run on: plain reals and LD scalars.
///
/// Value computations are identical across implementations so that the value
/// field of an LD evaluation reproduces the real evaluation bit for bit.
pub trait Scalar: Clone {
    fn lift(c: f64, width: usize) -> Self;
    fn add(&self, o: &Self) -> Result<Self>;
    fn sub(&self, o: &Self) -> Result<Self>;
    fn mul(&self, o: &Self) -> Result<Self>;
    fn div(&self, o: &Self, tol: f64) -> Result<Self>;
    fn neg(&self) -> Self;
    fn smooth(&self, f: SmoothFn, tol: f64) -> Result<Self>;
    fn abs_branch(&self, tol: f64) -> Result<(Self, i8)>;
    fn max_branch(&self, o: &Self, tol: f64) -> Result<(Self, i8)>;
}

impl Scalar for f64 {
    fn lift(c: f64, _: usize) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Result<Self> {
        Ok(self + o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        Ok(self - o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        Ok(self * o)
    }
    fn div(&self, o: &Self, tol: f64) -> Result<Self> {
        if o.abs() <= tol {
            return Err(Error::domain("", format!("division by (near-)zero value {o}")));
        }
        Ok(self / o)
    }
    fn neg(&self) -> Self {
        -self
    }
    fn smooth(&self, f: SmoothFn, tol: f64) -> Result<Self> {
        f.value_and_slope(*self, tol).map(|(v, _)| v)
    }
    fn abs_branch(&self, tol: f64) -> Result<(Self, i8)> {
        let s = crate::ld::fsign(&[*self], tol)?;
        Ok((self.abs(), s))
    }
    fn max_branch(&self, o: &Self, tol: f64) -> Result<(Self, i8)> {
        if !self.is_finite() || !o.is_finite() {
            return Err(Error::invalid(format!("max of non-finite values {self}, {o}")));
        }
        let pick = if self - o >= -tol { 0 } else { 1 };
        Ok((self.max(*o), pick))
    }
}

impl Scalar for LdScalar {
    fn lift(c: f64, width: usize) -> Self {
        LdScalar::constant(c, width)
    }
    fn add(&self, o: &Self) -> Result<Self> {
        LdScalar::add(self, o)
    }
    fn sub(&self, o: &Self) -> Result<Self> {
        LdScalar::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Result<Self> {
        LdScalar::mul(self, o)
    }
    fn div(&self, o: &Self, tol: f64) -> Result<Self> {
        LdScalar::div(self, o, tol)
    }
    fn neg(&self) -> Self {
        LdScalar::neg(self)
    }
    fn smooth(&self, f: SmoothFn, tol: f64) -> Result<Self> {
        LdScalar::smooth(self, f, tol)
    }
    fn abs_branch(&self, tol: f64) -> Result<(Self, i8)> {
        LdScalar::abs_branch(self, tol)
    }
    fn max_branch(&self, o: &Self, tol: f64) -> Result<(Self, i8)> {
        LdScalar::max_branch(self, o, tol)
    }
}

/// Variable bindings for one evaluation.
pub struct Env<'a, V> {
    pub x: &'a [V],
    pub u: &'a [V],
    pub p: &'a [V],
    pub t: f64,
    /// Derivative width used for constants.
    pub width: usize,
    pub tol: f64,
}

struct Fail {
    segments: Vec<String>,
    err: Error,
}

impl Fail {
    fn at(mut self, seg: String) -> Self {
        self.segments.push(seg);
        self
    }
}

/// Evaluates `e`, recording every branch decision (abs sign, max pick) into
/// `trace` when given. Errors carry the node path below `root`.
pub fn eval<V: Scalar>(e: &Expr, env: &Env<'_, V>, root: &str, trace: Option<&mut Vec<i8>>) -> Result<V> {
    let mut trace = trace;
    eval_node(e, env, &mut trace).map_err(|fail| {
        let mut path = vec![root.to_string()];
        path.extend(fail.segments.into_iter().rev());
        let path = path.join(" > ");
        match fail.err {
            Error::Domain { message, .. } => Error::Domain { path, message },
            Error::InvalidInput(message) => Error::InvalidInput(format!("{path}: {message}")),
            other => other,
        }
    })
}

fn eval_node<V: Scalar>(
    e: &Expr,
    env: &Env<'_, V>,
    trace: &mut Option<&mut Vec<i8>>,
) -> std::result::Result<V, Fail> {
    let leaf = |r: Result<V>| {
        r.map_err(|err| Fail {
            segments: vec![e.op_name().to_string()],
            err,
        })
    };
    let lookup = |vals: &[V], i: usize, kind: &str| -> Result<V> {
        vals.get(i)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("{kind}{i} is out of range (have {})", vals.len())))
    };
    let child = |c: &Expr, i: usize, trace: &mut Option<&mut Vec<i8>>| {
        eval_node(c, env, trace).map_err(|f| f.at(format!("{}#{i}", e.op_name())))
    };
    match e {
        Expr::Const(c) => Ok(V::lift(*c, env.width)),
        Expr::State(i) => leaf(lookup(env.x, *i, "x")),
        Expr::Input(j) => leaf(lookup(env.u, *j, "u")),
        Expr::Param(l) => leaf(lookup(env.p, *l, "p")),
        Expr::Time => Ok(V::lift(env.t, env.width)),
        Expr::Add(a, bb) | Expr::Sub(a, bb) | Expr::Mul(a, bb) | Expr::Div(a, bb) => {
            let x = child(a, 0, trace)?;
            let y = child(bb, 1, trace)?;
            leaf(match e {
                Expr::Add(..) => x.add(&y),
                Expr::Sub(..) => x.sub(&y),
                Expr::Mul(..) => x.mul(&y),
                _ => x.div(&y, env.tol),
            })
        }
        Expr::Neg(a) => Ok(child(a, 0, trace)?.neg()),
        Expr::Smooth(f, a) => {
            let x = child(a, 0, trace)?;
            leaf(x.smooth(*f, env.tol))
        }
        Expr::Abs(a) => {
            let x = child(a, 0, trace)?;
            let (r, s) = leaf_pair(e, x.abs_branch(env.tol))?;
            record(trace, s);
            Ok(r)
        }
        Expr::Max(a, bb) => {
            let x = child(a, 0, trace)?;
            let y = child(bb, 1, trace)?;
            let (r, pick) = leaf_pair(e, x.max_branch(&y, env.tol))?;
            record(trace, pick);
            Ok(r)
        }
        Expr::Min(a, bb) => {
            let x = child(a, 0, trace)?;
            let y = child(bb, 1, trace)?;
            Ok(min_of(e, &x, &y, env.tol, trace)?)
        }
        Expr::Mid(a, bb, c) => {
            let x = child(a, 0, trace)?;
            let y = child(bb, 1, trace)?;
            let z = child(c, 2, trace)?;
            let lo = min_of(e, &x, &y, env.tol, trace)?;
            let (hi, pick) = leaf_pair(e, x.max_branch(&y, env.tol))?;
            record(trace, pick);
            let upper = min_of(e, &hi, &z, env.tol, trace)?;
            let (r, pick) = leaf_pair(e, lo.max_branch(&upper, env.tol))?;
            record(trace, pick);
            Ok(r)
        }
    }
}

fn record(trace: &mut Option<&mut Vec<i8>>, b: i8) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(b);
    }
}

fn leaf_pair<V>(e: &Expr, r: Result<(V, i8)>) -> std::result::Result<(V, i8), Fail> {
    r.map_err(|err| Fail {
        segments: vec![e.op_name().to_string()],
        err,
    })
}

/// `min(x, y) = -max(-x, -y)`.
fn min_of<V: Scalar>(
    e: &Expr,
    x: &V,
    y: &V,
    tol: f64,
    trace: &mut Option<&mut Vec<i8>>,
) -> std::result::Result<V, Fail> {
    let (m, pick) = leaf_pair(e, x.neg().max_branch(&y.neg(), tol))?;
    record(trace, pick);
    Ok(m.neg())
}
