//! Input-output ODE models `x' = f(x, u, p)`, `y = h(x, u, p)`, `x(t0) = f0(p)`.

mod builtin;
mod document;
pub mod expr;

pub use builtin::{builtin, builtin_names, riot_closed_form, BUILTIN_NAMES};
pub use document::{DimsDoc, InputDoc, ModelDocument};
pub use expr::Expr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ld::{LdFunction, LdScalar, DEFAULT_ZERO_TOL};
use expr::{eval, Env, Scalar};

/// `c + B sin(w t)` for one input channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl InputSignal {
    pub fn constant(c: f64) -> Self {
        InputSignal {
            offset: c,
            amplitude: 0.0,
            frequency: 0.0,
        }
    }

    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        InputSignal {
            offset: 0.0,
            amplitude,
            frequency,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.frequency * t).sin()
    }
}

/// Which right-hand-side map to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    F,
    H,
    F0,
}

impl Which {
    fn label(self) -> &'static str {
        match self {
            Which::F => "f",
            Which::H => "h",
            Which::F0 => "f0",
        }
    }
}

/// Unvalidated model description; [`ModelSpec::new`] checks it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef {
    pub name: String,
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub n_y: usize,
    pub f: Vec<Expr>,
    pub h: Vec<Expr>,
    pub f0: Vec<Expr>,
    pub inputs: Vec<InputSignal>,
    pub theta_star: Vec<f64>,
    pub t0: f64,
    pub tf: f64,
    /// Preferred sampling times, if the model carries its own.
    pub sample_times: Option<Vec<f64>>,
}

/// A validated model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    def: ModelDef,
    zero_tol: f64,
}

impl ModelSpec {
    pub fn new(def: ModelDef) -> Result<Self> {
        validate(&def)?;
        Ok(ModelSpec {
            def,
            zero_tol: DEFAULT_ZERO_TOL,
        })
    }

    /// Same model with a different reference parameter vector.
    pub fn with_theta_star(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.def.n_p || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "reference parameters must be {} finite values",
                self.def.n_p
            )));
        }
        let mut out = self.clone();
        out.def.theta_star = theta.to_vec();
        Ok(out)
    }

    /// Same model with a different branch dead-zone.
    pub fn with_zero_tol(&self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) || !tol.is_finite() {
            return Err(Error::invalid(format!("zero tolerance must be >= 0, got {tol}")));
        }
        let mut out = self.clone();
        out.zero_tol = tol;
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }
    pub fn n_x(&self) -> usize {
        self.def.n_x
    }
    pub fn n_u(&self) -> usize {
        self.def.n_u
    }
    pub fn n_p(&self) -> usize {
        self.def.n_p
    }
    pub fn n_y(&self) -> usize {
        self.def.n_y
    }
    pub fn theta_star(&self) -> &[f64] {
        &self.def.theta_star
    }
    pub fn t0(&self) -> f64 {
        self.def.t0
    }
    pub fn tf(&self) -> f64 {
        self.def.tf
    }
    pub fn inputs(&self) -> &[InputSignal] {
        &self.def.inputs
    }
    pub fn sample_times(&self) -> Option<&[f64]> {
        self.def.sample_times.as_deref()
    }
    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }
    pub fn def(&self) -> &ModelDef {
        &self.def
    }

    pub fn exprs(&self, which: Which) -> &[Expr] {
        match which {
            Which::F => &self.def.f,
            Which::H => &self.def.h,
            Which::F0 => &self.def.f0,
        }
    }

    /// Observability analysis treats the initial state as the parameters,
    /// which needs `n_p = n_x` and `f0(p) = p`.
    pub fn supports_observability(&self) -> bool {
        self.def.n_p == self.def.n_x && self.def.f0.iter().enumerate().all(|(i, e)| *e == Expr::Param(i))
    }

    pub fn input_values(&self, t: f64) -> Vec<f64> {
        self.def.inputs.iter().map(|s| s.at(t)).collect()
    }

    fn check_dims(&self, which: Which, nx: usize, nu: usize, np: usize) -> Result<()> {
        let d = &self.def;
        let x_ok = which == Which::F0 || nx == d.n_x;
        let u_ok = which == Which::F0 || nu == d.n_u;
        if !x_ok || !u_ok || np != d.n_p {
            return Err(Error::invalid(format!(
                "{} expects x[{}], u[{}], p[{}]; got x[{nx}], u[{nu}], p[{np}]",
                which.label(),
                d.n_x,
                d.n_u,
                d.n_p
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_generic<V: Scalar>(
        &self,
        which: Which,
        x: &[V],
        u: &[V],
        theta: &[V],
        t: f64,
        width: usize,
        mut trace: Option<&mut Vec<i8>>,
    ) -> Result<Vec<V>> {
        self.check_dims(which, x.len(), u.len(), theta.len())?;
        let env = Env {
            x,
            u,
            p: theta,
            t,
            width,
            tol: self.zero_tol,
        };
        self.exprs(which)
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let root = format!("{}[{i}]", which.label());
                eval(e, &env, &root, trace.as_deref_mut())
            })
            .collect()
    }

    /// Componentwise real evaluation. `x` and `u` are ignored for `f0`.
    pub fn eval_real(&self, which: Which, x: &[f64], u: &[f64], theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.eval_generic(which, x, u, theta, t, 0, None)
    }

    /// Evaluation in LD arithmetic. All arguments must share one direction count.
    pub fn eval_ld(
        &self,
        which: Which,
        x: &[LdScalar],
        u: &[LdScalar],
        theta: &[LdScalar],
        t: f64,
    ) -> Result<Vec<LdScalar>> {
        let width = shared_width(&[x, u, theta])?;
        self.eval_generic(which, x, u, theta, t, width, None)
    }

    /// Like [`ModelSpec::eval_ld`], also returning the sequence of branch decisions.
    pub fn eval_ld_traced(
        &self,
        which: Which,
        x: &[LdScalar],
        u: &[LdScalar],
        theta: &[LdScalar],
        t: f64,
    ) -> Result<(Vec<LdScalar>, Vec<i8>)> {
        let width = shared_width(&[x, u, theta])?;
        let mut trace = Vec::new();
        let out = self.eval_generic(which, x, u, theta, t, width, Some(&mut trace))?;
        Ok((out, trace))
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument::from_spec(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(src: &str) -> Result<Self> {
        parse_model(src)
    }
}

fn shared_width(groups: &[&[LdScalar]]) -> Result<usize> {
    let mut width = None;
    for s in groups.iter().flat_map(|g| g.iter()) {
        match width {
            None => width = Some(s.width()),
            Some(w) if w != s.width() => {
                return Err(Error::invalid(format!(
                    "LD arguments have different direction counts ({w} vs {})",
                    s.width()
                )))
            }
            _ => {}
        }
    }
    width.ok_or_else(|| Error::invalid("LD evaluation needs at least one seeded argument"))
}

/// Parses and validates a model document (JSON).
pub fn parse_model(document: &str) -> Result<ModelSpec> {
    let doc: ModelDocument = serde_json::from_str(document)?;
    doc.into_spec()
}

fn validate(d: &ModelDef) -> Result<()> {
    if d.n_x == 0 {
        return Err(Error::model("dims.n_x", "n_x must be >= 1"));
    }
    if d.n_y == 0 {
        return Err(Error::model("dims.n_y", "n_y must be >= 1"));
    }
    if d.n_p == 0 {
        return Err(Error::model("dims.n_p", "n_p must be >= 1"));
    }
    let lens = [
        ("f", d.f.len(), d.n_x),
        ("h", d.h.len(), d.n_y),
        ("f0", d.f0.len(), d.n_x),
        ("inputs", d.inputs.len(), d.n_u),
        ("theta_star", d.theta_star.len(), d.n_p),
    ];
    for (key, got, want) in lens {
        if got != want {
            return Err(Error::model(key, format!("expected {want} entries, got {got}")));
        }
    }
    if !d.t0.is_finite() || !d.tf.is_finite() || d.tf <= d.t0 {
        return Err(Error::model(
            "tf",
            format!("need finite t0 < tf, got [{}, {}]", d.t0, d.tf),
        ));
    }
    if let Some(i) = d.theta_star.iter().position(|v| !v.is_finite()) {
        return Err(Error::model(format!("theta_star[{i}]"), "non-finite value"));
    }
    for (i, s) in d.inputs.iter().enumerate() {
        if ![s.offset, s.amplitude, s.frequency].iter().all(|v| v.is_finite()) {
            return Err(Error::model(format!("inputs[{i}]"), "non-finite coefficient"));
        }
    }
    if let Some(ts) = &d.sample_times {
        if ts.is_empty() {
            return Err(Error::model("sample_times", "empty list"));
        }
        if ts.iter().any(|&t| !t.is_finite() || t < d.t0 || t > d.tf) || ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::model(
                "sample_times",
                "times must be strictly increasing and within [t0, tf]",
            ));
        }
    }
    for (key, exprs, allow_state) in [("f", &d.f, true), ("h", &d.h, true), ("f0", &d.f0, false)] {
        for (i, e) in exprs.iter().enumerate() {
            check_expr(e, &format!("{key}[{i}]"), d, allow_state)?;
        }
    }
    Ok(())
}

fn check_expr(e: &Expr, root: &str, d: &ModelDef, allow_state: bool) -> Result<()> {
    let mut problem = None;
    e.walk(&mut vec![root.to_string()], &mut |node, path| {
        if problem.is_some() {
            return;
        }
        let msg = match node {
            Expr::State(i) if !allow_state => Some(format!("f0 may not reference state x{i}")),
            Expr::Input(j) if !allow_state => Some(format!("f0 may not reference input u{j}")),
            Expr::Time if !allow_state => Some("f0 may not reference time".to_string()),
            Expr::State(i) if *i >= d.n_x => Some(format!("state index x{i} >= n_x = {}", d.n_x)),
            Expr::Input(j) if *j >= d.n_u => Some(format!("input index u{j} >= n_u = {}", d.n_u)),
            Expr::Param(l) if *l >= d.n_p => Some(format!("param index p{l} >= n_p = {}", d.n_p)),
            _ => None,
        };
        if let Some(msg) = msg {
            let mut full = path.to_vec();
            full.push(node.op_name().to_string());
            problem = Some(Error::model(full.join(" > "), msg));
        }
    });
    problem.map_or(Ok(()), Err)
}

/// A list of expressions over `x0..x{n-1}` viewed as a function `R^n -> R^m`.
#[derive(Debug, Clone)]
pub struct ExprFunction {
    exprs: Vec<Expr>,
    n: usize,
    tol: f64,
}

impl ExprFunction {
    /// Only state atoms are allowed; `n` must cover every referenced index.
    pub fn new(exprs: Vec<Expr>, n: usize) -> Result<Self> {
        if exprs.is_empty() || n == 0 {
            return Err(Error::invalid("need at least one expression and one input"));
        }
        for (i, e) in exprs.iter().enumerate() {
            let mut problem = None;
            e.walk(&mut Vec::new(), &mut |node, _| match node {
                Expr::State(k) if *k >= n => {
                    problem = Some(format!("x{k} is out of range for dimension {n}"))
                }
                Expr::Input(_) | Expr::Param(_) | Expr::Time => {
                    problem = Some(format!("`{node}` is not allowed; use x<i> atoms only"))
                }
                _ => {}
            });
            if let Some(msg) = problem {
                return Err(Error::model(format!("expr[{i}]"), msg));
            }
        }
        Ok(ExprFunction {
            exprs,
            n,
            tol: DEFAULT_ZERO_TOL,
        })
    }

    pub fn parse(src: &[&str], n: usize) -> Result<Self> {
        let exprs = src.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        ExprFunction::new(exprs, n)
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn with_zero_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) || !tol.is_finite() {
            return Err(Error::invalid(format!("zero tolerance must be >= 0, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    fn run<V: Scalar>(&self, x: &[V], width: usize) -> Result<Vec<V>> {
        if x.len() != self.n {
            return Err(Error::invalid(format!(
                "expected {} inputs, got {}",
                self.n,
                x.len()
            )));
        }
        let env = Env {
            x,
            u: &[],
            p: &[],
            t: 0.0,
            width,
            tol: self.tol,
        };
        self.exprs
            .iter()
            .enumerate()
            .map(|(i, e)| eval(e, &env, &format!("expr[{i}]"), None))
            .collect()
    }
}

impl LdFunction for ExprFunction {
    fn input_dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, 0)
    }

    fn eval_ld(&self, x: &[LdScalar]) -> Result<Vec<LdScalar>> {
        let width = shared_width(&[x])?;
        self.run(x, width)
    }
}
