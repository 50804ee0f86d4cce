//! Fixed-step RK4 integration of a model jointly with its nonsmooth forward
//! sensitivity system.
//!
//! The sensitivity right-hand side is `f` evaluated in LD arithmetic: the state
//! block is seeded with the current sensitivity matrix `X`, inputs carry zero
//! rows, and parameters carry `[d I]` (identifiability) or zero rows
//! (observability, where `X(t0) = [d I]` instead). The same stepper advances
//! `x` and `X`, so the state part is bit-identical to a plain reference run.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ld::{lshift, LdScalar};
use crate::model::{ModelSpec, Which};

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Identifiability,
    Observability,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Identifiability => "identifiability",
            Mode::Observability => "observability",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identifiability" => Ok(Mode::Identifiability),
            "observability" => Ok(Mode::Observability),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected identifiability or observability)"
            ))),
        }
    }
}

/// Uniform time grid `t0, t0 + h, ..., tf`. A zero-length span has no nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t0: f64,
    tf: f64,
    step: f64,
    steps: usize,
}

impl Grid {
    pub fn new(t0: f64, tf: f64, step: f64) -> Result<Self> {
        if !t0.is_finite() || !tf.is_finite() || tf < t0 {
            return Err(Error::invalid(format!("need finite t0 <= tf, got [{t0}, {tf}]")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("step must be positive, got {step}")));
        }
        let span = tf - t0;
        let steps = (span / step).round();
        if (steps * step - span).abs() > 1e-12 * span.max(1.0) {
            return Err(Error::invalid(format!(
                "step {step} does not divide the span {span}"
            )));
        }
        Ok(Grid {
            t0,
            tf,
            step,
            steps: steps as usize,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn tf(&self) -> f64 {
        self.tf
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node_count(&self) -> usize {
        if self.steps == 0 {
            0
        } else {
            self.steps + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.tf
        } else {
            self.t0 + i as f64 * self.step
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.node(i)).collect()
    }

    /// Index of the grid node nearest to `t`, if it lies within half a step.
    pub fn snap(&self, t: f64) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::Precondition(format!(
                "cannot sample t = {t} on an empty grid"
            )));
        }
        let pos = ((t - self.t0) / self.step).round();
        if !(pos >= 0.0) || pos > self.steps as f64 {
            return Err(Error::Precondition(format!(
                "sample time {t} lies outside [{}, {}]",
                self.t0, self.tf
            )));
        }
        let i = pos as usize;
        if (self.node(i) - t).abs() > 0.5 * self.step * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "sample time {t} is not near a grid node"
            )));
        }
        Ok(i)
    }
}

/// Right-hand side of a flat system, `(t, y) -> y'`.
type Rhs<'a> = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// Classical RK4 step on a flat state vector.
fn rk4_step(y: &[f64], t: f64, h: f64, rhs: &Rhs) -> Result<Vec<f64>> {
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    let k1 = rhs(t, y)?;
    let k2 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = rhs(t + h, &axpy(h, &k3))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, y)| y + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn integrate_flat(grid: &Grid, y0: Vec<f64>, rhs: &Rhs) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(grid.node_count());
    if grid.is_empty() {
        return Ok(out);
    }
    out.push(y0);
    for i in 0..grid.steps {
        let t = grid.node(i);
        let h = grid.node(i + 1) - t;
        let next = rk4_step(&out[i], t, h, rhs).map_err(|e| match e {
            e @ Error::Integration { .. } => e,
            other => Error::Integration {
                t,
                source: Box::new(other),
            },
        })?;
        if let Some(j) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                t: grid.node(i + 1),
                message: format!("component {j} became {}", next[j]),
            });
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Solves the model at its reference parameters.
pub fn integrate_reference(spec: &ModelSpec, grid: &Grid) -> Result<ReferenceTrajectory> {
    let theta = spec.theta_star().to_vec();
    let x0 = spec
        .eval_real(Which::F0, &[], &[], &theta, grid.t0())
        .map_err(|e| Error::Integration {
            t: grid.t0(),
            source: Box::new(e),
        })?;
    let rhs = |t: f64, x: &[f64]| spec.eval_real(Which::F, x, &spec.input_values(t), &theta, t);
    let states = integrate_flat(grid, x0, &rhs)?;
    Ok(ReferenceTrajectory {
        times: grid.times(),
        states,
    })
}

/// Sampled solution of the joint reference and sensitivity system.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    pub grid: Grid,
    pub mode: Mode,
    pub d: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub times: Vec<f64>,
    pub x_star: Vec<Vec<f64>>,
    /// `n_x x (1 + n_p)` per node.
    pub x_sens: Vec<DMatrix<f64>>,
    pub y_star: Vec<Vec<f64>>,
    /// `n_y x (1 + n_p)` per node.
    pub y_sens: Vec<DMatrix<f64>>,
    /// Nodes where some abs/max branch decision differs from the previous node.
    pub kink_nodes: Vec<usize>,
}

impl SensitivityTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Directions count `k = 1 + n_p`.
    pub fn width(&self) -> usize {
        self.d.len() + 1
    }

    pub fn kink_times(&self) -> Vec<f64> {
        self.kink_nodes.iter().map(|&i| self.times[i]).collect()
    }
}

/// Parameter seeds: value `theta`, rows of `[d I]` or zero rows.
pub fn parameter_seeds(theta: &[f64], d: &[f64], mode: Mode) -> Vec<LdScalar> {
    let k = 1 + d.len();
    theta
        .iter()
        .enumerate()
        .map(|(i, &v)| match mode {
            Mode::Identifiability => {
                let mut row = vec![0.0; k];
                row[0] = d[i];
                row[i + 1] = 1.0;
                LdScalar::new(v, row)
            }
            Mode::Observability => LdScalar::constant(v, k),
        })
        .collect()
}

fn state_seeds(x: &[f64], xs: &[f64], k: usize) -> Vec<LdScalar> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| LdScalar::new(v, xs[i * k..(i + 1) * k].to_vec()))
        .collect()
}

fn constants(v: &[f64], k: usize) -> Vec<LdScalar> {
    v.iter().map(|&c| LdScalar::constant(c, k)).collect()
}

/// Initial state and sensitivity matrix, per mode.
pub fn initial_sensitivity(spec: &ModelSpec, d: &[f64], mode: Mode) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let theta = spec.theta_star();
    let k = 1 + d.len();
    match mode {
        Mode::Identifiability => {
            let seeds = parameter_seeds(theta, d, mode);
            let out = spec.eval_ld(Which::F0, &[], &[], &seeds, spec.t0())?;
            let x0 = out.iter().map(LdScalar::value).collect();
            let x_sens = DMatrix::from_fn(out.len(), k, |i, j| out[i].deriv()[j]);
            Ok((x0, x_sens))
        }
        Mode::Observability => {
            let x0 = theta.to_vec();
            let n = x0.len();
            let x_sens = DMatrix::from_fn(n, k, |i, j| {
                if j == 0 {
                    d[i]
                } else if j == i + 1 {
                    1.0
                } else {
                    0.0
                }
            });
            Ok((x0, x_sens))
        }
    }
}

/// Integrates `x` and `X` together and records `Y` at every node.
pub fn integrate_sensitivity(
    spec: &ModelSpec,
    grid: &Grid,
    d: &[f64],
    mode: Mode,
) -> Result<SensitivityTrajectory> {
    if d.len() != spec.n_p() {
        return Err(Error::invalid(format!(
            "direction has {} entries, model has {} parameters",
            d.len(),
            spec.n_p()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("direction has non-finite entries"));
    }
    if mode == Mode::Observability && !spec.supports_observability() {
        return Err(Error::Precondition(format!(
            "model `{}` is not in observability form (needs n_p = n_x and f0(p) = p)",
            spec.name()
        )));
    }
    if (grid.t0() - spec.t0()).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "grid starts at {} but the model starts at {}",
            grid.t0(),
            spec.t0()
        )));
    }

    let n_x = spec.n_x();
    let k = 1 + d.len();
    let theta = spec.theta_star().to_vec();
    let p_seeds = parameter_seeds(&theta, d, mode);

    let (x0, x_sens0) = initial_sensitivity(spec, d, mode).map_err(|e| Error::Integration {
        t: grid.t0(),
        source: Box::new(e),
    })?;
    let mut y0 = x0;
    for i in 0..n_x {
        y0.extend(x_sens0.row(i).iter());
    }

    let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let xs = state_seeds(&y[..n_x], &y[n_x..], k);
        let us = constants(&spec.input_values(t), k);
        let out = spec.eval_ld(Which::F, &xs, &us, &p_seeds, t)?;
        let mut flat = Vec::with_capacity(y.len());
        flat.extend(out.iter().map(LdScalar::value));
        for s in &out {
            flat.extend_from_slice(s.deriv());
        }
        Ok(flat)
    };
    let states = integrate_flat(grid, y0, &rhs)?;

    let times = grid.times();
    let mut x_star = Vec::with_capacity(states.len());
    let mut x_sens = Vec::with_capacity(states.len());
    let mut y_star = Vec::with_capacity(states.len());
    let mut y_sens = Vec::with_capacity(states.len());
    let mut kink_nodes = Vec::new();
    let mut prev_trace: Option<Vec<i8>> = None;
    for (node, y) in states.iter().enumerate() {
        let t = times[node];
        let xs = state_seeds(&y[..n_x], &y[n_x..], k);
        let us = constants(&spec.input_values(t), k);
        let wrap = |e: Error| Error::Integration {
            t,
            source: Box::new(e),
        };
        let (out, mut trace) = spec
            .eval_ld_traced(Which::H, &xs, &us, &p_seeds, t)
            .map_err(wrap)?;
        let (_, f_trace) = spec
            .eval_ld_traced(Which::F, &xs, &us, &p_seeds, t)
            .map_err(wrap)?;
        trace.extend(f_trace);
        if prev_trace.as_ref().is_some_and(|p| *p != trace) {
            kink_nodes.push(node);
        }
        prev_trace = Some(trace);

        x_star.push(y[..n_x].to_vec());
        x_sens.push(DMatrix::from_row_slice(n_x, k, &y[n_x..]));
        y_star.push(out.iter().map(LdScalar::value).collect());
        y_sens.push(DMatrix::from_fn(out.len(), k, |i, j| out[i].deriv()[j]));
    }

    Ok(SensitivityTrajectory {
        grid: *grid,
        mode,
        d: d.to_vec(),
        theta_star: theta,
        times,
        x_star,
        x_sens,
        y_star,
        y_sens,
        kink_nodes,
    })
}

/// `Y*` at the requested times, which must snap onto grid nodes.
pub fn sample(traj: &SensitivityTrajectory, sample_times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    sample_times
        .iter()
        .map(|&t| {
            let i = traj.grid.snap(t)?;
            traj.y_sens
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Precondition(format!("trajectory has no node for t = {t}")))
        })
        .collect()
}

/// CSV with header `t, x0.., y0.., Y{row}_{col}.., S{row}_{col}.., kink`.
///
/// `Y` is the full LD-derivative of the output along `[d I]`; `S = lshift(Y)`
/// is the output L-sensitivity. `kink` is 1 at nodes where a branch flipped.
pub fn write_csv<W: Write>(traj: &SensitivityTrajectory, n_x: usize, n_y: usize, out: W) -> Result<()> {
    let k = traj.width();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..n_x).map(|i| format!("x{i}")));
    header.extend((0..n_y).map(|i| format!("y{i}")));
    for r in 0..n_y {
        header.extend((0..k).map(|c| format!("Y{r}_{c}")));
    }
    for r in 0..n_y {
        header.extend((0..k - 1).map(|c| format!("S{r}_{c}")));
    }
    header.push("kink".into());
    w.write_record(&header)?;
    for (node, &t) in traj.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(traj.x_star[node].iter().map(f64::to_string));
        rec.extend(traj.y_star[node].iter().map(f64::to_string));
        let y = &traj.y_sens[node];
        for r in 0..n_y {
            rec.extend(y.row(r).iter().map(f64::to_string));
        }
        let s = lshift(y)?;
        for r in 0..n_y {
            rec.extend(s.row(r).iter().map(f64::to_string));
        }
        rec.push(
            if traj.kink_nodes.binary_search(&node).is_ok() {
                "1"
            } else {
                "0"
            }
            .into(),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
