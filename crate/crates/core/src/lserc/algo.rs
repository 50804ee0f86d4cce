use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::matrix::{build_lserc, LSercMatrix, RankRule};
use super::report::{
    summarize, AlgoReport, Origin, ProbeFailure, ProbeRecord, ProbeResult, ReportNode, SingularRecord,
    SingularStep, Stage, Summary, NATURAL_CAVEAT,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::par;
use crate::sensint::{integrate_sensitivity, Grid, Mode, DEFAULT_STEP};

/// Two reference points closer than this (max-norm) are treated as the same.
pub const DEDUP_TOL: f64 = 1e-12;

/// How `eps_sing` scales the null-space step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingScale {
    /// `theta* +- eps * dtheta`.
    #[default]
    Absolute,
    /// `theta* +- eps * |theta*| / |dtheta| * dtheta`.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub theta_star: Vec<f64>,
    /// Primary directions, probed in this order.
    pub directions: Vec<Vec<f64>>,
    /// 0 disables the twin stage.
    pub eps_twin: f64,
    /// 0 disables the singularity stage.
    pub eps_sing: f64,
    pub sing_scale: SingScale,
    /// Recursion depth of the singularity stage; 0 disables it.
    pub q: usize,
    pub sample_times: Vec<f64>,
    pub rank: RankRule,
    pub step: f64,
    pub mode: Mode,
    pub zero_tol: f64,
    /// Run independent probes on the thread pool (only with the `parallel` feature).
    pub parallel: bool,
}

/// `+e_1, -e_1, +e_2, -e_2, ...`
pub fn natural_directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            out.push(d);
        }
    }
    out
}

/// `n` evenly spaced times over `[t0, tf]`, endpoints included.
pub fn uniform_times(t0: f64, tf: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![t0],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    tf
                } else {
                    t0 + (tf - t0) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

impl AlgoConfig {
    /// Defaults: the model's reference parameters, the `+-e_i` directions,
    /// the model's own sample times (or 10 uniform points), S2 and S3 off.
    pub fn for_model(spec: &ModelSpec, mode: Mode) -> Self {
        AlgoConfig {
            theta_star: spec.theta_star().to_vec(),
            directions: natural_directions(spec.n_p()),
            eps_twin: 0.0,
            eps_sing: 0.0,
            sing_scale: SingScale::Absolute,
            q: 1,
            sample_times: spec
                .sample_times()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| uniform_times(spec.t0(), spec.tf(), 10)),
            rank: RankRule::default(),
            step: DEFAULT_STEP,
            mode,
            zero_tol: spec.zero_tol(),
            parallel: true,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let n_p = spec.n_p();
        if self.theta_star.len() != n_p || self.theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "reference point must have {n_p} finite entries"
            )));
        }
        if self.directions.is_empty() {
            return Err(Error::invalid("no probing directions"));
        }
        for d in &self.directions {
            if d.len() != n_p {
                return Err(Error::invalid(format!(
                    "direction {d:?} has {} entries, model has {n_p} parameters",
                    d.len()
                )));
            }
            if d.iter().any(|v| !v.is_finite()) || norm(d) == 0.0 {
                return Err(Error::invalid(format!(
                    "direction {d:?} must be finite and nonzero"
                )));
            }
        }
        for (name, v) in [("twin", self.eps_twin), ("singularity", self.eps_sing)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} epsilon must be >= 0, got {v}")));
            }
        }
        if !(self.zero_tol >= 0.0) || !self.zero_tol.is_finite() {
            return Err(Error::invalid(format!(
                "zero tolerance must be >= 0, got {}",
                self.zero_tol
            )));
        }
        self.rank.validate()?;
        let grid = Grid::new(spec.t0(), spec.tf(), self.step)?;
        if self.sample_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("sample times must be strictly increasing"));
        }
        for &t in &self.sample_times {
            grid.snap(t)?;
        }
        if self.sample_times.len() * spec.n_y() < n_p {
            return Err(Error::Precondition(format!(
                "need (N+1)*n_y >= n_p: {} samples x {} outputs < {} parameters",
                self.sample_times.len(),
                spec.n_y(),
                n_p
            )));
        }
        if self.mode == Mode::Observability && !spec.supports_observability() {
            return Err(Error::Precondition(format!(
                "model `{}` is not in observability form (needs n_p = n_x and f0(p) = p)",
                spec.name()
            )));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn probe_at(
    spec: &ModelSpec,
    theta: &[f64],
    d: &[f64],
    stage: Stage,
    cfg: &AlgoConfig,
) -> Result<ProbeResult> {
    if norm(d) == 0.0 {
        return Err(Error::invalid("probing direction must be nonzero"));
    }
    let at = spec.with_theta_star(theta)?.with_zero_tol(cfg.zero_tol)?;
    let grid = Grid::new(at.t0(), at.tf(), cfg.step)?;
    let traj = integrate_sensitivity(&at, &grid, d, cfg.mode)?;
    let m = build_lserc(&traj, &cfg.sample_times, cfg.rank)?;
    Ok(ProbeResult::new(m, stage, traj.kink_times()))
}

/// Rank test along one direction at the configured reference point.
pub fn probe(spec: &ModelSpec, d: &[f64], cfg: &AlgoConfig) -> Result<ProbeResult> {
    cfg.validate(spec)?;
    probe_at(spec, &cfg.theta_star, d, Stage::Primary, cfg)
}

fn record(spec: &ModelSpec, theta: &[f64], d: &[f64], stage: Stage, cfg: &AlgoConfig) -> ProbeRecord {
    match probe_at(spec, theta, d, stage, cfg) {
        Ok(p) => ProbeRecord::Done(p),
        Err(e) => ProbeRecord::Failed(ProbeFailure {
            d: d.to_vec(),
            stage,
            error: e.to_string(),
        }),
    }
}

/// Outcome of probing every `+-e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalTest {
    pub probes: Vec<ProbeRecord>,
    pub natural: bool,
}

pub fn natural_test(spec: &ModelSpec, cfg: &AlgoConfig) -> Result<NaturalTest> {
    let cfg = AlgoConfig {
        directions: natural_directions(spec.n_p()),
        ..cfg.clone()
    };
    cfg.validate(spec)?;
    let probes = par::map(&cfg.directions, cfg.parallel, |d| {
        record(spec, &cfg.theta_star, d, Stage::Primary, &cfg)
    });
    let natural = probes.iter().all(ProbeRecord::is_full_rank);
    Ok(NaturalTest { probes, natural })
}

/// `d + eps e_j` for the smallest `j` with `e_j` not parallel to `d`;
/// `d (1 + eps)` when there is only one parameter.
pub fn twin_direction(d: &[f64], eps_twin: f64) -> Vec<f64> {
    let n = d.len();
    if n == 1 {
        return vec![d[0] * (1.0 + eps_twin)];
    }
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let small = |v: f64| v.abs() <= 1e-12 * scale;
    let parallel_to = |j: usize| (0..n).all(|i| i == j || small(d[i]));
    let j = (0..n).find(|&j| !parallel_to(j)).unwrap_or(0);
    let mut out = d.to_vec();
    out[j] += eps_twin;
    out
}

/// `theta* +- eps * dtheta` with `dtheta` the sum of the canonical null vectors.
pub fn singular_perturbations(
    m: &LSercMatrix,
    theta_star: &[f64],
    eps_sing: f64,
    scale: SingScale,
) -> Result<SingularStep> {
    if m.is_full_rank() {
        return Err(Error::Precondition("rank matrix is not deficient".into()));
    }
    if !(eps_sing > 0.0) {
        return Err(Error::invalid(format!(
            "singularity epsilon must be > 0, got {eps_sing}"
        )));
    }
    if theta_star.len() != m.n_p() {
        return Err(Error::invalid(
            "reference point and rank matrix disagree in dimension",
        ));
    }
    let null = m.null_vectors();
    let delta = null
        .iter()
        .fold(DVector::zeros(m.n_p()), |acc: DVector<f64>, v| acc + v);
    let dn = delta.norm();
    if dn <= 1e-12 {
        return Err(Error::DegenerateNullspace(format!(
            "sum of {} null vectors has norm {dn:e}",
            null.len()
        )));
    }
    let eps = match scale {
        SingScale::Absolute => eps_sing,
        SingScale::Relative => {
            let tn = norm(theta_star);
            if tn == 0.0 {
                return Err(Error::invalid("relative step needs a nonzero reference point"));
            }
            eps_sing * tn / dn
        }
    };
    let plus = theta_star
        .iter()
        .zip(delta.iter())
        .map(|(t, v)| t + eps * v)
        .collect();
    let minus = theta_star
        .iter()
        .zip(delta.iter())
        .map(|(t, v)| t - eps * v)
        .collect();
    let zero_sv = m.zero_indices().iter().map(|&i| m.singular_values()[i]).collect();
    Ok(SingularStep {
        d: m.d().to_vec(),
        zero_singular_values: zero_sv,
        null_vectors: null.iter().map(|v| v.iter().copied().collect()).collect(),
        delta_theta: delta.iter().copied().collect(),
        eps,
        plus,
        minus,
    })
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DEDUP_TOL)
}

struct Pending {
    theta: Vec<f64>,
    origin: Option<Origin>,
    parent: Option<usize>,
}

/// Runs primary, twin and (optionally) singular stages at one point.
fn evaluate_node(spec: &ModelSpec, p: &Pending, depth: usize, run_s3: bool, cfg: &AlgoConfig) -> ReportNode {
    let s1 = if depth == 0 {
        Stage::Primary
    } else {
        Stage::SingularityDescendant
    };
    let mut jobs: Vec<(Vec<f64>, Stage)> = cfg.directions.iter().map(|d| (d.clone(), s1)).collect();
    if cfg.eps_twin > 0.0 {
        jobs.extend(
            cfg.directions
                .iter()
                .map(|d| (twin_direction(d, cfg.eps_twin), Stage::Twin)),
        );
    }
    let mut results = par::map(&jobs, cfg.parallel, |(d, stage)| {
        record(spec, &p.theta, d, *stage, cfg)
    });
    let twin = results.split_off(cfg.directions.len());
    let primary = results;

    let mut d_sing = Vec::new();
    let mut singular = Vec::new();
    let mut theta_sing: Vec<Vec<f64>> = Vec::new();
    if cfg.eps_sing > 0.0 {
        let deficient: Vec<&ProbeResult> = primary
            .iter()
            .chain(&twin)
            .filter_map(ProbeRecord::result)
            .filter(|r| !r.is_full_rank())
            .collect();
        d_sing = deficient.iter().map(|r| r.d.clone()).collect();
        if run_s3 {
            for r in deficient {
                match singular_perturbations(&r.matrix, &p.theta, cfg.eps_sing, cfg.sing_scale) {
                    Ok(step) => {
                        for t in [&step.plus, &step.minus] {
                            if !theta_sing.iter().any(|s| same_point(s, t)) {
                                theta_sing.push(t.clone());
                            }
                        }
                        singular.push(SingularRecord::Done(step));
                    }
                    Err(e) => singular.push(SingularRecord::Failed {
                        d: r.d.clone(),
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    ReportNode {
        theta_star: p.theta.clone(),
        depth,
        origin: p.origin.clone(),
        primary,
        twin,
        d_sing,
        singular,
        theta_sing,
        children: Vec::new(),
    }
}

/// The three-stage probing search: primary directions, twin directions, then
/// breadth-first recursion into null-space perturbations of deficient probes.
///
/// Individual probe failures are recorded in the report; only an invalid
/// configuration is returned as an error.
pub fn algorithm1(spec: &ModelSpec, cfg: &AlgoConfig) -> Result<AlgoReport> {
    cfg.validate(spec)?;
    let s3_enabled = cfg.eps_sing > 0.0 && cfg.q > 0;
    let mut arena: Vec<(ReportNode, Option<usize>)> = Vec::new();
    let mut seen: Vec<Vec<f64>> = vec![cfg.theta_star.clone()];
    let mut level = vec![Pending {
        theta: cfg.theta_star.clone(),
        origin: None,
        parent: None,
    }];
    for depth in 0..=cfg.q {
        if level.is_empty() {
            break;
        }
        let run_s3 = s3_enabled && depth < cfg.q;
        let mut next = Vec::new();
        for p in &level {
            let node = evaluate_node(spec, p, depth, run_s3, cfg);
            let idx = arena.len();
            for step in node.singular.iter().filter_map(|s| match s {
                SingularRecord::Done(s) => Some(s),
                SingularRecord::Failed { .. } => None,
            }) {
                for (t, sign) in [(&step.plus, 1i8), (&step.minus, -1i8)] {
                    if !seen.iter().any(|s| same_point(s, t)) {
                        seen.push(t.clone());
                        next.push(Pending {
                            theta: t.clone(),
                            origin: Some(Origin {
                                from_d: step.d.clone(),
                                sign,
                            }),
                            parent: Some(idx),
                        });
                    }
                }
            }
            arena.push((node, p.parent));
        }
        level = next;
    }

    // children always come after their parent, so fold from the back
    while arena.len() > 1 {
        let (node, parent) = arena.pop().expect("non-empty");
        let parent = parent.expect("only the root has no parent");
        arena[parent].0.children.insert(0, node);
    }
    let root = arena.pop().expect("root node").0;

    let summary = summarize(&root, spec.n_p());
    Ok(AlgoReport {
        model: spec.name().to_string(),
        mode: cfg.mode,
        n_p: spec.n_p(),
        eps_twin: cfg.eps_twin,
        eps_sing: cfg.eps_sing,
        q: cfg.q,
        rank_tol: cfg.rank.rank_tol,
        step: cfg.step,
        summary,
        verdict: summary.describe(cfg.mode),
        caveat: (summary == Summary::Natural).then(|| NATURAL_CAVEAT.to_string()),
        root,
    })
}
