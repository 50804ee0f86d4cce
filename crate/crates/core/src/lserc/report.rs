use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use super::matrix::LSercMatrix;
use crate::error::Result;
use crate::sensint::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Primary,
    Twin,
    /// A primary probe run at a perturbed reference point.
    SingularityDescendant,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Primary => "primary",
            Stage::Twin => "twin",
            Stage::SingularityDescendant => "singularity_descendant",
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Stage::Primary | Stage::SingularityDescendant => "S1",
            Stage::Twin => "S2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FullRank,
    Deficient,
}

/// One successful rank test along a direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub d: Vec<f64>,
    pub stage: Stage,
    pub rank: usize,
    pub n_p: usize,
    pub verdict: Verdict,
    pub matrix: LSercMatrix,
    /// Grid times where a branch decision flipped along the reference trajectory.
    pub kink_times: Vec<f64>,
}

impl ProbeResult {
    pub fn new(matrix: LSercMatrix, stage: Stage, kink_times: Vec<f64>) -> Self {
        let rank = matrix.rank();
        let n_p = matrix.n_p();
        ProbeResult {
            d: matrix.d().to_vec(),
            stage,
            rank,
            n_p,
            verdict: if rank == n_p {
                Verdict::FullRank
            } else {
                Verdict::Deficient
            },
            matrix,
            kink_times,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.verdict == Verdict::FullRank
    }

    pub fn stage_name(&self) -> &'static str {
        self.stage.name()
    }
}

/// A probe that could not be completed; siblings are unaffected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFailure {
    pub d: Vec<f64>,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeRecord {
    Done(ProbeResult),
    Failed(ProbeFailure),
}

impl ProbeRecord {
    pub fn d(&self) -> &[f64] {
        match self {
            ProbeRecord::Done(p) => &p.d,
            ProbeRecord::Failed(f) => &f.d,
        }
    }

    pub fn result(&self) -> Option<&ProbeResult> {
        match self {
            ProbeRecord::Done(p) => Some(p),
            ProbeRecord::Failed(_) => None,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.result().is_some_and(ProbeResult::is_full_rank)
    }
}

#[derive(Serialize)]
struct ProbeJson<'a> {
    d: &'a [f64],
    stage: Stage,
    rank: usize,
    n_p: usize,
    verdict: Verdict,
    singular_values: &'a [f64],
    tol_used: Option<f64>,
    upsilon: Vec<Vec<f64>>,
    right_vectors: Vec<Vec<f64>>,
    sample_times: &'a [f64],
    kink_times: &'a [f64],
}

impl Serialize for ProbeRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ProbeRecord::Failed(f) => f.serialize(s),
            ProbeRecord::Done(p) => {
                let tol = p.matrix.tol_used();
                ProbeJson {
                    d: &p.d,
                    stage: p.stage,
                    rank: p.rank,
                    n_p: p.n_p,
                    verdict: p.verdict,
                    singular_values: p.matrix.singular_values(),
                    tol_used: tol.is_finite().then_some(tol),
                    upsilon: p.matrix.rows(),
                    right_vectors: p
                        .matrix
                        .right_vectors()
                        .column_iter()
                        .map(|c| c.iter().copied().collect())
                        .collect(),
                    sample_times: p.matrix.sample_times(),
                    kink_times: &p.kink_times,
                }
                .serialize(s)
            }
        }
    }
}

/// Null-space step computed for one deficient direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularStep {
    pub d: Vec<f64>,
    /// Singular values treated as zero.
    pub zero_singular_values: Vec<f64>,
    pub null_vectors: Vec<Vec<f64>>,
    pub delta_theta: Vec<f64>,
    pub eps: f64,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SingularRecord {
    Done(SingularStep),
    Failed { d: Vec<f64>, error: String },
}

/// How a perturbed reference point was reached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Origin {
    pub from_d: Vec<f64>,
    /// `+1` or `-1`.
    pub sign: i8,
}

/// Results at one reference point, with recursion into perturbed points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportNode {
    pub theta_star: Vec<f64>,
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    pub primary: Vec<ProbeRecord>,
    pub twin: Vec<ProbeRecord>,
    pub d_sing: Vec<Vec<f64>>,
    pub singular: Vec<SingularRecord>,
    pub theta_sing: Vec<Vec<f64>>,
    pub children: Vec<ReportNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    /// Every probe along `+-e_i` is full rank.
    Natural,
    /// At least one full-rank probe at the reference point.
    Partial,
    /// Probes completed but none had full rank.
    NoFullRank,
    /// Every probe at the reference point failed.
    Inconclusive,
}

impl Summary {
    pub fn describe(self, mode: Mode) -> String {
        let noun = match mode {
            Mode::Identifiability => "identifiable",
            Mode::Observability => "observable",
        };
        match self {
            Summary::Natural => format!("naturally {noun}"),
            Summary::Partial => format!("partially {noun}"),
            Summary::NoFullRank => "no full-rank direction found".into(),
            Summary::Inconclusive => "inconclusive: every probe failed".into(),
        }
    }

    /// Process exit status for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            Summary::Natural => 0,
            Summary::Partial => 2,
            Summary::NoFullRank => 3,
            Summary::Inconclusive => 1,
        }
    }
}

pub const NATURAL_CAVEAT: &str = "full rank along every +-e_i is a local, direction-wise test; \
it does not establish structural identifiability or observability (y = |p| passes at p = 0 although p and -p are indistinguishable)";

/// Complete output of the three-stage search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgoReport {
    pub model: String,
    pub mode: Mode,
    pub n_p: usize,
    pub eps_twin: f64,
    pub eps_sing: f64,
    pub q: usize,
    pub rank_tol: f64,
    pub step: f64,
    pub summary: Summary,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
    pub root: ReportNode,
}

fn is_signed_basis(d: &[f64]) -> Option<(usize, bool)> {
    let nz: Vec<usize> = (0..d.len()).filter(|&i| d[i] != 0.0).collect();
    match nz.as_slice() {
        [i] if d[*i].abs() == 1.0 => Some((*i, d[*i] > 0.0)),
        _ => None,
    }
}

/// Recomputes the summary from the root's primary probes.
///
/// Natural requires a full-rank probe along each of the `2 n_p` signed basis
/// directions; partial needs any full-rank probe (primary or twin) at the root.
pub fn summarize(root: &ReportNode, n_p: usize) -> Summary {
    let all = root.primary.iter().chain(&root.twin);
    if all.clone().all(|p| matches!(p, ProbeRecord::Failed(_))) {
        return Summary::Inconclusive;
    }
    let mut covered = vec![[false; 2]; n_p];
    let mut natural = true;
    for p in &root.primary {
        if let Some((i, pos)) = is_signed_basis(p.d()) {
            if i < n_p {
                covered[i][pos as usize] = true;
                natural &= p.is_full_rank();
            }
        }
    }
    natural &= covered.iter().all(|c| c[0] && c[1]);
    if natural {
        Summary::Natural
    } else if all.clone().any(ProbeRecord::is_full_rank) {
        Summary::Partial
    } else {
        Summary::NoFullRank
    }
}

pub(crate) fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v
        .iter()
        .map(|x| {
            let r = (x * 1e6).round() / 1e6;
            format!("{}", if r == 0.0 { 0.0 } else { r })
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn render_probe(out: &mut String, indent: &str, p: &ProbeRecord, stage: Stage) {
    let label = if stage == Stage::Twin { "d~" } else { "d " };
    match p {
        ProbeRecord::Done(r) => {
            let sv: Vec<String> = r
                .matrix
                .singular_values()
                .iter()
                .map(|s| format!("{s:.3e}"))
                .collect();
            let _ = writeln!(
                out,
                "{indent}{}: {label} = {:<24} rank {}/{}  {:<9}  sigma = [{}]",
                stage.tag(),
                fmt_vec(&r.d),
                r.rank,
                r.n_p,
                if r.is_full_rank() { "full" } else { "deficient" },
                sv.join(", ")
            );
        }
        ProbeRecord::Failed(f) => {
            let _ = writeln!(
                out,
                "{indent}{}: {label} = {:<24} error: {}",
                stage.tag(),
                fmt_vec(&f.d),
                f.error
            );
        }
    }
}

fn render_node(out: &mut String, node: &ReportNode) {
    let indent = "  ".repeat(node.depth);
    match &node.origin {
        None => {
            let _ = writeln!(out, "{indent}theta* = {}", fmt_vec(&node.theta_star));
        }
        Some(o) => {
            let _ = writeln!(
                out,
                "{indent}theta* = {}  (from d = {}, sign {})",
                fmt_vec(&node.theta_star),
                fmt_vec(&o.from_d),
                if o.sign > 0 { '+' } else { '-' }
            );
        }
    }
    for p in &node.primary {
        let stage = p.result().map_or(Stage::Primary, |r| r.stage);
        render_probe(out, &indent, p, stage);
    }
    for p in &node.twin {
        render_probe(out, &indent, p, Stage::Twin);
    }
    for s in &node.singular {
        match s {
            SingularRecord::Done(s) => {
                let zs: Vec<String> = s
                    .zero_singular_values
                    .iter()
                    .map(|v| format!("{v:.3e}"))
                    .collect();
                let vs: Vec<String> = s.null_vectors.iter().map(|v| fmt_vec(v)).collect();
                let _ = writeln!(
                    out,
                    "{indent}S3: d  = {:<24} zero sigma = [{}]  v = {}  theta* -> {}, {}",
                    fmt_vec(&s.d),
                    zs.join(", "),
                    vs.join(" "),
                    fmt_vec(&s.plus),
                    fmt_vec(&s.minus)
                );
            }
            SingularRecord::Failed { d, error } => {
                let _ = writeln!(out, "{indent}S3: d  = {:<24} error: {error}", fmt_vec(d));
            }
        }
    }
    if node.singular.is_empty() && node.depth == 0 {
        let _ = writeln!(out, "{indent}S3: skipped");
    }
    for c in &node.children {
        render_node(out, c);
    }
}

/// Stage-labelled text rendering of a report.
pub fn render_text(report: &AlgoReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {} ({}), n_p = {}",
        report.model,
        report.mode.as_str(),
        report.n_p
    );
    render_node(&mut out, &report.root);
    let _ = writeln!(out, "verdict: {}", report.verdict);
    if let Some(c) = &report.caveat {
        let _ = writeln!(out, "caveat: {c}");
    }
    out
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn csv_rows(node: &ReportNode, w: &mut csv::Writer<impl io::Write>) -> Result<()> {
    for p in node.primary.iter().chain(&node.twin) {
        let theta = join(&node.theta_star);
        let depth = node.depth.to_string();
        match p {
            ProbeRecord::Done(r) => w.write_record([
                depth.as_str(),
                &theta,
                r.stage_name(),
                &join(&r.d),
                &r.rank.to_string(),
                &r.n_p.to_string(),
                if r.is_full_rank() {
                    "full_rank"
                } else {
                    "deficient"
                },
                &join(r.matrix.singular_values()),
                "",
            ])?,
            ProbeRecord::Failed(f) => w.write_record([
                depth.as_str(),
                &theta,
                f.stage.name(),
                &join(&f.d),
                "",
                "",
                "error",
                "",
                &f.error,
            ])?,
        }
    }
    for c in &node.children {
        csv_rows(c, w)?;
    }
    Ok(())
}

/// One CSV row per probe, depth-first; vectors are `;`-separated.
pub fn write_probe_csv<W: io::Write>(report: &AlgoReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "depth",
        "theta_star",
        "stage",
        "d",
        "rank",
        "n_p",
        "verdict",
        "singular_values",
        "error",
    ])?;
    csv_rows(&report.root, &mut w)?;
    w.flush()?;
    Ok(())
}
