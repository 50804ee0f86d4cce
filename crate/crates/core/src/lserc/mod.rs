//! Rank tests on stacked output sensitivities and the three-stage probing search.

mod algo;
mod matrix;
mod report;

pub use algo::{
    algorithm1, natural_directions, natural_test, probe, singular_perturbations, twin_direction,
    uniform_times, AlgoConfig, NaturalTest, SingScale, DEDUP_TOL,
};
pub use matrix::{build_lserc, rss_quadratic, LSercMatrix, RankRule, DEFAULT_ABS_FLOOR, DEFAULT_RANK_TOL};
pub use report::{
    render_text, summarize, write_probe_csv, AlgoReport, Origin, ProbeFailure, ProbeRecord, ProbeResult,
    ReportNode, SingularRecord, SingularStep, Stage, Summary, Verdict, NATURAL_CAVEAT,
};
