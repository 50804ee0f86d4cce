use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lserc_core::ld::{taylor_residual_profile, LdFunction};
use lserc_core::lserc::{algorithm1, render_text, write_probe_csv, AlgoConfig, RankRule, SingScale};
use lserc_core::model::{builtin, builtin_names, parse_model, ExprFunction};
use lserc_core::sensint::{integrate_sensitivity, write_csv, Grid, Mode, DEFAULT_STEP};
use lserc_core::{Error, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXIT_USAGE: u8 = 64;
const EXIT_MODEL: u8 = 65;

#[derive(Parser, Debug)]
#[command(
    name = "lserc",
    version,
    about = "Nonsmooth identifiability and observability analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the three-stage rank search and report the verdict
    Analyze(AnalyzeArgs),
    /// Write the sensitivity trajectory along one direction as CSV
    Trajectories(TrajArgs),
    /// Check first-order residual decay of an expression at a point
    TaylorCheck(TaylorArgs),
    /// List the built-in models
    ListModels(ListArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Identifiability,
    Observability,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Identifiability => Mode::Identifiability,
            ModeArg::Observability => Mode::Observability,
        }
    }
}

/// A comma-separated list of reals, kept as one clap value.
#[derive(Clone, Debug)]
struct Reals(Vec<f64>);

impl std::ops::Deref for Reals {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

fn parse_reals(s: &str) -> Result<Reals, String> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{p}` is not a finite number"))
        })
        .collect::<Result<_, _>>()
        .map(Reals)
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Built-in model name or path to a model JSON document
    #[arg(long)]
    model: String,
    #[arg(long, value_enum, default_value = "identifiability")]
    mode: ModeArg,
    /// Override the reference parameters
    #[arg(long, value_parser = parse_reals, allow_hyphen_values = true)]
    theta: Option<Reals>,
    /// Integration step
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Dead-zone for branch sign tests
    #[arg(long)]
    zero_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Primary direction (comma-separated); repeat for several. Defaults to +-e_i
    #[arg(long, value_parser = parse_reals, allow_hyphen_values = true)]
    direction: Vec<Reals>,
    /// Twin offset; 0 disables the twin stage
    #[arg(long, default_value_t = 0.0)]
    twin: f64,
    /// Singularity step; 0 disables the singularity stage
    #[arg(long, default_value_t = 0.0)]
    sing: f64,
    /// Scale the singularity step by |theta*| / |dtheta|
    #[arg(long)]
    sing_relative: bool,
    /// Recursion depth of the singularity stage
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Sample times (comma-separated)
    #[arg(long, value_parser = parse_reals)]
    samples: Option<Reals>,
    #[arg(long, default_value_t = lserc_core::lserc::DEFAULT_RANK_TOL)]
    rank_tol: f64,
    /// Write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one CSV row per probe here
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print the JSON report instead of the text summary
    #[arg(long)]
    json: bool,
    /// Run probes one after another
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct TrajArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Probing direction (comma-separated); defaults to e_1
    #[arg(long, value_parser = parse_reals, allow_hyphen_values = true)]
    direction: Option<Reals>,
    /// End of the time grid (defaults to the model's tf)
    #[arg(long)]
    tf: Option<f64>,
    /// Output path; standard output when omitted
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TaylorArgs {
    /// Expression over x0, x1, ...
    #[arg(long)]
    expr: String,
    /// Base point (comma-separated)
    #[arg(long, value_parser = parse_reals, allow_hyphen_values = true)]
    at: Reals,
    /// Direction to test; random unit directions when omitted
    #[arg(long, value_parser = parse_reals, allow_hyphen_values = true)]
    direction: Option<Reals>,
    /// Decreasing scale ladder (at least 3 values)
    #[arg(long, value_parser = parse_reals, default_value = "1e-1,1e-2,1e-3,1e-4,1e-5")]
    scales: Reals,
    /// Number of random directions
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dead-zone for branch sign tests
    #[arg(long)]
    zero_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct ListArgs {
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_model(args: &ModelArgs) -> Result<ModelSpec, Failure> {
    let spec = if builtin_names().contains(&args.model.as_str()) {
        builtin(&args.model)?
    } else if Path::new(&args.model).is_file() {
        let text = std::fs::read_to_string(&args.model)?;
        parse_model(&text)?
    } else {
        return Err(Error::UnknownModel(args.model.clone()).into());
    };
    let spec = match &args.theta {
        Some(t) => spec.with_theta_star(t).map_err(|e| usage(e.to_string()))?,
        None => spec,
    };
    match args.zero_tol {
        Some(tol) => spec.with_zero_tol(tol).map_err(|e| usage(e.to_string())),
        None => Ok(spec),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn analyze(args: AnalyzeArgs) -> Result<u8, Failure> {
    let spec = load_model(&args.model)?;
    let mut cfg = AlgoConfig::for_model(&spec, args.model.mode.into());
    if !args.direction.is_empty() {
        cfg.directions = args.direction.into_iter().map(|d| d.0).collect();
    }
    if let Some(s) = args.samples {
        cfg.sample_times = s.0;
    }
    cfg.eps_twin = args.twin;
    cfg.eps_sing = args.sing;
    cfg.sing_scale = if args.sing_relative {
        SingScale::Relative
    } else {
        SingScale::Absolute
    };
    cfg.q = args.q;
    cfg.step = args.model.step;
    cfg.rank = RankRule {
        rank_tol: args.rank_tol,
        ..RankRule::default()
    };
    cfg.parallel = !args.sequential;
    cfg.validate(&spec).map_err(|e| match e {
        Error::InvalidInput(_) | Error::Precondition(_) => usage(e.to_string()),
        other => Failure::Core(other),
    })?;

    let report = algorithm1(&spec, &cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        writeln!(w, "{json}")?;
        w.flush()?;
    }
    if let Some(path) = &args.csv {
        write_probe_csv(&report, create(path)?)?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        writeln!(out, "{json}")?;
    } else {
        write!(out, "{}", render_text(&report))?;
    }
    Ok(report.summary.exit_code() as u8)
}

fn trajectories(args: TrajArgs) -> Result<u8, Failure> {
    let spec = load_model(&args.model)?;
    let mode: Mode = args.model.mode.into();
    let d = args.direction.map(|d| d.0).unwrap_or_else(|| {
        let mut e = vec![0.0; spec.n_p()];
        e[0] = 1.0;
        e
    });
    let grid = Grid::new(spec.t0(), args.tf.unwrap_or(spec.tf()), args.model.step)
        .map_err(|e| usage(e.to_string()))?;
    let traj = integrate_sensitivity(&spec, &grid, &d, mode).map_err(|e| match e {
        Error::InvalidInput(_) | Error::Precondition(_) => usage(e.to_string()),
        other => Failure::Core(other),
    })?;
    match &args.csv {
        Some(path) => write_csv(&traj, spec.n_x(), spec.n_y(), create(path)?)?,
        None => write_csv(&traj, spec.n_x(), spec.n_y(), io::stdout().lock())?,
    }
    Ok(0)
}

/// Residual noise floor: rounding in `f` is amplified by `1 / a`.
fn noise_floor(fx0: &[f64], a: f64) -> f64 {
    let scale = 1.0 + fx0.iter().map(|v| v * v).sum::<f64>().sqrt();
    (64.0 * f64::EPSILON * scale / a).max(1e-12)
}

/// Each residual must shrink at least in proportion to the scale (with a factor
/// 2 margin), unless it is already at the rounding floor.
fn decays(fx0: &[f64], scales: &[f64], r: &[f64]) -> bool {
    (1..r.len()).all(|i| {
        r[i] <= noise_floor(fx0, scales[i])
            || r[i - 1] <= 1e-12
            || r[i] <= 2.0 * scales[i] / scales[i - 1] * r[i - 1]
    })
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn taylor_check(args: TaylorArgs) -> Result<u8, Failure> {
    if args.scales.len() < 3 {
        return Err(usage(format!(
            "need at least 3 scales, got {}",
            args.scales.len()
        )));
    }
    if args.scales.iter().any(|&a| a <= 0.0) || args.scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(usage("scales must be positive and strictly decreasing"));
    }
    if args.at.is_empty() {
        return Err(usage("--at needs at least one coordinate"));
    }
    let n = args.at.len();
    let f = ExprFunction::parse(&[args.expr.as_str()], n)?;
    let f = match args.zero_tol {
        Some(tol) => f.with_zero_tol(tol).map_err(|e| usage(e.to_string()))?,
        None => f,
    };
    let fx0 = f.eval(&args.at)?;

    let dirs: Vec<Vec<f64>> = match &args.direction {
        Some(d) => {
            if d.len() != n {
                return Err(usage(format!("direction needs {n} entries, got {}", d.len())));
            }
            vec![unit(d).ok_or_else(|| usage("direction must be nonzero"))?]
        }
        None => {
            if args.trials == 0 {
                return Err(usage("--trials must be at least 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.trials)
                .map(|_| loop {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if let Some(u) = unit(&v) {
                        break u;
                    }
                })
                .collect()
        }
    };

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let header: Vec<String> = args.scales.iter().map(|a| format!("{a:>11.1e}")).collect();
    writeln!(out, "{:<28}{}", "direction", header.join(" "))?;
    let mut all_ok = true;
    for d in &dirs {
        let r = taylor_residual_profile(&f, &args.at, d, &args.scales)?;
        let ok = decays(&fx0, &args.scales, &r);
        all_ok &= ok;
        let cells: Vec<String> = r.iter().map(|v| format!("{v:>11.3e}")).collect();
        let dir: Vec<String> = d.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(
            out,
            "{:<28}{}  {}",
            format!("[{}]", dir.join(", ")),
            cells.join(" "),
            if ok { "ok" } else { "slow" }
        )?;
    }
    writeln!(out, "{}", if all_ok { "PASS" } else { "FAIL" })?;
    Ok(if all_ok { 0 } else { 1 })
}

fn list_models(args: ListArgs) -> Result<u8, Failure> {
    let specs = builtin_names()
        .iter()
        .map(|n| builtin(n))
        .collect::<Result<Vec<_>, _>>()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        let list: Vec<_> = specs
            .iter()
            .map(|s| {
                serde_json::json!({
                    "name": s.name(),
                    "n_x": s.n_x(),
                    "n_u": s.n_u(),
                    "n_p": s.n_p(),
                    "n_y": s.n_y(),
                    "theta_star": s.theta_star(),
                    "t0": s.t0(),
                    "tf": s.tf(),
                    "observability": s.supports_observability(),
                })
            })
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&list)?)?;
    } else {
        writeln!(
            out,
            "{:<12} {:>3} {:>3} {:>3} {:>3}  theta*",
            "name", "n_x", "n_u", "n_p", "n_y"
        )?;
        for s in &specs {
            let theta: Vec<String> = s.theta_star().iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{:<12} {:>3} {:>3} {:>3} {:>3}  [{}]",
                s.name(),
                s.n_x(),
                s.n_u(),
                s.n_p(),
                s.n_y(),
                theta.join(", ")
            )?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Trajectories(a) => trajectories(a),
        Command::TaylorCheck(a) => taylor_check(a),
        Command::ListModels(a) => list_models(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_model_error() { EXIT_MODEL } else { 1 })
        }
        Err(Failure::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
