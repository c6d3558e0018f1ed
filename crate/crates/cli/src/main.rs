//! `chaoslrd`: simulate multilinear chaos sequences and check them against
//! exact oracles and limit theorems.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use chaoslrd::levy::{discretize, LevyModel, LevySpec, TailInverse};
use chaoslrd::limits::{self, FbmGenerator, HermiteSpec, MomentQuadrature, RosenblattGenerator, RosenblattGrid};
use chaoslrd::report;
use chaoslrd::rng;
use chaoslrd::sim::{check_long_memory, check_short_memory, partial_sums, x_sequence, FrameBuilder, Normalization};
use chaoslrd::stats::{self, Metadata, Stages};
use chaoslrd::{Estimate, ExperimentSpec, Regime, Representation, ResultTable, ReturnLaw, Row};
use clap::{Args, Parser, Subcommand};

const RANGES: &str = "\
Parameter ranges:
  short memory (clt):      p(beta-1) < -1, so p >= 2 and beta < 1 - 1/p
  long memory (nclt):      -1 < p(beta-1) < 0 with p in {1, 2}; p >= 3 only with --exploratory
  p(beta-1) = -1 is not supported.";

#[derive(Parser, Debug)]
#[command(name = "chaoslrd", version, about = "Multilinear chaos sequences over null-recurrent renewal shifts", after_help = RANGES)]
pub struct Cli {
    /// Plain-text key=value file; flags on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate normalized partial-sum paths and write them to simulate.csv.
    Simulate(SimulateArgs),
    /// Monte Carlo covariances against the exact oracle p!·theta²·u_k^p.
    Covariance(RunArgs),
    /// Short-memory run: covariances, variance, KS, moments and scaling.
    #[command(after_help = RANGES)]
    Clt(RunArgs),
    /// Long-memory run: covariances, variance, KS (p = 1), moments and scaling.
    #[command(after_help = RANGES)]
    Nclt(RunArgs),
    /// Joint moments of the Hermite limit, printed as CSV.
    Moments(MomentArgs),
    /// Sample the limit process (fBm for p = 1, Rosenblatt for p = 2) and check it.
    Hermite(HermiteArgs),
    /// Moment identities and discretization for a Lévy model.
    Levycheck(LevyArgs),
    /// Print the result tables under --out and fail if any row failed.
    Report,
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq)]
struct List<T>(Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<T>().map_err(|e| format!("'{x}': {e}")))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Chaos order.
    #[arg(long)]
    p: usize,
    /// Tail index of the return-time law, in (0, 1).
    #[arg(long)]
    beta: f64,
    /// Coefficient of the chaos term.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// rademacher | pareto:ALPHA | discretized:ALPHA:EPS
    #[arg(long, default_value = "rademacher")]
    levy: String,
    /// cp (compound Poisson) | series
    #[arg(long, default_value = "cp")]
    repr: String,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Window length (a one-rung ladder).
    #[arg(long, conflicts_with = "ladder")]
    n: Option<usize>,
    /// Increasing window lengths; the largest is the main run.
    #[arg(long)]
    ladder: Option<List<usize>>,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Time grid, ending at 1.
    #[arg(long)]
    t: Option<List<f64>>,
    #[arg(long)]
    lags: Option<List<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// sqrtn | an | an-inner | propnorm
    #[arg(long)]
    norm: Option<String>,
    /// Moment orders.
    #[arg(long)]
    orders: Option<List<u32>>,
    #[arg(long = "sigma2-tol", default_value_t = 1e-4)]
    sigma2_tol: f64,
    /// Allow long-memory runs with p >= 3.
    #[arg(long)]
    exploratory: bool,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value = "0.25,0.5,0.75,1")]
    t: List<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// sqrtn | an | an-inner | propnorm (default: sqrtn or an by regime)
    #[arg(long)]
    norm: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct MomentArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    beta: f64,
    /// Moment order.
    #[arg(long)]
    r: usize,
    /// Times t_1..t_r (default all 1).
    #[arg(long)]
    t: Option<List<f64>>,
    /// Mean of the observable.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// auto | nested | qmc
    #[arg(long, default_value = "auto")]
    quadrature: String,
}

#[derive(Args, Debug, Clone)]
struct HermiteArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    /// Times at which the process is sampled.
    #[arg(long, default_value = "0.2,0.6,1")]
    t: List<f64>,
    /// Grid points per unit time for fBm paths.
    #[arg(long, default_value_t = 640)]
    n: usize,
    /// Rosenblatt grid size.
    #[arg(long, default_value_t = 2000)]
    cells: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct LevyArgs {
    #[arg(long, default_value = "rademacher")]
    levy: String,
    /// Moment orders (default 2,4 for atomic measures and 2,3,4 otherwise).
    #[arg(long)]
    orders: Option<List<f64>>,
    /// Discretization targets for tail-inverse models.
    #[arg(long, default_value = "0.1,0.05,0.02")]
    eps: List<f64>,
}

/// Exit codes: 1 for failed rows, 2 for invalid input, 3 for runtime failures.
enum Failure {
    Rows(String),
    Usage(String),
    Runtime(String),
}

impl From<chaoslrd::Error> for Failure {
    fn from(e: chaoslrd::Error) -> Self {
        match e {
            chaoslrd::Error::Domain(_) | chaoslrd::Error::Parse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let args = match config::merge_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rows(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Simulate(a) => simulate(a, &cli.out),
        Command::Covariance(a) => {
            let regime = regime_for(a.model.p, a.model.beta)?;
            let mut spec = experiment_spec(regime, a, &cli.out)?;
            spec.stages = Stages::COVARIANCE;
            spec.exploratory = true;
            finish(stats::run_experiment(&spec)?)
        }
        Command::Clt(a) => finish(stats::run_experiment(&experiment_spec(Regime::Clt, a, &cli.out)?)?),
        Command::Nclt(a) => finish(stats::run_experiment(&experiment_spec(Regime::Nclt, a, &cli.out)?)?),
        Command::Moments(a) => moments(a, &cli.out),
        Command::Hermite(a) => hermite(a, &cli.out),
        Command::Levycheck(a) => levycheck(a, &cli.out),
        Command::Report => report_dir(&cli.out),
    }
}

fn regime_for(p: usize, beta: f64) -> Result<Regime, Failure> {
    if check_short_memory(p, beta).is_ok() {
        Ok(Regime::Clt)
    } else if check_long_memory(p, beta).is_ok() {
        Ok(Regime::Nclt)
    } else {
        Err(Failure::Usage(format!(
            "p(beta-1) = {} is outside both regimes: CLT requires p(beta-1) < -1, non-central limit requires -1 < p(beta-1) < 0",
            p as f64 * (beta - 1.0)
        )))
    }
}

fn parse<T: FromStr<Err = chaoslrd::Error>>(s: &str) -> Result<T, Failure> {
    s.parse::<T>().map_err(Failure::from)
}

fn experiment_spec(regime: Regime, a: &RunArgs, out: &Path) -> Result<ExperimentSpec, Failure> {
    let mut spec = ExperimentSpec::new(regime, a.model.p, a.model.beta);
    spec.theta = a.model.theta;
    spec.levy = parse::<LevySpec>(&a.model.levy)?;
    spec.representation = parse::<Representation>(&a.model.repr)?;
    if let Some(List(l)) = &a.ladder {
        spec.ladder = l.clone();
    } else if let Some(n) = a.n {
        spec.ladder = vec![n];
    }
    spec.reps = a.reps;
    if let Some(List(t)) = &a.t {
        spec.tgrid = t.clone();
    }
    if let Some(List(l)) = &a.lags {
        spec.lags = l.clone();
    }
    spec.seed = a.seed;
    if let Some(norm) = &a.norm {
        spec.normalization = parse::<Normalization>(norm)?;
    }
    if let Some(List(o)) = &a.orders {
        spec.moment_orders = o.clone();
    }
    spec.sigma2_tol = a.sigma2_tol;
    spec.exploratory = a.exploratory;
    spec.out_dir = Some(out.to_path_buf());
    spec.validate()?;
    Ok(spec)
}

fn finish(table: ResultTable) -> Outcome {
    print!("{}", report::format_table(&table));
    match table.first_failure() {
        None => Ok(()),
        Some(r) => Err(Failure::Rows(format!(
            "FAILED row {}: estimate {} vs oracle {} (tolerance {})",
            r.id, r.estimate, r.oracle, r.tolerance
        ))),
    }
}

fn simulate(a: &SimulateArgs, out: &Path) -> Outcome {
    let (p, beta) = (a.model.p, a.model.beta);
    let norm = match &a.norm {
        Some(s) => parse::<Normalization>(s)?,
        None => match regime_for(p, beta)? {
            Regime::Clt => Normalization::SqrtN,
            Regime::Nclt => Normalization::default(),
        },
    };
    let levy = parse::<LevySpec>(&a.model.levy)?;
    let repr = parse::<Representation>(&a.model.repr)?;
    let law = ReturnLaw::new(beta)?;
    let builder = FrameBuilder::new(law.window(a.n)?, &levy.model, repr)?;
    report::ensure_writable(out)?;
    let rows: Vec<Result<Vec<(usize, f64, f64)>, chaoslrd::Error>> = rng::replicate(a.seed, a.reps, |rep, rng| {
        let frame = builder.build(rng)?;
        let x = x_sequence(&frame, p, a.model.theta);
        let path = partial_sums(&x, &law, p, &a.t.0, norm, None)?;
        Ok(path.tgrid.iter().zip(&path.values).map(|(&t, &v)| (rep as usize, t, v)).collect())
    });
    #[derive(serde::Serialize)]
    struct Rec {
        replication: usize,
        t: f64,
        value: f64,
    }
    let mut recs = Vec::new();
    for r in rows {
        recs.extend(r?.into_iter().map(|(replication, t, value)| Rec { replication, t, value }));
    }
    let config = vec![
        ("p".to_string(), p.to_string()),
        ("beta".into(), beta.to_string()),
        ("theta".into(), a.model.theta.to_string()),
        ("levy".into(), levy.to_string()),
        ("repr".into(), repr.to_string()),
        ("n".into(), a.n.to_string()),
        ("reps".into(), a.reps.to_string()),
        ("t".into(), join(&a.t.0)),
        ("norm".into(), norm.to_string()),
        ("seed".into(), a.seed.to_string()),
    ];
    let path = out.join("simulate.csv");
    report::write_csv(&path, &config, &recs)?;
    println!("wrote {} rows to {}", recs.len(), path.display());
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn moments(a: &MomentArgs, out: &Path) -> Outcome {
    let ts = match &a.t {
        Some(List(t)) => t.clone(),
        None => vec![1.0; a.r],
    };
    if ts.len() != a.r {
        return Err(Failure::Usage(format!("--t has {} times but --r is {}", ts.len(), a.r)));
    }
    let quad = match a.quadrature.as_str() {
        "auto" => MomentQuadrature::Auto,
        "nested" => MomentQuadrature::Nested,
        "qmc" => limits::DEFAULT_QMC,
        other => return Err(Failure::Usage(format!("unknown quadrature '{other}' (auto, nested, qmc)"))),
    };
    let est = limits::hermite_joint_moment(a.p, a.beta, a.theta, &ts, quad)?;
    #[derive(serde::Serialize)]
    struct Rec {
        p: usize,
        beta: f64,
        order_tuple: String,
        formula: f64,
        stderr: Option<f64>,
    }
    let rec = Rec { p: a.p, beta: a.beta, order_tuple: format!("({})", join(&ts)), formula: est.value, stderr: est.stderr };
    println!("p,beta,order_tuple,formula,stderr");
    println!(
        "{},{},\"{}\",{},{}",
        rec.p,
        rec.beta,
        rec.order_tuple,
        rec.formula,
        rec.stderr.map(|s| s.to_string()).unwrap_or_default()
    );
    let config = vec![
        ("p".to_string(), a.p.to_string()),
        ("beta".into(), a.beta.to_string()),
        ("r".into(), a.r.to_string()),
        ("t".into(), join(&ts)),
        ("theta".into(), a.theta.to_string()),
        ("quadrature".into(), a.quadrature.clone()),
    ];
    report::ensure_writable(out)?;
    report::write_csv(&out.join("formula.csv"), &config, &[rec])?;
    Ok(())
}

fn table(rows: Vec<Row>, seed: u64, config: Vec<(String, String)>, started: std::time::Instant) -> ResultTable {
    ResultTable {
        rows,
        metadata: Metadata { seed, build: stats::build_id(), wall_time_s: started.elapsed().as_secs_f64(), config },
    }
}

fn hermite(a: &HermiteArgs, out: &Path) -> Outcome {
    let started = std::time::Instant::now();
    report::ensure_writable(out)?;
    let spec = HermiteSpec::new(a.p, a.beta)?;
    let h = spec.hurst;
    let mut times = a.t.0.clone();
    times.sort_by(f64::total_cmp);
    if times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Failure::Usage("--t values must lie in (0, 1]".into()));
    }
    let mut rows = Vec::new();
    #[derive(serde::Serialize)]
    struct Rec {
        replication: usize,
        t: f64,
        value: f64,
    }
    let mut recs = Vec::new();
    match a.p {
        1 => {
            let gen = FbmGenerator::new(h, a.n)?;
            let idx: Vec<usize> = times.iter().map(|&t| ((t * a.n as f64).round() as usize).clamp(1, a.n)).collect();
            let scale = (a.n as f64).powf(-h);
            let draws: Vec<Vec<f64>> = rng::replicate(a.seed, a.reps, |_, rng| {
                let path = gen.path(rng);
                idx.iter().map(|&k| path[k - 1] * scale).collect()
            });
            for i in 0..times.len() {
                for j in i..times.len() {
                    let prods: Vec<f64> = draws.iter().map(|d| d[i] * d[j]).collect();
                    let est = stats::mean_estimate(&prods);
                    let (s, t) = (idx[i] as f64 / a.n as f64, idx[j] as f64 / a.n as f64);
                    let oracle = 0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h));
                    rows.push(Row::scored(
                        format!("fbm_cov[{s},{t}]"),
                        est,
                        oracle,
                        5.0 * est.stderr.unwrap_or(f64::NAN),
                        "fBm covariance (s^2H + t^2H - |t-s|^2H)/2",
                    ));
                }
            }
            for (rep, d) in draws.iter().enumerate() {
                for (k, &v) in d.iter().enumerate() {
                    recs.push(Rec { replication: rep, t: idx[k] as f64 / a.n as f64, value: v });
                }
            }
        }
        2 => {
            let spec = spec.with_grid(RosenblattGrid { x_cells: a.cells, ..RosenblattGrid::default() }).with_tolerance(f64::INFINITY);
            for (k, &t) in times.iter().enumerate() {
                let gen = RosenblattGenerator::new(&spec, t)?;
                let target = t.powf(2.0 * h);
                rows.push(Row::scored(
                    format!("rosenblatt_var[{t}]"),
                    Estimate::exact(gen.discrete_variance()),
                    target,
                    0.05 * target,
                    "Var Z(t) = t^2H",
                ));
                let draws: Vec<f64> = rng::replicate(rng_key(a.seed, k), a.reps, |_, rng| gen.sample(rng));
                let sq: Vec<f64> = draws.iter().map(|v| v * v).collect();
                let est = stats::mean_estimate(&sq);
                rows.push(Row::scored(
                    format!("rosenblatt_mc_var[{t}]"),
                    est,
                    gen.discrete_variance(),
                    5.0 * est.stderr.unwrap_or(f64::NAN),
                    "discrete variance 2·ΣM²",
                ));
                let cube: Vec<f64> = draws.iter().map(|v| v * v * v).collect();
                let est = stats::mean_estimate(&cube);
                rows.push(Row::scored(
                    format!("rosenblatt_mc_m3[{t}]"),
                    est,
                    gen.discrete_third_moment(),
                    5.0 * est.stderr.unwrap_or(f64::NAN),
                    "discrete third moment 8·Σλ³",
                ));
                recs.extend(draws.iter().enumerate().map(|(replication, &value)| Rec { replication, t, value }));
            }
        }
        _ => return Err(Failure::Usage("hermite sampling supports p = 1 (fBm) and p = 2 (Rosenblatt)".into())),
    }
    let config = vec![
        ("p".to_string(), a.p.to_string()),
        ("beta".into(), a.beta.to_string()),
        ("reps".into(), a.reps.to_string()),
        ("t".into(), join(&times)),
        ("n".into(), a.n.to_string()),
        ("cells".into(), a.cells.to_string()),
        ("seed".into(), a.seed.to_string()),
    ];
    report::write_csv(&out.join("hermite.csv"), &config, &recs)?;
    let t = table(rows, a.seed, config, started);
    report::write_summary(&out.join(report::SUMMARY_FILE), &t)?;
    finish(t)
}

/// Separate master seed per time point.
fn rng_key(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn levycheck(a: &LevyArgs, out: &Path) -> Outcome {
    let started = std::time::Instant::now();
    let levy = parse::<LevySpec>(&a.levy)?;
    let mut rows = Vec::new();
    let rel = |x: f64| 1e-8 * x.abs().max(1.0);
    match &levy.model {
        LevyModel::Finite(m) => {
            let orders = a.orders.clone().map(|l| l.0).unwrap_or_else(|| vec![2.0, 4.0]);
            let ti = m.tail_inverse();
            for r in orders {
                let atomic = m.moment(r);
                let via_tail = ti.moment(r)?;
                rows.push(Row::scored(
                    format!("moment[{r}]"),
                    Estimate::exact(via_tail),
                    atomic,
                    rel(atomic),
                    "atomic moment 2·Σ mass·x^r vs tail-inverse integral",
                ));
            }
            rows.push(Row::scored(
                "total_mass",
                Estimate::exact(ti.support_end()),
                m.total_mass(),
                rel(m.total_mass()),
                "Q = length of the tail-inverse support",
            ));
        }
        LevyModel::Tail(ti) => {
            let orders = a.orders.clone().map(|l| l.0).unwrap_or_else(|| vec![2.0, 3.0, 4.0]);
            if let TailInverse::Pareto { alpha, .. } = ti {
                for &r in &orders {
                    let closed = TailInverse::pareto_moment_closed(*alpha, r)?;
                    let quad = ti.moment(r)?;
                    rows.push(Row::scored(
                        format!("moment[{r}]"),
                        Estimate::exact(quad),
                        closed,
                        rel(closed),
                        "closed-form Pareto moment vs tail-inverse quadrature",
                    ));
                }
            }
            for &eps in &a.eps.0 {
                let (m, err) = discretize(ti, eps)?;
                rows.push(Row::scored(
                    format!("discretize[{eps}]"),
                    Estimate::exact(err),
                    0.0,
                    eps,
                    format!("L2 distance of the projected tail inverse ({} atoms)", m.atoms().len()),
                ));
                for &r in &orders {
                    let exact = ti.moment(r)?;
                    rows.push(Row::info(
                        format!("discretize[{eps}] moment[{r}]"),
                        Estimate::exact(m.moment(r)),
                        exact,
                        "moment of the discretized measure",
                    ));
                }
            }
        }
    }
    let config = vec![
        ("levy".to_string(), levy.to_string()),
        ("orders".into(), a.orders.as_ref().map(|l| join(&l.0)).unwrap_or_else(|| "default".into())),
        ("eps".into(), join(&a.eps.0)),
    ];
    let t = table(rows, 0, config, started);
    report::ensure_writable(out)?;
    report::write_summary(&out.join(report::SUMMARY_FILE), &t)?;
    finish(t)
}

fn report_dir(dir: &Path) -> Outcome {
    let found = report::collect_summaries(dir)?;
    if found.is_empty() {
        return Err(Failure::Usage(format!("no {} found under {}", report::SUMMARY_FILE, dir.display())));
    }
    let mut first = None;
    for (path, table) in &found {
        println!("== {}", path.display());
        print!("{}", report::format_table(table));
        if first.is_none() {
            if let Some(r) = table.first_failure() {
                first = Some(format!("FAILED row {} in {}", r.id, path.display()));
            }
        }
    }
    match first {
        None => Ok(()),
        Some(msg) => Err(Failure::Rows(msg)),
    }
}
