//! The `normkit` command line: every instrument as a subcommand, CSV or JSON
//! output.
//!
//! Exit codes: 0 success, 1 usage or operational error, 2 infeasible
//! configuration, 3 numerical failure (including a failed check).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checks::{self, GradCheckReport};
use crate::constraints::{
    constraint_count, constraint_rank_oracle, feasibility_bound, ConstraintError, NormMethod, DEFAULT_RANK_TRIALS,
};
use crate::harness::{self, best_over_learning_rates, curve_rows, ExperimentSpec, HarnessError};
use crate::linalg::Mat;
use crate::metrics::{
    self, bivariate_histogram, condition_number_p, read_feature_csv, MetricRow, MetricsError,
    DEFAULT_DIVERSITY_BINS, DEFAULT_DIVERSITY_PAIRS,
};
use crate::norm::{suggest_group_count, BwStatsMode, NormError, NormKind, NormLayer};
use crate::whitening::{WhiteningConfig, WhiteningError, WhiteningMethod, DEFAULT_EPS, DEFAULT_ITERATIONS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "normkit", version, about = "Normalization and whitening layers with their analysis instruments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Seed for every random draw.
    #[arg(long, env = "NORMKIT_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Write results here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the grouped-output whitening constraints of GW on random inputs.
    WhitenCheck(WhitenCheckArgs),
    /// Compare analytic layer gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Constraint numbers, feasibility and the optional rank certificate.
    Constraints(ConstraintsArgs),
    /// Percentile condition numbers of (normalized) features.
    Conditioning(ConditioningArgs),
    /// Entropy-based diversity of (normalized) features.
    Diversity(DiversityArgs),
    /// Dense 2-D histogram of two feature dimensions.
    Histogram(HistogramArgs),
    /// Run an experiment grid and write long-format accuracies.
    Sweep(SweepArgs),
    /// Run an experiment grid on uniformly random labels.
    FitRandomLabels(SweepArgs),
}

#[derive(Debug, Args)]
pub struct WhitenCheckArgs {
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub g: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Zca)]
    pub method: MethodArg,
    /// ItN iterations.
    #[arg(long = "T", default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = checks::CHECK_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Redraw inputs whose grouped covariance has a larger condition number.
    #[arg(long)]
    pub max_kappa: Option<f64>,
    #[arg(long, default_value_t = checks::MEAN_TOL)]
    pub mean_tol: f64,
    /// Defaults to 1e-6 for ZCA and 5e-3 for ItN.
    #[arg(long)]
    pub cov_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Zca,
    Itn,
}

impl From<MethodArg> for WhiteningMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Zca => WhiteningMethod::Zca,
            MethodArg::Itn => WhiteningMethod::Itn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerArg {
    Bn,
    Ln,
    Gn,
    Bw,
    Gw,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Layers to check; all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub layer: Vec<LayerArg>,
    /// Whitening methods for bw/gw; both when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub g: usize,
    #[arg(long = "T", default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Seeds `seed..seed+trials`.
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    /// Use an input that is constant across the batch.
    #[arg(long)]
    pub degenerate: bool,
    #[arg(long, default_value_t = checks::GRAD_REL_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ConstraintsArgs {
    /// Methods to report; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<NormMethod>,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub m: usize,
    /// Group count for gn/gw.
    #[arg(long, default_value_t = 1)]
    pub g: usize,
    /// Dataset size for the dataset-level count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also compute the numerical rank of the constraint Jacobian.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = DEFAULT_RANK_TRIALS)]
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    None,
    Bn,
    Ln,
    Gn,
    BwZca,
    BwItn,
    GwZca,
    GwItn,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// CSV of samples (rows) by dimensions (columns). Without it, Gaussian
    /// features pushed through a random ReLU network are generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Depth of the random network applied to generated features.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Normalization applied before measuring.
    #[arg(long, value_enum, default_value_t = NormArg::None)]
    pub norm: NormArg,
    /// Group counts for gn/gw (one result set each).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub g: Vec<usize>,
    #[arg(long = "T", default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct ConditioningArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    pub p: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long, default_value_t = DEFAULT_DIVERSITY_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_DIVERSITY_PAIRS)]
    pub pairs: usize,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    /// The two dimensions, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "0,1")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_DIVERSITY_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Emit the best accuracy over learning rates instead of every epoch.
    #[arg(long)]
    pub best: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Infeasible(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<NormError> for CliError {
    fn from(e: NormError) -> Self {
        match e {
            NormError::GroupDivisibility { .. } | NormError::Infeasible(_) => CliError::Infeasible(e.to_string()),
            NormError::NonFinite(_) | NormError::Linalg(_) => CliError::Numerical(e.to_string()),
            NormError::Whitening(WhiteningError::InvalidConfig(_)) => CliError::Usage(e.to_string()),
            NormError::Whitening(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ConstraintError> for CliError {
    fn from(e: ConstraintError) -> Self {
        match e {
            ConstraintError::GroupDivisibility { .. } | ConstraintError::Infeasible(_) => {
                CliError::Infeasible(e.to_string())
            }
            ConstraintError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            ConstraintError::Norm(n) => n.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Linalg(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Norm(n) => n.into(),
            HarnessError::Diverged(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn emit<T: Serialize>(rows: &[T], format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, rows).map_err(|e| CliError::Usage(e.to_string()))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct WhitenCheckRow {
    method: String,
    d: usize,
    g: usize,
    iterations: usize,
    eps: f64,
    samples: usize,
    max_mean_violation: f64,
    max_cov_violation: f64,
    mean_tol: f64,
    cov_tol: f64,
    pass: bool,
}

fn whiten_check(a: &WhitenCheckArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let bound = feasibility_bound(NormMethod::Gw, a.d);
    if a.g == 0 || !bound.admits(a.g) {
        return Err(CliError::Infeasible(format!("g={} is infeasible for {bound}", a.g)));
    }
    if a.d % a.g != 0 {
        return Err(CliError::Infeasible(format!(
            "g={} does not divide d={}; nearest valid group count is {}",
            a.g,
            a.d,
            suggest_group_count(a.d, a.g)
        )));
    }
    let method: WhiteningMethod = a.method.into();
    let cfg = WhiteningConfig { method, eps: a.eps, iterations: a.iterations, ..WhiteningConfig::default() };
    let cov_tol = a.cov_tol.unwrap_or(match method {
        WhiteningMethod::Zca => checks::COV_TOL,
        WhiteningMethod::Itn => checks::ITN_COV_TOL,
    });
    let r = checks::whiten_check(a.d, a.g, &cfg, a.samples, a.max_kappa, seed)?;
    let pass = r.within(a.mean_tol, cov_tol);
    let row = WhitenCheckRow {
        method: format!("gw-{method}"),
        d: a.d,
        g: a.g,
        iterations: a.iterations,
        eps: a.eps,
        samples: a.samples,
        max_mean_violation: r.max_mean_violation,
        max_cov_violation: r.max_cov_violation,
        mean_tol: a.mean_tol,
        cov_tol,
        pass,
    };
    emit(&[row], format, out)?;
    Ok(if pass { EXIT_OK } else { EXIT_NUMERICAL })
}

#[derive(Debug, Serialize)]
struct GradCheckRow {
    layer: String,
    d: usize,
    m: usize,
    g: usize,
    seed: u64,
    compared: usize,
    max_rel_err: f64,
    analytic_finite: bool,
    pass: bool,
}

impl GradCheckRow {
    fn new(r: GradCheckReport, tol: f64) -> Self {
        let pass = r.passes(tol);
        GradCheckRow {
            layer: r.layer,
            d: r.d,
            m: r.m,
            g: r.g,
            seed: r.seed,
            compared: r.compared,
            max_rel_err: r.max_rel_err,
            analytic_finite: r.analytic_finite,
            pass,
        }
    }
}

fn grad_check(a: &GradCheckArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let layers =
        if a.layer.is_empty() { vec![LayerArg::Bn, LayerArg::Ln, LayerArg::Gn, LayerArg::Bw, LayerArg::Gw] } else { a.layer.clone() };
    let methods = if a.method.is_empty() { vec![MethodArg::Zca, MethodArg::Itn] } else { a.method.clone() };
    let mut kinds = Vec::new();
    for l in layers {
        match l {
            LayerArg::Bn => kinds.push(NormKind::Bn),
            LayerArg::Ln => kinds.push(NormKind::Ln),
            LayerArg::Gn => kinds.push(NormKind::Gn { groups: a.g }),
            LayerArg::Bw => kinds.extend(methods.iter().map(|&m| NormKind::Bw {
                method: m.into(),
                iterations: a.iterations,
                group_channels: None,
                stats: BwStatsMode::Whitener,
            })),
            LayerArg::Gw => kinds.extend(
                methods.iter().map(|&m| NormKind::Gw { groups: a.g, method: m.into(), iterations: a.iterations }),
            ),
        }
    }
    let mut rows = Vec::new();
    for kind in kinds {
        for s in seed..seed + a.trials {
            rows.push(GradCheckRow::new(checks::grad_check(kind, a.d, a.m, a.eps, a.degenerate, s)?, a.tol));
        }
    }
    emit(&rows, format, out)?;
    Ok(if rows.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    })
}

#[derive(Debug, Serialize)]
struct ConstraintRow {
    method: NormMethod,
    d: usize,
    m: usize,
    g: usize,
    zeta: u64,
    zeta_dataset: Option<f64>,
    chi: u64,
    feasible: bool,
    rank: Option<usize>,
    bound: String,
}

fn constraints(a: &ConstraintsArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let methods = if a.method.is_empty() { NormMethod::ALL.to_vec() } else { a.method.clone() };
    let mut rows = Vec::new();
    for method in methods {
        let g = if method.uses_groups() { a.g } else { 1 };
        let r = constraint_count(method, a.d, a.m, g, a.n)?;
        let rank = if a.oracle && r.feasible {
            Some(constraint_rank_oracle(method, a.d, a.m, g, a.trials, seed)?)
        } else {
            None
        };
        rows.push(ConstraintRow {
            method,
            d: r.d,
            m: r.m,
            g: r.g,
            zeta: r.zeta_batch,
            zeta_dataset: r.zeta_dataset,
            chi: r.chi,
            feasible: r.feasible,
            rank,
            bound: feasibility_bound(method, a.d).to_string(),
        });
    }
    emit(&rows, format, out)?;
    Ok(EXIT_OK)
}

fn norm_kind(arg: NormArg, g: usize, iterations: usize) -> NormKind {
    let bw = |method| NormKind::Bw { method, iterations, group_channels: None, stats: BwStatsMode::Whitener };
    match arg {
        NormArg::None => NormKind::None,
        NormArg::Bn => NormKind::Bn,
        NormArg::Ln => NormKind::Ln,
        NormArg::Gn => NormKind::Gn { groups: g },
        NormArg::BwZca => bw(WhiteningMethod::Zca),
        NormArg::BwItn => bw(WhiteningMethod::Itn),
        NormArg::GwZca => NormKind::Gw { groups: g, method: WhiteningMethod::Zca, iterations },
        NormArg::GwItn => NormKind::Gw { groups: g, method: WhiteningMethod::Itn, iterations },
    }
}

/// The features, then one `(label, normalized features)` pair per group
/// count (a single pair for methods without groups).
fn load_features(a: &FeatureArgs, seed: u64) -> Result<Vec<(String, Mat)>, CliError> {
    let raw = match &a.input {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            read_feature_csv(f)?
        }
        None => {
            if a.d == 0 || a.n == 0 {
                return Err(CliError::Usage("--d and --n must be positive".into()));
            }
            harness::gen_gaussian_features(a.d, a.n, a.depth, seed)
        }
    };
    let groups: Vec<usize> = match a.norm {
        NormArg::Gn | NormArg::GwZca | NormArg::GwItn => a.g.clone(),
        _ => vec![0],
    };
    let mut out = Vec::new();
    for g in groups {
        let kind = norm_kind(a.norm, g, a.iterations);
        let label = if kind.group_count() > 0 { format!("{kind} g={g}") } else { kind.to_string() };
        let y = match kind {
            NormKind::None => raw.clone(),
            _ => NormLayer::with_eps(kind, raw.rows(), a.eps)?.forward_train(&raw)?.0,
        };
        out.push((label, y));
    }
    Ok(out)
}

fn conditioning(a: &ConditioningArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut rows = Vec::new();
    for (config, y) in load_features(&a.features, seed)? {
        for &p in &a.p {
            let r = condition_number_p(&y, p)?;
            let metric = |name: &str| format!("{name}_{p}");
            rows.push(MetricRow { config: config.clone(), metric: metric("kappa"), seed, value: r.kappa_p });
            rows.push(MetricRow { config: config.clone(), metric: metric("rank"), seed, value: r.rank as f64 });
        }
    }
    emit(&rows, format, out)?;
    Ok(EXIT_OK)
}

fn diversity(a: &DiversityArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut rows = Vec::new();
    for (config, y) in load_features(&a.features, seed)? {
        let r = metrics::diversity(&y, a.bins, a.pairs, seed)?;
        rows.push(MetricRow { config: config.clone(), metric: "gamma".into(), seed, value: r.gamma });
        rows.push(MetricRow { config: config.clone(), metric: "pairs".into(), seed, value: r.pair_count as f64 });
        rows.push(MetricRow { config, metric: "constant_dims".into(), seed, value: r.constant_dims.len() as f64 });
    }
    emit(&rows, format, out)?;
    Ok(EXIT_OK)
}

fn histogram(a: &HistogramArgs, seed: u64, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let [da, db] = a.dims[..] else {
        return Err(CliError::Usage(format!("--dims takes exactly two dimensions, got {:?}", a.dims)));
    };
    let features = load_features(&a.features, seed)?;
    if features.len() != 1 {
        return Err(CliError::Usage("histogram takes a single group count".into()));
    }
    let h = bivariate_histogram(&features[0].1, (da, db), a.bins)?;
    match format {
        Format::Csv => h.write_csv(&mut *out)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &h).map_err(|e| CliError::Usage(e.to_string()))?;
            writeln!(out)?;
        }
    }
    Ok(EXIT_OK)
}

fn sweep(a: &SweepArgs, random_labels: Option<u64>, format: Format, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut spec = ExperimentSpec::from_toml_file(&a.config)?;
    if let Some(label_seed) = random_labels {
        spec.data.random_labels = true;
        spec.data.label_seed = label_seed;
    }
    let rows = curve_rows(&harness::sweep(&spec, a.jobs)?);
    if a.best {
        emit(&best_over_learning_rates(&rows), format, out)?;
    } else {
        emit(&rows, format, out)?;
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let (seed, format) = (cli.seed, cli.format);
    match &cli.command {
        Command::WhitenCheck(a) => whiten_check(a, seed, format, out),
        Command::GradCheck(a) => grad_check(a, seed, format, out),
        Command::Constraints(a) => constraints(a, seed, format, out),
        Command::Conditioning(a) => conditioning(a, seed, format, out),
        Command::Diversity(a) => diversity(a, seed, format, out),
        Command::Histogram(a) => histogram(a, seed, format, out),
        Command::Sweep(a) => sweep(a, None, format, out),
        Command::FitRandomLabels(a) => sweep(a, Some(seed), format, out),
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing results to `out` (or `--output`) and diagnostics to `err`.
/// Returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match &cli.output {
        Some(path) => match File::create(path) {
            Ok(f) => {
                let mut w = BufWriter::new(f);
                dispatch(&cli, &mut w).and_then(|code| w.flush().map(|_| code).map_err(CliError::from))
            }
            Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
        },
        None => dispatch(&cli, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Runs with the process arguments, stdout and stderr.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
