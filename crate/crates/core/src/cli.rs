//! Command-line front end: `experiment`, `fit` and `selftest`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimators::{
    adsgd_run, avsgd_run, gamma_moment_init, mle_fit, one_step, sgd_run, BoundaryPolicy, EstimateResult,
    MleOptions, RecursionOptions, StepSchedule,
};
use crate::linalg::ParamVector;
use crate::models::{model_by_name, Exponential, Model, Normal, NormalMean, RandomState};
use crate::montecarlo::{run_experiment, EstimatorKind, ExperimentConfig, ExperimentReport, InitPolicy};
use crate::special;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "onestep", version, about = "One-step Fisher-scoring correction of SGD: experiments and fits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a replicated Monte Carlo comparison of estimators.
    Experiment(ExperimentArgs),
    /// Fit one estimator on one sample (simulated or read from a file).
    Fit(FitArgs),
    /// Run the fast invariant checks.
    Selftest,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Model family: gamma, normal or exponential.
    #[arg(long, default_value = "gamma")]
    pub model: String,
    /// True parameter, comma separated (default: 2,1 for gamma, 0,1 for normal, 2 for exponential).
    #[arg(long, value_parser = parse_theta, allow_hyphen_values = true)]
    pub theta: Option<ParamVector>,
    /// Sample size.
    #[arg(long, default_value_t = 10_000, value_parser = parse_sample_size)]
    pub n: usize,
    /// SGD step exponent, gamma_i = i^-r with 0.5 < r < 1.
    #[arg(long, default_value_t = 0.6, value_parser = parse_r)]
    pub r: f64,
    /// Step constant for sgd_c, gamma_i = c / i.
    #[arg(long, value_parser = parse_positive)]
    pub c: Option<f64>,
    /// Master seed.
    #[arg(long, env = "ONESTEP_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Mean-score tolerance of the MLE.
    #[arg(long = "tol-mle", default_value_t = 1e-9, value_parser = parse_positive)]
    pub tol_mle: f64,
    /// Iteration cap of the MLE.
    #[arg(long = "max-iter-mle", default_value_t = 200)]
    pub max_iter_mle: usize,
    /// Starting point: default, moments (gamma only) or a comma separated point.
    #[arg(long, default_value = "default", value_parser = parse_init, allow_hyphen_values = true)]
    pub init: InitPolicy,
    /// Fraction of leading SGD iterates dropped before averaging.
    #[arg(long = "burn-in", default_value_t = 0.0)]
    pub burn_in: f64,
    /// Per-step ratio bound k on positive coordinates, or "off" for projection only.
    #[arg(long = "step-guard", default_value = "2", value_parser = parse_guard)]
    pub step_guard: BoundaryPolicy,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of replications.
    #[arg(long = "B", default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: u64,
    /// Estimators to run: any of mle,sgd,ossgd,avsgd,adsgd,sgd_c, or "none".
    #[arg(long, default_value = "mle,sgd,ossgd,avsgd,adsgd", value_parser = parse_estimators)]
    pub estimators: EstimatorList,
    /// Output prefix; writes <out>.summary.csv and <out>.errors.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Write NA instead of wall times.
    #[arg(long = "no-timing")]
    pub no_timing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Estimator: mle, sgd, ossgd, avsgd, adsgd or sgd_c.
    #[arg(long, default_value = "ossgd")]
    pub estimator: EstimatorKind,
    /// Read observations (whitespace separated) from a file instead of simulating.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstimatorList(pub Vec<EstimatorKind>);

/// A parsed and validated command line.
#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Experiment { config: ExperimentConfig, out: Option<PathBuf>, timing: bool },
    Fit { config: ExperimentConfig, estimator: EstimatorKind, data: Option<PathBuf> },
    Selftest,
}

/// Failure to parse; `exit_code` is 0 for `--help`/`--version`.
#[derive(Debug)]
pub struct UsageError {
    pub message: String,
    pub exit_code: i32,
}

fn parse_theta(s: &str) -> std::result::Result<ParamVector, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("malformed theta component {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ParamVector::new(values).map_err(|e| e.to_string())
}

fn parse_sample_size(s: &str) -> std::result::Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("invalid sample size {s:?}"))?;
    if n < 2 {
        return Err(format!("n must be >= 2, got {n}"));
    }
    Ok(n)
}

fn parse_r(s: &str) -> std::result::Result<f64, String> {
    let r: f64 = s.parse().map_err(|_| format!("invalid exponent {s:?}"))?;
    StepSchedule::polynomial(r).map_err(|e| e.to_string())?;
    Ok(r)
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(format!("expected a positive finite number, got {s}"));
    }
    Ok(v)
}

fn parse_init(s: &str) -> std::result::Result<InitPolicy, String> {
    match s {
        "default" => Ok(InitPolicy::ModelDefault),
        "moments" => Ok(InitPolicy::Moments),
        _ => parse_theta(s).map(InitPolicy::Point),
    }
}

fn parse_guard(s: &str) -> std::result::Result<BoundaryPolicy, String> {
    if s == "off" {
        return Ok(BoundaryPolicy::Project);
    }
    let k: f64 = s.parse().map_err(|_| format!("invalid step guard {s:?}"))?;
    if !(k > 1.0 && k.is_finite()) {
        return Err(format!("step guard must be > 1 or \"off\", got {s}"));
    }
    Ok(BoundaryPolicy::RatioGuard(k))
}

fn parse_estimators(s: &str) -> std::result::Result<EstimatorList, String> {
    if s.is_empty() || s == "none" {
        return Ok(EstimatorList(Vec::new()));
    }
    let mut out = Vec::new();
    for id in s.split(',') {
        let kind = EstimatorKind::from_str(id.trim()).map_err(|e| e.to_string())?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(EstimatorList(out))
}

fn default_theta(model: &str) -> Result<ParamVector> {
    let v = match model {
        "gamma" => vec![2.0, 1.0],
        "normal" => vec![0.0, 1.0],
        "exponential" => vec![2.0],
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    ParamVector::new(v)
}

fn build_config(common: &CommonArgs, replications: usize, estimators: Vec<EstimatorKind>, threads: Option<usize>) -> Result<ExperimentConfig> {
    let theta_true = match &common.theta {
        Some(t) => t.clone(),
        None => default_theta(&common.model)?,
    };
    let config = ExperimentConfig {
        model: common.model.clone(),
        theta_true,
        n: common.n,
        replications,
        r: common.r,
        c: common.c,
        estimators,
        master_seed: common.seed,
        init_policy: common.init.clone(),
        tol_mle: common.tol_mle,
        max_iter_mle: common.max_iter_mle,
        burn_in_fraction: common.burn_in,
        boundary: common.step_guard,
        threads,
    };
    config.validate()?;
    Ok(config)
}

/// Parses and validates `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> std::result::Result<Invocation, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let exit_code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_USAGE,
        };
        UsageError { message: e.render().to_string(), exit_code }
    })?;
    let usage = |e: Error| UsageError { message: format!("error: {e}\n"), exit_code: EXIT_USAGE };
    match cli.command {
        Command::Experiment(args) => {
            let config = build_config(
                &args.common,
                args.replications as usize,
                args.estimators.0.clone(),
                args.threads.map(|t| t as usize),
            )
            .map_err(usage)?;
            Ok(Invocation::Experiment { config, out: args.out, timing: !args.no_timing })
        }
        Command::Fit(args) => {
            let config = build_config(&args.common, 1, vec![args.estimator], None).map_err(usage)?;
            Ok(Invocation::Fit { config, estimator: args.estimator, data: args.data })
        }
        Command::Selftest => Ok(Invocation::Selftest),
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Single-line `experiment ...` command reproducing `config` when parsed.
pub fn config_banner(config: &ExperimentConfig) -> String {
    let estimators = if config.estimators.is_empty() {
        "none".to_string()
    } else {
        config.estimators.iter().map(|k| k.id()).collect::<Vec<_>>().join(",")
    };
    let guard = match config.boundary {
        BoundaryPolicy::Project => "off".to_string(),
        BoundaryPolicy::RatioGuard(k) => k.to_string(),
    };
    let tol = format!("{:e}", config.tol_mle);
    let mut s = format!(
        "experiment --model {} --theta {} --n {} --B {} --r {} --estimators {} --seed {} --init {} --tol-mle {} --max-iter-mle {} --burn-in {} --step-guard {}",
        config.model,
        join_floats(config.theta_true.as_slice()),
        config.n,
        config.replications,
        config.r,
        estimators,
        config.master_seed,
        config.init_policy,
        tol,
        config.max_iter_mle,
        config.burn_in_fraction,
        guard,
    );
    if let Some(c) = config.c {
        write!(s, " --c {c}").unwrap();
    }
    if let Some(t) = config.threads {
        write!(s, " --threads {t}").unwrap();
    }
    s
}

/// Inverse of [`config_banner`].
pub fn parse_banner(banner: &str) -> std::result::Result<ExperimentConfig, UsageError> {
    let argv = std::iter::once("onestep").chain(banner.split_whitespace());
    match parse_args(argv)? {
        Invocation::Experiment { config, .. } => Ok(config),
        _ => Err(UsageError { message: "banner is not an experiment command\n".into(), exit_code: EXIT_USAGE }),
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_else(|| "NA".into())
}

fn prefixed(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub const SUMMARY_HEADER: &str = "estimator,param_i,param_j,scaled_second_moment,target,bias_i,total_time_s,excluded";
pub const ERRORS_HEADER: &str = "replication,estimator,coord,raw_error,scaled_sqrt_n,scaled_n_r2";

/// Text of `<out>.summary.csv`.
pub fn summary_csv(report: &ExperimentReport, timing: bool) -> String {
    let mut s = String::new();
    s.push_str(SUMMARY_HEADER);
    s.push('\n');
    let p = report.config.theta_true.dim();
    for summary in &report.summaries {
        let time = if timing { fmt_num(summary.total_wall_time) } else { "NA".into() };
        for i in 0..p {
            for j in 0..p {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    summary.estimator.id(),
                    i,
                    j,
                    fmt_opt(summary.scaled_second_moment.as_ref().map(|m| m.get(i, j))),
                    fmt_opt(summary.target.as_ref().map(|m| m.get(i, j))),
                    fmt_opt(summary.bias.as_ref().map(|b| b[i])),
                    time,
                    summary.excluded,
                )
                .unwrap();
            }
        }
    }
    s
}

/// Text of `<out>.errors.csv`; SGD rows carry both renormalizations.
pub fn errors_csv(report: &ExperimentReport) -> String {
    let n = report.config.n as f64;
    let sqrt_n = n.sqrt();
    let n_r2 = n.powf(report.config.r / 2.0);
    let mut s = String::new();
    s.push_str(ERRORS_HEADER);
    s.push('\n');
    for row in &report.rows {
        for (coord, &e) in row.raw_error.as_slice().iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                row.replication,
                row.estimator,
                coord,
                fmt_num(e),
                fmt_num(e * sqrt_n),
                fmt_num(e * n_r2)
            )
            .unwrap();
        }
    }
    s
}

/// Human-readable comparison with estimators as columns, in table order.
pub fn summary_table(report: &ExperimentReport, timing: bool) -> String {
    let width = 14;
    let mut s = String::new();
    write!(s, "{:<22}", "").unwrap();
    for summary in &report.summaries {
        write!(s, "{:>width$}", summary.estimator.id().to_uppercase()).unwrap();
    }
    s.push('\n');
    let mut line = |label: &str, cell: &dyn Fn(&crate::montecarlo::EstimatorSummary) -> String| {
        write!(s, "{label:<22}").unwrap();
        for summary in &report.summaries {
            write!(s, "{:>width$}", cell(summary)).unwrap();
        }
        s.push('\n');
    };
    line("time (s)", &|e| if timing { format!("{:.2}", e.total_wall_time) } else { "NA".into() });
    line("rel. dist. to target", &|e| e.relative_distance().map_or("NA".into(), |d| format!("{d:.4}")));
    line("scale exponent", &|e| format!("{}", e.scale_exponent));
    line("excluded", &|e| e.excluded.to_string());
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes `<out>.summary.csv` and `<out>.errors.csv` when `out` is given and
/// returns the stdout summary table.
pub fn emit_report(report: &ExperimentReport, out: Option<&Path>, timing: bool) -> Result<String> {
    if let Some(out) = out {
        write_file(&prefixed(out, ".summary.csv"), &summary_csv(report, timing))?;
        write_file(&prefixed(out, ".errors.csv"), &errors_csv(report))?;
    }
    Ok(summary_table(report, timing))
}

fn read_data(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad observation {t:?}"))))
        .collect()
}

/// Runs one estimator with the options carried by `config`.
pub fn fit_one(model: &dyn Model, xs: &[f64], estimator: EstimatorKind, config: &ExperimentConfig) -> Result<EstimateResult> {
    let init = match &config.init_policy {
        InitPolicy::ModelDefault => model.default_init(),
        InitPolicy::Point(p) => p.clone(),
        InitPolicy::Moments => gamma_moment_init(xs)?,
    };
    let opts = RecursionOptions { boundary: config.boundary, record_trace: false };
    let schedule = StepSchedule::polynomial(config.r)?;
    match estimator {
        EstimatorKind::Mle => {
            mle_fit(model, xs, &init, &MleOptions { tol: config.tol_mle, max_iter: config.max_iter_mle })
        }
        EstimatorKind::Sgd => sgd_run(model, xs, schedule, &init, &opts),
        EstimatorKind::Ossgd => {
            let started = Instant::now();
            let guess = sgd_run(model, xs, schedule, &init, &opts)?;
            let mut res = one_step(model, xs, &guess.estimate)?;
            res.iterations += guess.iterations;
            res.wall_time = started.elapsed().as_secs_f64();
            Ok(res)
        }
        EstimatorKind::Avsgd => avsgd_run(model, xs, schedule, &init, config.burn_in_fraction, &opts),
        EstimatorKind::Adsgd => adsgd_run(model, xs, &init, &opts),
        EstimatorKind::SgdC => {
            let c = config.c.ok_or_else(|| Error::InvalidConfig("sgd_c needs --c".into()))?;
            sgd_run(model, xs, StepSchedule::scaled_harmonic(c)?, &init, &opts)
        }
    }
}

fn run_fit(config: &ExperimentConfig, estimator: EstimatorKind, data: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let model = model_by_name(&config.model)?;
    let xs = match data {
        Some(path) => read_data(path)?,
        None => model.sample(&config.theta_true, config.n, &mut RandomState::new(config.master_seed))?,
    };
    let res = fit_one(model.as_ref(), &xs, estimator, config)?;
    writeln!(out, "model      {}", config.model)?;
    if data.is_none() {
        writeln!(out, "theta_true {}", config.theta_true)?;
    }
    writeln!(out, "n          {}", xs.len())?;
    writeln!(out, "estimator  {estimator}")?;
    writeln!(out, "estimate   {}", res.estimate)?;
    writeln!(out, "iterations {}", res.iterations)?;
    writeln!(out, "time_s     {:.6}", res.wall_time)?;
    for (k, v) in &res.diagnostics {
        writeln!(out, "{k:<10} {v}")?;
    }
    Ok(())
}

/// Special functions under test by [`selftest_with`]; swap one out to check
/// that the suite catches it.
#[derive(Clone, Copy)]
pub struct SpecialFns {
    pub ln_gamma: fn(f64) -> f64,
    pub digamma: fn(f64) -> f64,
    pub trigamma: fn(f64) -> f64,
}

impl Default for SpecialFns {
    fn default() -> Self {
        SpecialFns { ln_gamma: special::ln_gamma, digamma: special::digamma, trigamma: special::trigamma }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(id: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult { id, passed: worst <= tol, detail: format!("max deviation {worst:.3e} (tol {tol:.0e})") }
}

fn log_grid() -> impl Iterator<Item = f64> {
    (0..=60).map(|k| 0.1 * 1000f64.powf(k as f64 / 60.0))
}

fn max_over(xs: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64) -> f64 {
    xs.map(f).fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn worst_of(results: impl Iterator<Item = Result<f64>>) -> f64 {
    results.map(|r| r.unwrap_or(f64::INFINITY)).fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

/// Runs the invariant suite against the given special functions.
pub fn selftest_with(sf: &SpecialFns) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());

    out.push(check(
        "special.lgamma_recurrence",
        max_over(log_grid(), |x| rel((sf.ln_gamma)(x + 1.0), (sf.ln_gamma)(x) + x.ln())),
        1e-12,
    ));
    out.push(check(
        "special.digamma_recurrence",
        max_over(log_grid(), |x| rel((sf.digamma)(x + 1.0), (sf.digamma)(x) + 1.0 / x)),
        1e-12,
    ));
    out.push(check(
        "special.trigamma_recurrence",
        max_over(log_grid(), |x| rel((sf.trigamma)(x + 1.0), (sf.trigamma)(x) - 1.0 / (x * x))),
        1e-12,
    ));
    let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
    out.push(check("special.trigamma_at_one", rel((sf.trigamma)(1.0), pi2_6), 1e-14));
    out.push(check("special.digamma_at_one", rel((sf.digamma)(1.0), -0.577_215_664_901_532_9), 1e-14));
    out.push(check(
        "special.lgamma_derivative",
        max_over(log_grid().filter(|&x| x >= 0.5), |x| {
            let h = 1e-5 * x;
            let fd = ((sf.ln_gamma)(x + h) - (sf.ln_gamma)(x - h)) / (2.0 * h);
            rel(fd, (sf.digamma)(x))
        }),
        1e-6,
    ));

    let mut rng = RandomState::new(20_240_601);
    let gamma_point = |a: f64, b: f64| ParamVector::new(vec![a, b]).unwrap();
    let gradient_worst = worst_of([(0.7, 1.3), (2.0, 1.0), (5.0, 0.4)].into_iter().flat_map(|(a, b)| {
        let u = gamma_point(a, b);
        let g = crate::models::Gamma;
        let xs = g.sample(&u, 5, &mut rng).unwrap();
        xs.into_iter()
            .map(|x| {
                let s = g.score(&u, x)?;
                let mut worst: f64 = 0.0;
                for k in 0..2 {
                    let h = 1e-6 * u[k];
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (g.log_density(&up, x)? - g.log_density(&dn, x)?) / (2.0 * h);
                    worst = worst.max((fd - s[k]).abs() / (1.0 + s[k].abs()));
                }
                Ok(worst)
            })
            .collect::<Vec<_>>()
    }));
    out.push(check("models.gamma_score_gradient", gradient_worst, 1e-5));

    let fisher_worst = worst_of([(0.7, 1.3), (2.0, 1.0), (5.0, 0.4)].into_iter().map(|(a, b)| {
        let i = crate::models::Gamma.fisher_information(&gamma_point(a, b))?;
        let expected = [(sf.trigamma)(a), -1.0 / b, a / (b * b)];
        Ok([i.get(0, 0), i.get(0, 1), i.get(1, 1)]
            .iter()
            .zip(expected)
            .map(|(&got, want)| rel(got, want))
            .fold(0.0, f64::max))
    }));
    out.push(check("models.gamma_fisher_trigamma", fisher_worst, 1e-12));

    let exp_worst = worst_of((0..20).map(|k| {
        let xs = Exponential.sample(&ParamVector::new(vec![0.5 + k as f64 * 0.2])?, 30, &mut rng)?;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let fit = mle_fit(&Exponential, &xs, &Exponential.default_init(), &MleOptions::default())?;
        Ok(rel(fit.estimate[0], 1.0 / mean))
    }));
    out.push(check("mle.exponential_closed_form", exp_worst, 1e-8));

    let normal_worst = worst_of((0..20).map(|k| {
        let xs = Normal.sample(&ParamVector::new(vec![k as f64 - 10.0, 0.5 + k as f64 * 0.1])?, 30, &mut rng)?;
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
        let fit = mle_fit(&Normal, &xs, &Normal.default_init(), &MleOptions::default())?;
        Ok(rel(fit.estimate[0], mean).max(rel(fit.estimate[1], var)))
    }));
    out.push(check("mle.normal_closed_form", normal_worst, 1e-8));

    let os_worst = worst_of((0..20).map(|k| {
        let model = NormalMean::new(0.5 + k as f64 * 0.3)?;
        let xs = model.sample(&ParamVector::new(vec![3.0 - k as f64])?, 25, &mut rng)?;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let guess = ParamVector::new(vec![k as f64 * 7.0 - 50.0])?;
        let res = one_step(&model, &xs, &guess)?;
        Ok((res.estimate[0] - mean).abs())
    }));
    out.push(check("one_step.normal_mean_exact", os_worst, 1e-12));
    out
}

pub fn selftest() -> Vec<CheckResult> {
    selftest_with(&SpecialFns::default())
}

/// Runs the command line `argv`, writing to `out`/`err`; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let invocation = match parse_args(argv) {
        Ok(inv) => inv,
        Err(e) => {
            let target: &mut dyn Write = if e.exit_code == EXIT_OK { out } else { err };
            let _ = target.write_all(e.message.as_bytes());
            return e.exit_code;
        }
    };
    let outcome = match invocation {
        Invocation::Selftest => {
            let results = selftest();
            let mut all = true;
            for r in &results {
                all &= r.passed;
                let _ = writeln!(out, "{} {:<32} {}", if r.passed { "PASS" } else { "FAIL" }, r.id, r.detail);
            }
            let _ = writeln!(out, "{}/{} checks passed", results.iter().filter(|r| r.passed).count(), results.len());
            return if all { EXIT_OK } else { EXIT_RUNTIME };
        }
        Invocation::Fit { config, estimator, data } => run_fit(&config, estimator, data.as_deref(), out),
        Invocation::Experiment { config, out: path, timing } => {
            let _ = writeln!(out, "# {}", config_banner(&config));
            let _ = writeln!(out, "# rng {}", crate::models::RandomState::ALGORITHM);
            run_experiment(&config).and_then(|report| {
                let table = emit_report(&report, path.as_deref(), timing)?;
                out.write_all(table.as_bytes())?;
                for f in &report.failures {
                    writeln!(err, "replication {} {}: {}", f.replication, f.estimator, f.message)?;
                }
                if let Some(s) = report.summaries.iter().find(|s| s.used == 0) {
                    return Err(Error::InvalidConfig(format!(
                        "every replication of {} failed",
                        s.estimator
                    )));
                }
                Ok(())
            })
        }
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn argv(s: &str) -> Vec<String> {
        std::iter::once("onestep".to_string()).chain(s.split_whitespace().map(String::from)).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults() {
        let Invocation::Experiment { config, out, timing } = parse_args(argv("experiment")).unwrap() else {
            panic!("expected experiment");
        };
        assert_eq!(config, ExperimentConfig::gamma_default());
        assert!(out.is_none());
        assert!(timing);
    }

    #[test]
    fn spec_examples() {
        let inv = parse_args(argv(
            "experiment --model gamma --theta 2,1 --n 10000 --B 2000 --r 0.6 --seed 7 --out results.csv",
        ))
        .unwrap();
        match inv {
            Invocation::Experiment { config, out, .. } => {
                assert_eq!(config.master_seed, 7);
                assert_eq!(out.unwrap(), PathBuf::from("results.csv"));
            }
            _ => panic!(),
        }
        assert_eq!(parse_args(argv("experiment --r 1.5")).unwrap_err().exit_code, EXIT_USAGE);
        match parse_args(argv("fit --model exponential --theta 2 --n 100 --estimator ossgd")).unwrap() {
            Invocation::Fit { estimator, config, .. } => {
                assert_eq!(estimator, EstimatorKind::Ossgd);
                assert_eq!(config.n, 100);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn usage_errors() {
        for bad in [
            "experiment --B 0",
            "experiment --theta 2,x",
            "experiment --theta 2",
            "experiment --estimators mle,lbfgs",
            "experiment --bogus 1",
            "experiment --n 1",
            "experiment --r 0.5",
            "experiment --estimators sgd_c",
            "experiment --step-guard 1",
            "experiment --model exponential --init moments",
            "fit --model weibull",
            "",
        ] {
            let e = parse_args(argv(bad)).unwrap_err();
            assert_eq!(e.exit_code, EXIT_USAGE, "{bad}");
        }
        assert_eq!(parse_args(argv("--help")).unwrap_err().exit_code, EXIT_OK);
    }

    #[test]
    fn banner_round_trip() {
        for cmd in [
            "experiment",
            "experiment --model exponential --theta 2 --estimators sgd_c,mle --c 4 --B 500 --threads 3",
            "experiment --estimators none --init 1.5,0.25 --step-guard off --burn-in 0.1 --tol-mle 3e-10",
            "experiment --model normal --theta -1.25,0.3 --r 0.75 --seed 18446744073709551615",
        ] {
            let Invocation::Experiment { config, .. } = parse_args(argv(cmd)).unwrap() else { panic!() };
            let banner = config_banner(&config);
            assert_eq!(parse_banner(&banner).unwrap(), config, "{banner}");
        }
    }

    #[test]
    fn numbers_keep_seventeen_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
        let x = std::f64::consts::PI * 1e-7;
        assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn selftest_passes() {
        let results = selftest();
        assert!(results.len() >= 8);
        for r in &results {
            assert!(r.passed, "{} {}", r.id, r.detail);
        }
    }

    fn corrupted_trigamma(x: f64) -> f64 {
        special::trigamma(x) * (1.0 + 1e-6)
    }

    #[test]
    fn selftest_catches_corrupted_trigamma() {
        let sf = SpecialFns { trigamma: corrupted_trigamma, ..SpecialFns::default() };
        let failed: Vec<_> = selftest_with(&sf).into_iter().filter(|r| !r.passed).map(|r| r.id).collect();
        assert!(failed.contains(&"special.trigamma_recurrence"), "{failed:?}");
        assert!(!failed.contains(&"special.digamma_recurrence"));
    }
}
