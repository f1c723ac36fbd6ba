//! Replicated-experiment harness.
//!
//! Each replication `b` draws one sample from its own random stream
//! `(master_seed, b)` and runs every requested estimator on that sample.
//! SGD runs once per replication: its final iterate is the one-step guess
//! and its iterates feed the averaged estimator. Replications run in
//! parallel and are folded in index order, so the report does not depend on
//! scheduling (apart from wall times).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    adsgd_run, average_iterates, gamma_moment_init, mle_fit, one_step, sgd_run, BoundaryPolicy, MleOptions,
    RecursionOptions, StepSchedule,
};
use crate::linalg::{min_eigenvalue, spd_inverse, ParamVector, SymMatrix};
use crate::models::{model_by_name, Model, RandomState};

/// Estimators the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Mle,
    Sgd,
    Ossgd,
    Avsgd,
    Adsgd,
    /// SGD with `γᵢ = c / i`.
    SgdC,
}

impl EstimatorKind {
    /// Column order of the timing table; `sgd_c` goes last.
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Mle,
        EstimatorKind::Sgd,
        EstimatorKind::Ossgd,
        EstimatorKind::Avsgd,
        EstimatorKind::Adsgd,
        EstimatorKind::SgdC,
    ];

    pub const DEFAULT_SET: [EstimatorKind; 5] = [
        EstimatorKind::Mle,
        EstimatorKind::Sgd,
        EstimatorKind::Ossgd,
        EstimatorKind::Avsgd,
        EstimatorKind::Adsgd,
    ];

    pub fn id(self) -> &'static str {
        match self {
            EstimatorKind::Mle => "mle",
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::Ossgd => "ossgd",
            EstimatorKind::Avsgd => "avsgd",
            EstimatorKind::Adsgd => "adsgd",
            EstimatorKind::SgdC => "sgd_c",
        }
    }

    /// Exponent `e` of the error renormalization `n^e`.
    pub fn scale_exponent(self, r: f64) -> f64 {
        match self {
            EstimatorKind::Sgd => r / 2.0,
            _ => 0.5,
        }
    }

    fn uses_sgd_pass(self) -> bool {
        matches!(self, EstimatorKind::Sgd | EstimatorKind::Ossgd | EstimatorKind::Avsgd)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}

/// Label of the SGD rows produced only to feed `ossgd`/`avsgd`.
pub const INTERNAL_SGD_LABEL: &str = "sgd(internal)";

/// Renormalization factor of an estimator's error: `n^{r/2}` for plain SGD
/// (including its internal runs), `√n` otherwise.
pub fn error_scale(estimator: &str, n: usize, r: f64) -> Result<f64> {
    let exponent = if estimator == INTERNAL_SGD_LABEL {
        EstimatorKind::Sgd.scale_exponent(r)
    } else {
        estimator.parse::<EstimatorKind>()?.scale_exponent(r)
    };
    Ok((n as f64).powf(exponent))
}

/// Limit covariance of the renormalized error of `estimator` at `theta`:
/// `½ I_p` for `sgd`, `I(θ)⁻¹` for the efficient estimators, and
/// `c² I (2c I − I_p)⁻¹` for `sgd_c`, which needs `c > 1/(2 λ_min(I))`.
pub fn theoretical_targets(
    model: &dyn Model,
    theta: &ParamVector,
    estimator: EstimatorKind,
    c: Option<f64>,
) -> Result<SymMatrix> {
    let p = model.dim();
    let fisher = model.fisher_information(theta)?;
    match estimator {
        EstimatorKind::Sgd => Ok(SymMatrix::identity(p).scaled(0.5)),
        EstimatorKind::Mle | EstimatorKind::Ossgd | EstimatorKind::Avsgd | EstimatorKind::Adsgd => {
            spd_inverse(&fisher)
        }
        EstimatorKind::SgdC => {
            let c = c.ok_or_else(|| Error::InvalidConfig("sgd_c needs a step constant c".into()))?;
            let bound = 1.0 / (2.0 * min_eigenvalue(&fisher)?);
            if !(c > bound) {
                return Err(Error::StepConstantTooSmall { c, bound });
            }
            let shifted = fisher.scaled(2.0 * c).sub(&SymMatrix::identity(p));
            let inv = spd_inverse(&shifted)?;
            Ok(fisher.symmetric_product(&inv).scaled(c * c))
        }
    }
}

/// Starting point of the recursions and of the MLE.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    /// The model's fixed interior point (Gamma: (1, 1)).
    ModelDefault,
    Point(ParamVector),
    /// Gamma method of moments on the replication's sample.
    Moments,
}

impl InitPolicy {
    fn resolve(&self, model: &dyn Model, xs: &[f64]) -> Result<ParamVector> {
        match self {
            InitPolicy::ModelDefault => Ok(model.default_init()),
            InitPolicy::Point(p) => {
                model.check_domain(p)?;
                Ok(p.clone())
            }
            InitPolicy::Moments => {
                if model.name() != "gamma" {
                    return Err(Error::InvalidConfig(format!(
                        "moment initialization is only defined for gamma, not {}",
                        model.name()
                    )));
                }
                gamma_moment_init(xs)
            }
        }
    }
}

impl fmt::Display for InitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitPolicy::ModelDefault => f.write_str("default"),
            InitPolicy::Moments => f.write_str("moments"),
            InitPolicy::Point(p) => {
                let parts: Vec<String> = p.as_slice().iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: String,
    pub theta_true: ParamVector,
    pub n: usize,
    pub replications: usize,
    pub r: f64,
    pub c: Option<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub master_seed: u64,
    pub init_policy: InitPolicy,
    pub tol_mle: f64,
    pub max_iter_mle: usize,
    pub burn_in_fraction: f64,
    pub boundary: BoundaryPolicy,
    /// Worker cap; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Gamma(2, 1), `n = 10⁴`, `B = 2000`, `r = 0.6`, all five estimators.
    pub fn gamma_default() -> Self {
        ExperimentConfig {
            model: "gamma".into(),
            theta_true: ParamVector::new(vec![2.0, 1.0]).expect("finite"),
            n: 10_000,
            replications: 2000,
            r: 0.6,
            c: None,
            estimators: EstimatorKind::DEFAULT_SET.to_vec(),
            master_seed: 42,
            init_policy: InitPolicy::ModelDefault,
            tol_mle: 1e-9,
            max_iter_mle: 200,
            burn_in_fraction: 0.0,
            boundary: BoundaryPolicy::default(),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<Box<dyn Model>> {
        let model = model_by_name(&self.model)?;
        model.check_domain(&self.theta_true)?;
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be >= 2, got {}", self.n)));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("B must be >= 1".into()));
        }
        StepSchedule::polynomial(self.r)?;
        if self.estimators.contains(&EstimatorKind::SgdC) {
            match self.c {
                Some(c) => {
                    StepSchedule::scaled_harmonic(c)?;
                }
                None => return Err(Error::InvalidConfig("sgd_c needs --c".into())),
            }
        }
        if !(self.tol_mle > 0.0) {
            return Err(Error::InvalidConfig(format!("tol-mle must be > 0, got {}", self.tol_mle)));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidConfig(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if let BoundaryPolicy::RatioGuard(k) = self.boundary {
            if !(k > 1.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("step guard factor must be > 1, got {k}")));
            }
        }
        if let InitPolicy::Point(p) = &self.init_policy {
            model.check_domain(p)?;
        }
        if self.init_policy == InitPolicy::Moments && model.name() != "gamma" {
            return Err(Error::InvalidConfig("--init moments requires --model gamma".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(model)
    }

    /// Requested estimators in table order, without duplicates.
    pub fn ordered_estimators(&self) -> Vec<EstimatorKind> {
        EstimatorKind::ALL.into_iter().filter(|k| self.estimators.contains(k)).collect()
    }
}

/// One estimator's outcome on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub replication: usize,
    /// Estimator id, or [`INTERNAL_SGD_LABEL`].
    pub estimator: String,
    pub raw_error: ParamVector,
    /// Seconds; for `ossgd`/`avsgd` this includes the SGD pass they reuse.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub estimator: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub used: usize,
    pub excluded: usize,
    /// Mean raw error; `None` when every replication was excluded.
    pub bias: Option<ParamVector>,
    /// Mean of `e eᵀ` with `e = n^{scale_exponent} (estimate − θ)`.
    pub scaled_second_moment: Option<SymMatrix>,
    pub target: Option<SymMatrix>,
    pub total_wall_time: f64,
    pub scale_exponent: f64,
}

impl EstimatorSummary {
    /// `‖M − T‖_F / ‖T‖_F` when both the moment and its target exist.
    pub fn relative_distance(&self) -> Option<f64> {
        match (&self.scaled_second_moment, &self.target) {
            (Some(m), Some(t)) => Some(m.relative_frobenius_distance(t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rng_algorithm: &'static str,
    pub summaries: Vec<EstimatorSummary>,
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<ReplicationFailure>,
}

impl ExperimentReport {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == kind)
    }

    pub fn excluded_total(&self) -> usize {
        self.summaries.iter().map(|s| s.excluded).sum()
    }
}

type Outcome = (String, Result<(ParamVector, f64)>);

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn run_replication(
    model: &dyn Model,
    config: &ExperimentConfig,
    estimators: &[EstimatorKind],
    index: usize,
) -> Vec<Outcome> {
    let mut rng = RandomState::for_replication(config.master_seed, index as u64);
    let sample = model.sample(&config.theta_true, config.n, &mut rng);
    let prepared = sample.and_then(|xs| config.init_policy.resolve(model, &xs).map(|init| (xs, init)));
    let (xs, init) = match prepared {
        Ok(v) => v,
        Err(e) => return estimators.iter().map(|k| (k.id().to_string(), Err(e.clone()))).collect(),
    };

    let schedule = StepSchedule::Polynomial { r: config.r };
    let want = |k: EstimatorKind| estimators.contains(&k);
    let mut out: Vec<Outcome> = Vec::new();

    if estimators.iter().any(|k| k.uses_sgd_pass()) {
        let opts = RecursionOptions { boundary: config.boundary, record_trace: want(EstimatorKind::Avsgd) };
        let (sgd, sgd_time) = timed(|| sgd_run(model, &xs, schedule, &init, &opts));
        let label = if want(EstimatorKind::Sgd) { "sgd" } else { INTERNAL_SGD_LABEL };
        out.push((label.to_string(), sgd.as_ref().map(|r| (r.estimate.clone(), sgd_time)).map_err(Clone::clone)));
        if want(EstimatorKind::Ossgd) {
            let res = match &sgd {
                Ok(s) => {
                    let (os, t) = timed(|| one_step(model, &xs, &s.estimate));
                    os.map(|r| (r.estimate, sgd_time + t))
                }
                Err(e) => Err(e.clone()),
            };
            out.push(("ossgd".into(), res));
        }
        if want(EstimatorKind::Avsgd) {
            let res = match &sgd {
                Ok(s) => {
                    let trace = s.trace.as_ref().expect("trace requested");
                    let (av, t) = timed(|| average_iterates(trace, config.burn_in_fraction));
                    av.map(|est| (est, sgd_time + t))
                }
                Err(e) => Err(e.clone()),
            };
            out.push(("avsgd".into(), res));
        }
    }
    if want(EstimatorKind::Mle) {
        let opts = MleOptions { tol: config.tol_mle, max_iter: config.max_iter_mle };
        let (res, t) = timed(|| mle_fit(model, &xs, &init, &opts));
        out.push(("mle".into(), res.map(|r| (r.estimate, t))));
    }
    if want(EstimatorKind::Adsgd) {
        let opts = RecursionOptions { boundary: config.boundary, record_trace: false };
        let (res, t) = timed(|| adsgd_run(model, &xs, &init, &opts));
        out.push(("adsgd".into(), res.map(|r| (r.estimate, t))));
    }
    if want(EstimatorKind::SgdC) {
        let c = config.c.expect("validated");
        let opts = RecursionOptions { boundary: config.boundary, record_trace: false };
        let (res, t) = timed(|| sgd_run(model, &xs, StepSchedule::ScaledHarmonic { c }, &init, &opts));
        out.push(("sgd_c".into(), res.map(|r| (r.estimate, t))));
    }
    out
}

/// Aggregates bias, renormalized second moment and total time for one
/// estimator from the per-replication rows.
pub fn summarize_rows(
    rows: &[ReplicationRow],
    estimator: EstimatorKind,
    n: usize,
    r: f64,
    dim: usize,
) -> (Option<ParamVector>, Option<SymMatrix>, f64, usize) {
    let scale = (n as f64).powf(estimator.scale_exponent(r));
    let mut bias = vec![0.0; dim];
    let mut moment = SymMatrix::zeros(dim);
    let mut time = 0.0;
    let mut used = 0usize;
    for row in rows.iter().filter(|row| row.estimator == estimator.id()) {
        used += 1;
        time += row.time;
        for (b, e) in bias.iter_mut().zip(row.raw_error.as_slice()) {
            *b += e;
        }
        moment = moment.add(&row.raw_error.scaled(scale).outer());
    }
    if used == 0 {
        return (None, None, time, 0);
    }
    let inv = 1.0 / used as f64;
    let bias = ParamVector::from_vec_unchecked(bias.into_iter().map(|b| b * inv).collect());
    (Some(bias), Some(moment.scaled(inv)), time, used)
}

/// Splits per-replication outcomes, in replication order, into rows and
/// failure records.
fn fold_outcomes(theta_true: &ParamVector, outcomes: Vec<Vec<Outcome>>) -> (Vec<ReplicationRow>, Vec<ReplicationFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (b, outcome) in outcomes.into_iter().enumerate() {
        for (label, res) in outcome {
            match res {
                Ok((estimate, time)) => rows.push(ReplicationRow {
                    replication: b,
                    estimator: label,
                    raw_error: estimate.sub(theta_true),
                    time,
                }),
                Err(e) => failures.push(ReplicationFailure { replication: b, estimator: label, message: e.to_string() }),
            }
        }
    }
    (rows, failures)
}

/// Runs the replicated experiment described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.validate()?;
    let model = model.as_ref();
    let estimators = config.ordered_estimators();

    let run_all = || -> Vec<Vec<Outcome>> {
        (0..config.replications)
            .into_par_iter()
            .map(|b| run_replication(model, config, &estimators, b))
            .collect()
    };
    let outcomes = match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let (rows, failures) = fold_outcomes(&config.theta_true, outcomes);

    let summaries = estimators
        .iter()
        .map(|&kind| {
            let (bias, moment, time, used) = summarize_rows(&rows, kind, config.n, config.r, model.dim());
            EstimatorSummary {
                estimator: kind,
                used,
                excluded: config.replications - used,
                bias,
                scaled_second_moment: moment,
                target: theoretical_targets(model, &config.theta_true, kind, config.c).ok(),
                total_wall_time: time,
                scale_exponent: kind.scale_exponent(config.r),
            }
        })
        .collect();

    Ok(ExperimentReport { config: config.clone(), rng_algorithm: RandomState::ALGORITHM, summaries, rows, failures })
}
