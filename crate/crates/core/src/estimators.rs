//! Stochastic-approximation and likelihood estimators.
//!
//! Every estimator takes the observations in the order given. The SGD
//! recursions make one pass over `x₁..x_{n−1}` (an `n`-sample produces the
//! iterates `θ₁..θ_n`), so the final observation is only seen by estimators
//! that use the full-sample score, such as [`one_step`] and [`mle_fit`].

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, Cholesky, ParamVector};
use crate::models::{Gamma, Model};

/// Step sequence `i ↦ γᵢ` for the Robbins–Monro recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `γᵢ = i^{−r}` with `½ < r < 1`.
    Polynomial { r: f64 },
    /// `γᵢ = c / i` with `c > 0`.
    ScaledHarmonic { c: f64 },
}

impl StepSchedule {
    pub fn polynomial(r: f64) -> Result<Self> {
        if r.is_finite() && r > 0.5 && r < 1.0 {
            Ok(StepSchedule::Polynomial { r })
        } else {
            Err(Error::InvalidSchedule(format!("exponent r must lie in (0.5, 1), got {r}")))
        }
    }

    pub fn scaled_harmonic(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(StepSchedule::ScaledHarmonic { c })
        } else {
            Err(Error::InvalidSchedule(format!("constant c must be > 0, got {c}")))
        }
    }

    /// `γᵢ` for `i >= 1`.
    pub fn step(&self, i: usize) -> f64 {
        let i = i as f64;
        match *self {
            StepSchedule::Polynomial { r } => i.powf(-r),
            StepSchedule::ScaledHarmonic { c } => c / i,
        }
    }
}

/// How a recursion keeps its iterates inside Θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPolicy {
    /// Take the full step, then [`Model::project_to_domain`].
    Project,
    /// Limit every positive coordinate to `[u/k, k·u]` of its previous
    /// value before projecting. Only binds while steps are large, so the
    /// limiting behaviour of the recursion is unchanged.
    RatioGuard(f64),
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        BoundaryPolicy::RatioGuard(2.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecursionOptions {
    pub boundary: BoundaryPolicy,
    pub record_trace: bool,
}

impl RecursionOptions {
    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// Iterates `θ₁..θ_n` stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    dim: usize,
    values: Vec<f64>,
}

impl Trace {
    fn with_capacity(dim: usize, len: usize) -> Self {
        Trace { dim, values: Vec::with_capacity(dim * len) }
    }

    pub fn from_iterates(iterates: &[ParamVector]) -> Result<Self> {
        let dim = iterates.first().map_or(0, ParamVector::dim);
        let mut trace = Trace::with_capacity(dim, iterates.len());
        for it in iterates {
            if it.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: it.dim() });
            }
            trace.values.extend_from_slice(it.as_slice());
        }
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> ParamVector {
        ParamVector::from_vec_unchecked(self.values[i * self.dim..(i + 1) * self.dim].to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }
}

/// Output of one estimator run.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub estimate: ParamVector,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub trace: Option<Trace>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    fn new(estimate: ParamVector, iterations: usize, started: Instant) -> Self {
        EstimateResult {
            estimate,
            iterations,
            wall_time: started.elapsed().as_secs_f64(),
            trace: None,
            diagnostics: BTreeMap::new(),
        }
    }
}

#[derive(Default)]
struct BoundaryCounters {
    guarded: usize,
    projected: usize,
}

fn apply_boundary(
    model: &dyn Model,
    policy: BoundaryPolicy,
    previous: &[f64],
    candidate: &mut ParamVector,
    iteration: usize,
    counters: &mut BoundaryCounters,
) -> Result<()> {
    if !candidate.is_finite() {
        return Err(Error::Domain(format!("iterate {} became non-finite: {candidate}", iteration + 1)));
    }
    if let BoundaryPolicy::RatioGuard(k) = policy {
        let mut touched = false;
        for ((v, &old), &pos) in candidate.as_mut_slice().iter_mut().zip(previous).zip(model.positive_coords()) {
            if pos {
                let clamped = v.clamp(old / k, old * k);
                if clamped != *v {
                    *v = clamped;
                    touched = true;
                }
            }
        }
        counters.guarded += touched as usize;
    }
    if !model.in_domain(candidate) {
        *candidate = model.project_to_domain(candidate)?;
        counters.projected += 1;
    }
    Ok(())
}

fn check_inputs(model: &dyn Model, xs: &[f64], start: &ParamVector) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    model.check_domain(start)?;
    model.check_sample(xs)
}

/// Shared driver for the SGD-type recursions `θᵢ₊₁ = θᵢ + direction(i, θᵢ, xᵢ)`.
fn run_recursion<F>(
    model: &dyn Model,
    xs: &[f64],
    init: &ParamVector,
    opts: &RecursionOptions,
    mut direction: F,
) -> Result<(ParamVector, Option<Trace>, BoundaryCounters)>
where
    F: FnMut(usize, &[f64], f64, &mut [f64]) -> Result<()>,
{
    let p = model.dim();
    let n = xs.len();
    let mut theta = init.clone();
    let mut step = vec![0.0; p];
    let mut counters = BoundaryCounters::default();
    let mut trace = opts.record_trace.then(|| Trace::with_capacity(p, n));
    if let Some(t) = trace.as_mut() {
        t.values.extend_from_slice(theta.as_slice());
    }
    for (i, &x) in xs.iter().enumerate().take(n - 1) {
        let i = i + 1;
        direction(i, theta.as_slice(), x, &mut step)?;
        let mut candidate = theta.clone();
        for (c, d) in candidate.as_mut_slice().iter_mut().zip(&step) {
            *c += d;
        }
        apply_boundary(model, opts.boundary, theta.as_slice(), &mut candidate, i, &mut counters)?;
        theta = candidate;
        if let Some(t) = trace.as_mut() {
            t.values.extend_from_slice(theta.as_slice());
        }
    }
    Ok((theta, trace, counters))
}

fn record_counters(result: &mut EstimateResult, counters: &BoundaryCounters) {
    result.diagnostics.insert("guarded_steps".into(), counters.guarded as f64);
    result.diagnostics.insert("projected_steps".into(), counters.projected as f64);
}

/// Robbins–Monro SGD on the log-likelihood:
/// `θᵢ₊₁ = θᵢ + γᵢ ∇_u log f(xᵢ, θᵢ)` for `i = 1..n−1`, returning `θ_n`.
pub fn sgd_run(
    model: &dyn Model,
    xs: &[f64],
    schedule: StepSchedule,
    init: &ParamVector,
    opts: &RecursionOptions,
) -> Result<EstimateResult> {
    let started = Instant::now();
    check_inputs(model, xs, init)?;
    let (theta, trace, counters) = run_recursion(model, xs, init, opts, |i, theta, x, step| {
        model.score_raw(theta, x, step);
        let gamma = schedule.step(i);
        step.iter_mut().for_each(|s| *s *= gamma);
        Ok(())
    })?;
    let mut result = EstimateResult::new(theta, xs.len() - 1, started);
    result.trace = trace;
    record_counters(&mut result, &counters);
    Ok(result)
}

/// Arithmetic mean of the iterates after dropping the first
/// `⌊burn_in_fraction · len⌋` of them.
pub fn average_iterates(trace: &Trace, burn_in_fraction: f64) -> Result<ParamVector> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidConfig(format!("burn-in fraction must lie in [0, 1), got {burn_in_fraction}")));
    }
    if trace.is_empty() {
        return Err(Error::EmptySample);
    }
    let skip = (burn_in_fraction * trace.len() as f64).floor() as usize;
    let kept = trace.len() - skip.min(trace.len() - 1);
    let mut sum = vec![0.0; trace.dim];
    for it in trace.iter().skip(trace.len() - kept) {
        for (s, v) in sum.iter_mut().zip(it) {
            *s += v;
        }
    }
    let inv = 1.0 / kept as f64;
    Ok(ParamVector::from_vec_unchecked(sum.into_iter().map(|s| s * inv).collect()))
}

/// Polyak–Ruppert averaged SGD: mean of `θ₁..θ_n` (after burn-in).
pub fn avsgd_run(
    model: &dyn Model,
    xs: &[f64],
    schedule: StepSchedule,
    init: &ParamVector,
    burn_in_fraction: f64,
    opts: &RecursionOptions,
) -> Result<EstimateResult> {
    let started = Instant::now();
    let sgd = sgd_run(model, xs, schedule, init, &opts.with_trace())?;
    let trace = sgd.trace.as_ref().expect("trace requested");
    let estimate = average_iterates(trace, burn_in_fraction)?;
    let mut result = EstimateResult::new(estimate, sgd.iterations, started);
    result.diagnostics = sgd.diagnostics;
    result.diagnostics.insert("burn_in_fraction".into(), burn_in_fraction);
    if opts.record_trace {
        result.trace = sgd.trace;
    }
    Ok(result)
}

/// Adaptive SGD: `θ̃ᵢ₊₁ = θ̃ᵢ + i⁻¹ I(θ̃ᵢ)⁻¹ ∇_u log f(xᵢ, θ̃ᵢ)`.
pub fn adsgd_run(
    model: &dyn Model,
    xs: &[f64],
    init: &ParamVector,
    opts: &RecursionOptions,
) -> Result<EstimateResult> {
    let started = Instant::now();
    check_inputs(model, xs, init)?;
    let p = model.dim();
    let mut score = ParamVector::zeros(p);
    let (theta, trace, counters) = run_recursion(model, xs, init, opts, |i, theta, x, step| {
        model.score_raw(theta, x, score.as_mut_slice());
        let fisher = model.fisher_raw(theta);
        let direction = Cholesky::factor(&fisher)
            .and_then(|c| c.solve(&score))
            .map_err(|e| Error::FisherBreakdown { iteration: i, source: Box::new(e) })?;
        let inv_i = 1.0 / i as f64;
        for (s, d) in step.iter_mut().zip(direction.as_slice()) {
            *s = inv_i * d;
        }
        Ok(())
    })?;
    let mut result = EstimateResult::new(theta, xs.len() - 1, started);
    result.trace = trace;
    record_counters(&mut result, &counters);
    Ok(result)
}

/// One Fisher-scoring step from `guess`:
/// `θ̄ = guess + I(guess)⁻¹ · (1/n) Σ ∇_u log f(xᵢ, guess)`.
pub fn one_step(model: &dyn Model, xs: &[f64], guess: &ParamVector) -> Result<EstimateResult> {
    let started = Instant::now();
    check_inputs(model, xs, guess)?;
    let mean_score = model.score_sum_raw(guess.as_slice(), xs).scaled(1.0 / xs.len() as f64);
    let fisher = model.fisher_raw(guess.as_slice());
    let correction = spd_solve(&fisher, &mean_score)?;
    let estimate = model.project_to_domain(&guess.add(&correction))?;
    let mut result = EstimateResult::new(estimate, 1, started);
    result.diagnostics.insert("correction_norm".into(), correction.norm());
    result.diagnostics.insert("guess_score_norm".into(), mean_score.norm());
    Ok(result)
}

/// Settings for [`mle_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    /// Stop once `‖(1/n) Σ score‖ <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { tol: 1e-9, max_iter: 200 }
    }
}

const MAX_HALVINGS: usize = 30;

/// Maximum likelihood by damped Fisher scoring.
///
/// Each iteration proposes `Δ = I(θ)⁻¹ (1/n) Σ score(θ)` and accepts
/// `θ + λΔ` for the first `λ ∈ {1, ½, ¼, …}` that stays in Θ without
/// lowering the mean log-likelihood. Reaching `max_iter` is not an error:
/// the diagnostics carry `max_iterations_reached = 1`.
pub fn mle_fit(model: &dyn Model, xs: &[f64], init: &ParamVector, opts: &MleOptions) -> Result<EstimateResult> {
    let started = Instant::now();
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    check_inputs(model, xs, init)?;
    let inv_n = 1.0 / xs.len() as f64;
    let mut theta = init.clone();
    let mut loglik = model.loglik_sum_raw(theta.as_slice(), xs) * inv_n;
    let mut gradient = model.score_sum_raw(theta.as_slice(), xs).scaled(inv_n);
    let mut iterations = 0;
    let mut halvings = 0;
    while gradient.norm() > opts.tol && iterations < opts.max_iter {
        let fisher = model.fisher_raw(theta.as_slice());
        let delta = spd_solve(&fisher, &gradient)?;
        // Summation noise in the mean log-likelihood.
        let slack = 1e-13 * (1.0 + loglik.abs());
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = theta.clone();
            candidate.axpy(lambda, &delta);
            if model.in_domain(&candidate) {
                let value = model.loglik_sum_raw(candidate.as_slice(), xs) * inv_n;
                if value.is_finite() && value >= loglik - slack {
                    accepted = Some((candidate, value));
                    break;
                }
            }
            lambda *= 0.5;
            halvings += 1;
        }
        let (candidate, value) = accepted.ok_or(Error::NoImprovement { iteration: iterations + 1 })?;
        theta = candidate;
        loglik = value;
        gradient = model.score_sum_raw(theta.as_slice(), xs).scaled(inv_n);
        iterations += 1;
    }
    let grad_norm = gradient.norm();
    let mut result = EstimateResult::new(theta, iterations, started);
    result.diagnostics.insert("gradient_norm".into(), grad_norm);
    result.diagnostics.insert("iterations".into(), iterations as f64);
    result.diagnostics.insert("halvings".into(), halvings as f64);
    result.diagnostics.insert("mean_loglik".into(), loglik);
    result.diagnostics.insert("max_iterations_reached".into(), (grad_norm > opts.tol) as u8 as f64);
    Ok(result)
}

/// Method-of-moments start for Gamma(α, β): `α₀ = x̄²/s²`, `β₀ = x̄/s²`
/// with the biased sample variance `s²`.
pub fn gamma_moment_init(xs: &[f64]) -> Result<ParamVector> {
    if xs.len() < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: xs.len() });
    }
    Gamma.check_sample(xs)?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let raw = ParamVector::new(vec![mean * mean / var, mean / var])?;
    Gamma.project_to_domain(&raw)
}
