//! Parametric i.i.d. model families.
//!
//! A [`Model`] bundles the log-density `log f(x, u)`, its gradient in the
//! parameter (the score), the Fisher information `I(u) = −E[∇² log f]`, a
//! sampler, and the open parameter set `Θ`. The built-in families are
//!
//! | family        | parameter      | Θ                 |
//! |---------------|----------------|-------------------|
//! | [`Gamma`]     | (shape α, rate β) | α > 0, β > 0   |
//! | [`Normal`]    | (mean μ, variance σ²) | σ² > 0     |
//! | [`Exponential`] | (rate β)     | β > 0             |
//! | [`NormalMean`] | (mean μ), σ² known | ℝ            |
//!
//! The checked entry points (`log_density`, `score`, ...) validate the
//! parameter and observations; the `*_raw` methods skip validation and are
//! meant for inner loops that validated their inputs once up front.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{ParamVector, SymMatrix};
use crate::special::{digamma, ln_gamma, trigamma};

/// Margin kept from the boundary of Θ when projecting.
pub const DOMAIN_MARGIN: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Seedable random stream used for every draw in the crate.
///
/// ChaCha20 keyed by `seed_from_u64(seed)`; independent replications use
/// the same key on distinct 64-bit stream ids.
#[derive(Debug, Clone)]
pub struct RandomState {
    rng: ChaCha20Rng,
}

impl RandomState {
    /// Identifier written into experiment output.
    pub const ALGORITHM: &'static str = "chacha20(seed_from_u64;stream=replication)";

    pub fn new(seed: u64) -> Self {
        RandomState { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Stream `index` under `master_seed`.
    pub fn for_replication(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        RandomState { rng }
    }

    /// Uniform draw on `(0, 1]`.
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RandomState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Marsaglia–Tsang squeeze sampler for Gamma(shape, rate); shapes below one
/// are boosted through `Gamma(α) = Gamma(α + 1) · U^{1/α}`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RandomState) -> f64 {
    if shape < 1.0 {
        let boost = rng.open_unit().powf(1.0 / shape);
        return sample_gamma(shape + 1.0, rate, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (z, v) = loop {
            let z = rng.standard_normal();
            let v = 1.0 + c * z;
            if v > 0.0 {
                break (z, v * v * v);
            }
        };
        let u = rng.open_unit();
        let z2 = z * z;
        if u < 1.0 - 0.0331 * z2 * z2 || u.ln() < 0.5 * z2 + d * (1.0 - v + v.ln()) {
            return d * v / rate;
        }
    }
}

/// A parametric family of densities on the real line.
pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter dimension `p`.
    fn dim(&self) -> usize;

    /// Which coordinates are constrained to be strictly positive.
    fn positive_coords(&self) -> &'static [bool];

    fn in_support(&self, x: f64) -> bool;

    /// Interior starting point used when no initializer is given.
    fn default_init(&self) -> ParamVector;

    fn log_density_raw(&self, u: &[f64], x: f64) -> f64;

    /// Writes `∇_u log f(x, u)` into `out`.
    fn score_raw(&self, u: &[f64], x: f64, out: &mut [f64]);

    fn fisher_raw(&self, u: &[f64]) -> SymMatrix;

    fn sample_one_raw(&self, u: &[f64], rng: &mut RandomState) -> f64;

    fn in_domain(&self, u: &ParamVector) -> bool {
        u.dim() == self.dim()
            && u.is_finite()
            && u.as_slice().iter().zip(self.positive_coords()).all(|(v, &pos)| !pos || *v > 0.0)
    }

    fn check_domain(&self, u: &ParamVector) -> Result<()> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.dim() });
        }
        if !self.in_domain(u) {
            return Err(Error::Domain(format!("{u} is outside the {} parameter set", self.name())));
        }
        Ok(())
    }

    fn check_sample(&self, xs: &[f64]) -> Result<()> {
        match xs.iter().position(|&x| !self.in_support(x)) {
            Some(i) => Err(Error::Domain(format!(
                "observation {i} = {} is outside the {} support",
                xs[i],
                self.name()
            ))),
            None => Ok(()),
        }
    }

    fn log_density(&self, u: &ParamVector, x: f64) -> Result<f64> {
        self.check_domain(u)?;
        self.check_sample(std::slice::from_ref(&x))?;
        Ok(self.log_density_raw(u.as_slice(), x))
    }

    fn score(&self, u: &ParamVector, x: f64) -> Result<ParamVector> {
        self.check_domain(u)?;
        self.check_sample(std::slice::from_ref(&x))?;
        let mut out = ParamVector::zeros(self.dim());
        self.score_raw(u.as_slice(), x, out.as_mut_slice());
        Ok(out)
    }

    fn fisher_information(&self, u: &ParamVector) -> Result<SymMatrix> {
        self.check_domain(u)?;
        Ok(self.fisher_raw(u.as_slice()))
    }

    /// `ℓ_n(u) = Σ log f(xᵢ, u)`
    fn loglik_sum(&self, u: &ParamVector, xs: &[f64]) -> Result<f64> {
        self.check_domain(u)?;
        self.check_sample(xs)?;
        Ok(self.loglik_sum_raw(u.as_slice(), xs))
    }

    fn loglik_sum_raw(&self, u: &[f64], xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.log_density_raw(u, x)).sum()
    }

    /// `Σ ∇_u log f(xᵢ, u)`; the caller divides by `n`.
    fn score_sum(&self, u: &ParamVector, xs: &[f64]) -> Result<ParamVector> {
        self.check_domain(u)?;
        self.check_sample(xs)?;
        Ok(self.score_sum_raw(u.as_slice(), xs))
    }

    fn score_sum_raw(&self, u: &[f64], xs: &[f64]) -> ParamVector {
        let p = self.dim();
        let mut total = vec![0.0; p];
        let mut buf = vec![0.0; p];
        for &x in xs {
            self.score_raw(u, x, &mut buf);
            for (t, s) in total.iter_mut().zip(&buf) {
                *t += s;
            }
        }
        ParamVector::from_vec_unchecked(total)
    }

    fn sample(&self, u: &ParamVector, n: usize, rng: &mut RandomState) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        Ok((0..n).map(|_| self.sample_one_raw(u.as_slice(), rng)).collect())
    }

    /// Returns `u` if it lies in Θ, otherwise clamps every positive
    /// coordinate to at least [`DOMAIN_MARGIN`].
    fn project_to_domain(&self, u: &ParamVector) -> Result<ParamVector> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.dim() });
        }
        if !u.is_finite() {
            return Err(Error::Domain(format!("cannot project non-finite point {u}")));
        }
        if self.in_domain(u) {
            return Ok(u.clone());
        }
        let mut out = u.clone();
        for (v, &pos) in out.as_mut_slice().iter_mut().zip(self.positive_coords()) {
            if pos {
                *v = v.max(DOMAIN_MARGIN);
            }
        }
        Ok(out)
    }
}

/// Gamma(α, β) with density `β^α / Γ(α) · x^{α−1} e^{−βx}`, `x > 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Gamma;

impl Model for Gamma {
    fn name(&self) -> &'static str {
        "gamma"
    }

    fn dim(&self) -> usize {
        2
    }

    fn positive_coords(&self) -> &'static [bool] {
        &[true, true]
    }

    fn in_support(&self, x: f64) -> bool {
        x.is_finite() && x > 0.0
    }

    fn default_init(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(vec![1.0, 1.0])
    }

    fn log_density_raw(&self, u: &[f64], x: f64) -> f64 {
        let (alpha, beta) = (u[0], u[1]);
        alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * x.ln() - beta * x
    }

    fn score_raw(&self, u: &[f64], x: f64, out: &mut [f64]) {
        let (alpha, beta) = (u[0], u[1]);
        out[0] = beta.ln() - digamma(alpha) + x.ln();
        out[1] = alpha / beta - x;
    }

    fn fisher_raw(&self, u: &[f64]) -> SymMatrix {
        let (alpha, beta) = (u[0], u[1]);
        let mut m = SymMatrix::zeros(2);
        m.set(0, 0, trigamma(alpha));
        m.set(1, 0, -1.0 / beta);
        m.set(1, 1, alpha / (beta * beta));
        m
    }

    fn sample_one_raw(&self, u: &[f64], rng: &mut RandomState) -> f64 {
        sample_gamma(u[0], u[1], rng)
    }
}

/// Normal(μ, σ²), parameterized by the variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Normal;

impl Model for Normal {
    fn name(&self) -> &'static str {
        "normal"
    }

    fn dim(&self) -> usize {
        2
    }

    fn positive_coords(&self) -> &'static [bool] {
        &[false, true]
    }

    fn in_support(&self, x: f64) -> bool {
        x.is_finite()
    }

    fn default_init(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(vec![0.0, 1.0])
    }

    fn log_density_raw(&self, u: &[f64], x: f64) -> f64 {
        let (mu, var) = (u[0], u[1]);
        let d = x - mu;
        -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
    }

    fn score_raw(&self, u: &[f64], x: f64, out: &mut [f64]) {
        let (mu, var) = (u[0], u[1]);
        let d = x - mu;
        out[0] = d / var;
        out[1] = -0.5 / var + d * d / (2.0 * var * var);
    }

    fn fisher_raw(&self, u: &[f64]) -> SymMatrix {
        let var = u[1];
        SymMatrix::diagonal(&[1.0 / var, 1.0 / (2.0 * var * var)])
    }

    fn sample_one_raw(&self, u: &[f64], rng: &mut RandomState) -> f64 {
        u[0] + u[1].sqrt() * rng.standard_normal()
    }
}

/// Exponential(β) with density `β e^{−βx}`, `x > 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl Model for Exponential {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn dim(&self) -> usize {
        1
    }

    fn positive_coords(&self) -> &'static [bool] {
        &[true]
    }

    fn in_support(&self, x: f64) -> bool {
        x.is_finite() && x > 0.0
    }

    fn default_init(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(vec![1.0])
    }

    fn log_density_raw(&self, u: &[f64], x: f64) -> f64 {
        u[0].ln() - u[0] * x
    }

    fn score_raw(&self, u: &[f64], x: f64, out: &mut [f64]) {
        out[0] = 1.0 / u[0] - x;
    }

    fn fisher_raw(&self, u: &[f64]) -> SymMatrix {
        SymMatrix::diagonal(&[1.0 / (u[0] * u[0])])
    }

    fn sample_one_raw(&self, u: &[f64], rng: &mut RandomState) -> f64 {
        -rng.open_unit().ln() / u[0]
    }
}

/// Normal(μ, σ²) with the variance known; the parameter is μ alone.
#[derive(Debug, Clone, Copy)]
pub struct NormalMean {
    pub variance: f64,
}

impl NormalMean {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Domain(format!("variance must be > 0, got {variance}")));
        }
        Ok(NormalMean { variance })
    }
}

impl Model for NormalMean {
    fn name(&self) -> &'static str {
        "normal-mean"
    }

    fn dim(&self) -> usize {
        1
    }

    fn positive_coords(&self) -> &'static [bool] {
        &[false]
    }

    fn in_support(&self, x: f64) -> bool {
        x.is_finite()
    }

    fn default_init(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(vec![0.0])
    }

    fn log_density_raw(&self, u: &[f64], x: f64) -> f64 {
        let d = x - u[0];
        -0.5 * (LN_2PI + self.variance.ln()) - d * d / (2.0 * self.variance)
    }

    fn score_raw(&self, u: &[f64], x: f64, out: &mut [f64]) {
        out[0] = (x - u[0]) / self.variance;
    }

    fn fisher_raw(&self, _u: &[f64]) -> SymMatrix {
        SymMatrix::diagonal(&[1.0 / self.variance])
    }

    fn sample_one_raw(&self, u: &[f64], rng: &mut RandomState) -> f64 {
        u[0] + self.variance.sqrt() * rng.standard_normal()
    }
}

/// Model identifiers accepted on the command line.
pub const MODEL_NAMES: [&str; 3] = ["gamma", "normal", "exponential"];

/// Looks up a built-in family by identifier.
pub fn model_by_name(name: &str) -> Result<Box<dyn Model>> {
    match name {
        "gamma" => Ok(Box::new(Gamma)),
        "normal" => Ok(Box::new(Normal)),
        "exponential" => Ok(Box::new(Exponential)),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}
