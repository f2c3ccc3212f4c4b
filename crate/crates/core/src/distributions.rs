//! Random-variate samplers and density primitives used by the model and the
//! samplers: exponential and truncated exponential draws, the Lomax family,
//! an approximate Polya-Gamma sampler, Chinese restaurant table counts,
//! multivariate normals and exponential races.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};

use crate::error::{LdrError, Result};

/// Open interval `(lower, upper)` known to contain an unobserved time.
///
/// Right censoring at `T` is `(T, inf)`; left censoring at `T` is `(0, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensorInterval {
    lower: f64,
    upper: f64,
}

impl CensorInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && lower.is_finite()) {
            return Err(LdrError::param(format!(
                "interval lower bound {lower} must be finite and >= 0"
            )));
        }
        if !(upper > lower) {
            return Err(LdrError::param(format!("interval ({lower}, {upper}) is empty")));
        }
        Ok(Self { lower, upper })
    }

    pub fn right_censored(at: f64) -> Result<Self> {
        Self::new(at, f64::INFINITY)
    }

    pub fn left_censored(at: f64) -> Result<Self> {
        Self::new(0.0, at)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.lower && t < self.upper
    }
}

/// Lomax (Pareto type II) distribution with shape `r` and scale `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LomaxParams {
    shape: f64,
    scale: f64,
}

impl LomaxParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(LdrError::param(format!(
                "Lomax shape {shape} and scale {scale} must be positive"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `b / (r - 1)`, defined only for `r > 1`.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(LdrError::Domain(format!("time {t} must be non-negative")))
    }
}

pub fn lomax_density(t: f64, p: LomaxParams) -> Result<f64> {
    check_time(t)?;
    let (r, b) = (p.shape, p.scale);
    Ok((r.ln() + r * b.ln() - (r + 1.0) * (t + b).ln()).exp())
}

pub fn lomax_survival(t: f64, p: LomaxParams) -> Result<f64> {
    check_time(t)?;
    Ok((-p.shape * (t / p.scale).ln_1p()).exp())
}

pub fn lomax_hazard(t: f64, p: LomaxParams) -> Result<f64> {
    check_time(t)?;
    Ok(p.shape / (t + p.scale))
}

/// Draw from `Gamma(shape, scale)`.
///
/// Shapes far below one are drawn as `Gamma(shape + 1) * U^(1/shape)` in log
/// space and floored at the smallest positive normal, so the result is always
/// strictly positive.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0, "gamma({shape}, {scale})");
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("valid gamma shape");
        return (g.sample(rng) * scale).max(f64::MIN_POSITIVE);
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape");
    let u: f64 = rng.sample(Open01);
    let log_draw = g.sample(rng).ln() + u.ln() / shape + scale.ln();
    log_draw.exp().max(f64::MIN_POSITIVE)
}

/// Draw from `Gamma(shape, e^log_scale)` without forming the scale, for
/// linear predictors whose exponential over- or underflows.
pub(crate) fn sample_gamma_log_scale<R: Rng + ?Sized>(shape: f64, log_scale: f64, rng: &mut R) -> f64 {
    (sample_log_gamma(shape, rng) + log_scale)
        .exp()
        .clamp(f64::MIN_POSITIVE, f64::MAX)
}

/// `ln G` for `G ~ Gamma(shape, 1)`, finite even when `G` itself would
/// underflow.
pub(crate) fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("valid gamma shape");
        return g.sample(rng).max(f64::MIN_POSITIVE).ln();
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape");
    let u: f64 = rng.sample(Open01);
    g.sample(rng).max(f64::MIN_POSITIVE).ln() + u.ln() / shape
}

/// Unit-rate exponential draw (strictly positive).
pub(crate) fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln()
}

pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(LdrError::param(format!("exponential rate {rate} must be positive")));
    }
    Ok(standard_exponential(rng) / rate)
}

/// Exponential draw conditioned on lying inside `interval`.
///
/// Unbounded intervals use memorylessness; bounded ones invert the truncated
/// CDF directly.
pub fn sample_truncated_exponential<R: Rng + ?Sized>(rate: f64, interval: CensorInterval, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(LdrError::param(format!("exponential rate {rate} must be positive")));
    }
    if interval.upper.is_infinite() {
        return Ok(interval.lower + standard_exponential(rng) / rate);
    }
    let width = interval.upper - interval.lower;
    let mass = -(-rate * width).exp_m1();
    loop {
        let u: f64 = rng.sample(Open01);
        let t = interval.lower - (-u * mass).ln_1p() / rate;
        if interval.contains(t) {
            return Ok(t);
        }
    }
}

/// Lomax draw through its gamma-mixed exponential representation:
/// `lambda ~ Gamma(r, 1/b)`, `t ~ Exp(lambda)`.
pub fn sample_lomax<R: Rng + ?Sized>(p: LomaxParams, rng: &mut R) -> f64 {
    let lambda = sample_gamma(p.shape, 1.0 / p.scale, rng);
    standard_exponential(rng) / lambda
}

/// Number of explicit gamma terms in the Polya-Gamma approximation.
pub const PG_TRUNCATION: usize = 5;

/// Exact mean of `PG(b, c)`.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-8 {
        return b / 4.0;
    }
    b * (0.5 * c).tanh() / (2.0 * c)
}

/// Exact variance of `PG(b, c)`.
pub fn polya_gamma_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    let f = if c < 1e-2 {
        let c2 = c * c;
        1.0 / 6.0 - c2 / 30.0 + 17.0 * c2 * c2 / 3360.0
    } else {
        let half = 0.5 * c;
        let sech2 = 1.0 / (half.cosh() * half.cosh());
        (2.0 * half.tanh() - c * sech2) / (c * c * c)
    };
    b * f / 4.0
}

/// Approximate draw from the Polya-Gamma distribution `PG(shape, tilt)`.
///
/// Uses the representation `PG(b, c) = (1/2pi^2) sum_k g_k / ((k - 1/2)^2 +
/// c^2/(4pi^2))`, `g_k ~ Gamma(b, 1)`, keeping [`PG_TRUNCATION`] terms and
/// replacing the tail with a single gamma whose mean and variance match the
/// exact tail moments.
pub fn sample_polya_gamma_approx<R: Rng + ?Sized>(shape: f64, tilt: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(LdrError::param(format!("Polya-Gamma shape {shape} must be positive")));
    }
    if !tilt.is_finite() {
        return Err(LdrError::param(format!("Polya-Gamma tilt {tilt} must be finite")));
    }
    Ok(polya_gamma_unchecked(shape, tilt, rng))
}

pub(crate) fn polya_gamma_unchecked<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> f64 {
    let c2 = c * c / (4.0 * PI * PI);
    let two_pi2 = 2.0 * PI * PI;
    let mut head_mean = 0.0;
    let mut head_var = 0.0;
    let mut draw = 0.0;
    let unit = if b >= 1.0 { Gamma::new(b, 1.0).ok() } else { None };
    for k in 1..=PG_TRUNCATION {
        let d = (k as f64 - 0.5).powi(2) + c2;
        let g = match &unit {
            Some(dist) => dist.sample(rng),
            None => sample_gamma(b, 1.0, rng),
        };
        draw += g / d;
        head_mean += 1.0 / d;
        head_var += 1.0 / (d * d);
    }
    draw /= two_pi2;
    head_mean *= b / two_pi2;
    head_var *= b / (two_pi2 * two_pi2);

    let tail_mean = polya_gamma_mean(b, c) - head_mean;
    let tail_var = polya_gamma_variance(b, c) - head_var;
    let shape = tail_mean * tail_mean / tail_var;
    let scale = tail_var / tail_mean;
    if tail_mean > 0.0 && shape > 0.0 && scale > 0.0 && shape.is_finite() {
        draw += sample_gamma(shape, scale, rng);
    } else if tail_mean > 0.0 {
        // Tiny shapes: the moment-matched shape underflows, keep the mean.
        draw += tail_mean;
    }
    draw
}

/// Chinese restaurant table count: `sum_{i=1..count} Bernoulli(r / (r + i - 1))`.
pub fn sample_crt<R: Rng + ?Sized>(count: u64, concentration: f64, rng: &mut R) -> Result<u64> {
    if !(concentration > 0.0) {
        return Err(LdrError::param(format!(
            "CRT concentration {concentration} must be positive"
        )));
    }
    Ok(crt_unchecked(count, concentration, rng))
}

pub(crate) fn crt_unchecked<R: Rng + ?Sized>(count: u64, r: f64, rng: &mut R) -> u64 {
    let mut tables = 0;
    for i in 0..count {
        let p = r / (r + i as f64);
        if rng.random::<f64>() < p {
            tables += 1;
        }
    }
    tables
}

const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-9, 1e-8, 1e-6];

/// Cholesky factor of a symmetric matrix with escalating diagonal jitter.
pub(crate) fn jittered_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let diag_scale = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let diag_scale = diag_scale.max(1.0);
    for jitter in JITTER_LADDER {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter * diag_scale;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok(chol);
        }
    }
    Err(LdrError::Numerical(format!(
        "{n}x{n} matrix is not positive definite even with jitter 1e-6"
    )))
}

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Multivariate normal draw from a mean and covariance.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(LdrError::param(format!(
            "covariance is {}x{}, mean has length {n}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let chol = jittered_cholesky(covariance)?;
    let z = standard_normal_vector(n, rng);
    Ok(mean + chol.l() * z)
}

/// Multivariate normal draw in canonical form: `N(P^-1 h, P^-1)` for a
/// precision matrix `P` and linear term `h`, without forming the inverse.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = jittered_cholesky(precision)?;
    let mean = chol.solve(linear);
    let z = standard_normal_vector(linear.len(), rng);
    let upper = chol.l().transpose();
    let noise = upper
        .solve_upper_triangular(&z)
        .ok_or_else(|| LdrError::Numerical("singular precision factor".into()))?;
    Ok(mean + noise)
}

/// Race independent exponentials with the given rates; returns the index of
/// the winner and the winning time.
pub fn exponential_race<R: Rng + ?Sized>(rates: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if rates.is_empty() {
        return Err(LdrError::param("exponential race needs at least one rate"));
    }
    let mut best = (0, f64::INFINITY);
    for (j, &rate) in rates.iter().enumerate() {
        let t = sample_exponential(rate, rng)?;
        if t < best.1 {
            best = (j, t);
        }
    }
    Ok(best)
}
