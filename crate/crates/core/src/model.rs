//! Lomax delegate racing parameterization and its closed-form and
//! Monte-Carlo functionals.
//!
//! Each risk `j` owns a list of sub-risk atoms `(r_jk, beta_jk)`. Given
//! covariates `x = (1, x_1, ..., x_V)`, every atom carries a latent rate
//! `lambda_jk ~ Gamma(r_jk, scale = e^{x'beta_jk})`; the event time is the
//! winner of an exponential race over all atoms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EventStatus, ObservationRecord, TimeStatus};
use crate::distributions::{sample_gamma, standard_exponential};
use crate::error::{LdrError, Result};

/// One sub-risk: gamma-process weight and regression coefficients
/// (intercept first).
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub coefficients: Vec<f64>,
}

impl Atom {
    /// `x' beta` for this atom.
    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Frozen LDR parameters: `J` risks, truncation level `K`, and the surviving
/// atoms of each risk. Pruned atoms are absent rather than zero-weighted, so a
/// risk may hold fewer than `K` atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDocument", into = "ParamsDocument")]
pub struct LdrParams {
    num_subrisks: usize,
    covariate_dim: usize,
    risks: Vec<Vec<Atom>>,
}

/// JSON interchange layout: `{J, K, r: [[..]], beta: [[[..]]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsDocument {
    #[serde(rename = "J")]
    num_risks: usize,
    #[serde(rename = "K")]
    num_subrisks: usize,
    r: Vec<Vec<f64>>,
    beta: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<ParamsDocument> for LdrParams {
    type Error = LdrError;

    fn try_from(doc: ParamsDocument) -> Result<Self> {
        if doc.r.len() != doc.num_risks {
            return Err(LdrError::param(format!(
                "J = {} but r has {} rows",
                doc.num_risks,
                doc.r.len()
            )));
        }
        LdrParams::new(doc.num_subrisks, doc.r, doc.beta)
    }
}

impl From<LdrParams> for ParamsDocument {
    fn from(p: LdrParams) -> Self {
        ParamsDocument {
            num_risks: p.num_risks(),
            num_subrisks: p.num_subrisks,
            r: p.weights(),
            beta: p
                .risks
                .iter()
                .map(|atoms| atoms.iter().map(|a| a.coefficients.clone()).collect())
                .collect(),
        }
    }
}

impl LdrParams {
    /// Build from per-risk weight rows and coefficient vectors.
    pub fn new(num_subrisks: usize, r: Vec<Vec<f64>>, beta: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if r.is_empty() {
            return Err(LdrError::param("at least one risk is required"));
        }
        if num_subrisks == 0 {
            return Err(LdrError::param("K must be at least 1"));
        }
        if r.len() != beta.len() {
            return Err(LdrError::param(format!(
                "{} weight rows but {} coefficient rows",
                r.len(),
                beta.len()
            )));
        }
        let mut covariate_dim = None;
        let mut risks = Vec::with_capacity(r.len());
        for (j, (weights, coefs)) in r.into_iter().zip(beta).enumerate() {
            if weights.len() != coefs.len() {
                return Err(LdrError::param(format!(
                    "risk {j}: {} weights but {} coefficient vectors",
                    weights.len(),
                    coefs.len()
                )));
            }
            if weights.len() > num_subrisks {
                return Err(LdrError::param(format!(
                    "risk {j} has {} atoms, more than K = {num_subrisks}",
                    weights.len()
                )));
            }
            let mut atoms = Vec::with_capacity(weights.len());
            for (k, (w, b)) in weights.into_iter().zip(coefs).enumerate() {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(LdrError::param(format!("r[{j}][{k}] = {w} must be positive")));
                }
                if b.is_empty() || b.iter().any(|v| !v.is_finite()) {
                    return Err(LdrError::param(format!("beta[{j}][{k}] must be finite and non-empty")));
                }
                match covariate_dim {
                    None => covariate_dim = Some(b.len()),
                    Some(d) if d != b.len() => {
                        return Err(LdrError::param(format!(
                            "beta[{j}][{k}] has length {}, expected {d}",
                            b.len()
                        )))
                    }
                    _ => {}
                }
                atoms.push(Atom {
                    weight: w,
                    coefficients: b,
                });
            }
            risks.push(atoms);
        }
        let covariate_dim = covariate_dim.ok_or_else(|| LdrError::param("parameters contain no atoms"))?;
        Ok(Self {
            num_subrisks,
            covariate_dim,
            risks,
        })
    }

    /// Single atom per risk (Lomax racing).
    pub fn lomax_racing(shapes: Vec<f64>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let r = shapes.into_iter().map(|s| vec![s]).collect();
        let beta = beta.into_iter().map(|b| vec![b]).collect();
        Self::new(1, r, beta)
    }

    pub fn num_risks(&self) -> usize {
        self.risks.len()
    }

    /// Truncation level `K`.
    pub fn num_subrisks(&self) -> usize {
        self.num_subrisks
    }

    /// Length of covariate vectors including the intercept.
    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn atoms(&self, risk: usize) -> &[Atom] {
        &self.risks[risk]
    }

    pub fn risks(&self) -> &[Vec<Atom>] {
        &self.risks
    }

    pub fn num_atoms(&self) -> usize {
        self.risks.iter().map(Vec::len).sum()
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.risks
            .iter()
            .map(|atoms| atoms.iter().map(|a| a.weight).collect())
            .collect()
    }

    pub fn check_covariates(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.covariate_dim {
            return Err(LdrError::param(format!(
                "covariate vector has length {}, parameters expect {}",
                x.len(),
                self.covariate_dim
            )));
        }
        Ok(())
    }

    pub fn check_risk(&self, risk: usize) -> Result<()> {
        if risk >= self.num_risks() {
            return Err(LdrError::param(format!(
                "risk index {risk} out of range for J = {}",
                self.num_risks()
            )));
        }
        Ok(())
    }

    /// Iterate `(risk, atom)` pairs in row-major order.
    pub fn iter_atoms(&self) -> impl Iterator<Item = (usize, &Atom)> {
        self.risks
            .iter()
            .enumerate()
            .flat_map(|(j, atoms)| atoms.iter().map(move |a| (j, a)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(LdrError::Domain(format!("time {t} must be non-negative")))
    }
}

/// `h(t) = sum_jk r_jk / (t + e^{-x'beta_jk})`.
pub fn ldr_hazard(t: f64, x: &[f64], params: &LdrParams) -> Result<f64> {
    check_time(t)?;
    params.check_covariates(x)?;
    Ok(params
        .iter_atoms()
        .map(|(_, a)| a.weight / (t + (-a.linear_predictor(x)).exp()))
        .sum())
}

/// `S(t) = prod_jk (e^{x'beta_jk} t + 1)^{-r_jk}`.
pub fn ldr_survival(t: f64, x: &[f64], params: &LdrParams) -> Result<f64> {
    check_time(t)?;
    params.check_covariates(x)?;
    let log_s: f64 = params
        .iter_atoms()
        .map(|(_, a)| -a.weight * (t * a.linear_predictor(x).exp()).ln_1p())
        .sum();
    Ok(log_s.exp())
}

/// Exact log-likelihood of one record: `ln h_y(t) + ln S(t)` for an observed
/// event (with `h` the all-cause hazard when the type is missing) and
/// `ln S(T)` for a right-censored one. Records with a missing time have no
/// closed form and are rejected.
pub fn ldr_log_likelihood(record: &ObservationRecord, params: &LdrParams) -> Result<f64> {
    let x = record.covariates();
    params.check_covariates(x)?;
    let risk_hazard = |j: usize, t: f64| -> f64 {
        params
            .atoms(j)
            .iter()
            .map(|a| a.weight / (t + (-a.linear_predictor(x)).exp()))
            .sum()
    };
    match (record.time(), record.event()) {
        (TimeStatus::Observed(t), EventStatus::Known(j)) => {
            params.check_risk(j)?;
            Ok(risk_hazard(j, t).ln() + ldr_survival(t, x, params)?.ln())
        }
        (TimeStatus::Observed(t), EventStatus::Missing) => {
            Ok(ldr_hazard(t, x, params)?.ln() + ldr_survival(t, x, params)?.ln())
        }
        (TimeStatus::RightCensored(t), _) => {
            let log_s: f64 = params
                .iter_atoms()
                .map(|(_, a)| -a.weight * (t * a.linear_predictor(x).exp()).ln_1p())
                .sum();
            Ok(log_s)
        }
        (TimeStatus::Missing, _) => Err(LdrError::param(
            "records with a missing time have no closed-form likelihood",
        )),
    }
}

/// Outcome of one simulated race.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedEvent {
    pub time: f64,
    pub risk: usize,
    pub subrisk: usize,
}

/// Simulate `(t, y, kappa)` for covariates `x`: each atom draws
/// `lambda~ ~ Gamma(r_jk, 1)` and races at rate `e^{x'beta_jk} lambda~`.
pub fn sample_event<R: Rng + ?Sized>(x: &[f64], params: &LdrParams, rng: &mut R) -> Result<SimulatedEvent> {
    params.check_covariates(x)?;
    let mut best = SimulatedEvent {
        time: f64::INFINITY,
        risk: 0,
        subrisk: 0,
    };
    for (j, atoms) in params.risks().iter().enumerate() {
        for (k, a) in atoms.iter().enumerate() {
            let rate = sample_gamma(a.weight, 1.0, rng) * a.linear_predictor(x).exp();
            let t = standard_exponential(rng) / rate;
            if t < best.time {
                best = SimulatedEvent {
                    time: t,
                    risk: j,
                    subrisk: k,
                };
            }
        }
    }
    Ok(best)
}

/// Monte-Carlo cumulative incidence for every risk and every horizon.
///
/// Draws `n_mc` rate vectors `lambda_jk ~ Gamma(r_jk, e^{x'beta_jk})`, cycling
/// through `sources` (posterior draws or a single point estimate), and
/// averages `(sum_k lambda_jk / Lambda) (1 - e^{-tau Lambda})`.
/// Returns `[risk][tau]`.
pub fn cif_table<R: Rng + ?Sized>(
    x: &[f64],
    taus: &[f64],
    sources: &[&LdrParams],
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n_mc == 0 {
        return Err(LdrError::param("n_mc must be at least 1"));
    }
    let first = sources
        .first()
        .ok_or_else(|| LdrError::param("no parameter sources supplied"))?;
    for &tau in taus {
        check_time(tau)?;
    }
    let num_risks = first.num_risks();
    let mut scales = Vec::with_capacity(sources.len());
    for p in sources {
        p.check_covariates(x)?;
        if p.num_risks() != num_risks {
            return Err(LdrError::param("parameter sources disagree on J"));
        }
        scales.push(
            p.risks()
                .iter()
                .map(|atoms| {
                    atoms
                        .iter()
                        .map(|a| (a.weight, a.linear_predictor(x).exp()))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut out = vec![vec![0.0; taus.len()]; num_risks];
    let mut per_risk = vec![0.0; num_risks];
    for m in 0..n_mc {
        let src = &scales[m % scales.len()];
        let mut total = 0.0;
        for (j, atoms) in src.iter().enumerate() {
            let s: f64 = atoms
                .iter()
                .map(|&(shape, scale)| sample_gamma(shape, scale, rng))
                .sum();
            per_risk[j] = s;
            total += s;
        }
        if total <= 0.0 {
            continue;
        }
        for (ti, &tau) in taus.iter().enumerate() {
            let occurred = -(-tau * total).exp_m1();
            for j in 0..num_risks {
                out[j][ti] += per_risk[j] / total * occurred;
            }
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v = (*v / n_mc as f64).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// `CIF_risk(tau) = P(t <= tau, y = risk)` by Monte Carlo.
pub fn cif<R: Rng + ?Sized>(
    x: &[f64],
    tau: f64,
    params: &LdrParams,
    risk: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    params.check_risk(risk)?;
    let table = cif_table(x, &[tau], &[params], n_mc, rng)?;
    Ok(table[risk][0])
}

/// Default retained-mass tolerance for the marginal-time series.
pub const DEFAULT_MASS_TOL: f64 = 1e-4;
/// Hard cap on the number of series terms.
pub const MAX_SERIES_TERMS: usize = 10_000;

/// Distribution of `t ~ Exp(sum_t lambda_t)` with independent
/// `lambda_t ~ Gamma(shape r_t, rate b_t)`: the marginal event time of one
/// subject once the gamma rates are integrated out.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaConvolutionSpec {
    shapes: Vec<f64>,
    rates: Vec<f64>,
    max_rate: f64,
    total_shape: f64,
    log_c: f64,
}

impl GammaConvolutionSpec {
    pub fn new(shapes: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if shapes.is_empty() || shapes.len() != rates.len() {
            return Err(LdrError::param(format!(
                "{} shapes and {} rates",
                shapes.len(),
                rates.len()
            )));
        }
        if shapes.iter().chain(&rates).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(LdrError::param("shapes and rates must be positive and finite"));
        }
        let max_rate = rates.iter().copied().fold(0.0, f64::max);
        let total_shape = shapes.iter().sum();
        let log_c = shapes.iter().zip(&rates).map(|(r, b)| r * (b / max_rate).ln()).sum();
        Ok(Self {
            shapes,
            rates,
            max_rate,
            total_shape,
            log_c,
        })
    }

    /// Marginal time law of a subject with covariates `x`: shapes `r_jk`,
    /// rates `e^{-x'beta_jk}`.
    pub fn for_subject(x: &[f64], params: &LdrParams) -> Result<Self> {
        params.check_covariates(x)?;
        let (shapes, rates) = params
            .iter_atoms()
            .map(|(_, a)| (a.weight, (-a.linear_predictor(x)).exp()))
            .unzip();
        Self::new(shapes, rates)
    }

    pub fn shapes(&self) -> &[f64] {
        &self.shapes
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `b_(1)`, the largest rate.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// `rho = sum_t r_t`.
    pub fn total_shape(&self) -> f64 {
        self.total_shape
    }

    /// `c = prod_t (b_t / b_(1))^{r_t}`.
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    /// Exact survival `prod_t (b_t / (q + b_t))^{r_t}`.
    pub fn exact_survival(&self, q: f64) -> f64 {
        self.shapes
            .iter()
            .zip(&self.rates)
            .map(|(r, b)| -r * (q / b).ln_1p())
            .sum::<f64>()
            .exp()
    }

    fn gamma_coefficient(&self, h: usize) -> f64 {
        self.shapes
            .iter()
            .zip(&self.rates)
            .map(|(r, b)| r * (1.0 - b / self.max_rate).powi(h as i32))
            .sum::<f64>()
            / h as f64
    }

    /// Truncate the series at the first `M` whose retained mass
    /// `c sum_{m<=M} delta_m` reaches `1 - mass_tol`.
    pub fn series(&self, mass_tol: f64) -> Result<TruncatedSeries> {
        if !(mass_tol > 0.0 && mass_tol < 1.0) {
            return Err(LdrError::param(format!("mass tolerance {mass_tol} must lie in (0, 1)")));
        }
        const RESCALE: f64 = 1e200;
        let target = (1.0 - mass_tol).ln();
        // delta_m = scaled[m] * e^{log_scale - log_c}; storing c * delta_m.
        let mut scaled = vec![1.0];
        let mut log_scale = self.log_c;
        let mut gammas: Vec<f64> = vec![0.0];
        let mut scaled_sum = 1.0;
        loop {
            let log_mass = log_scale + f64::ln(scaled_sum);
            if log_mass >= target {
                break;
            }
            let m = scaled.len() - 1;
            if m >= MAX_SERIES_TERMS {
                return Err(LdrError::Convergence(format!(
                    "retained mass {:.6} after {MAX_SERIES_TERMS} terms",
                    log_mass.exp()
                )));
            }
            let next = m + 1;
            gammas.push(self.gamma_coefficient(next));
            let value: f64 = (1..=next).map(|h| h as f64 * gammas[h] * scaled[next - h]).sum::<f64>() / next as f64;
            scaled.push(value);
            scaled_sum += value;
            if value > RESCALE || scaled_sum > RESCALE {
                for s in &mut scaled {
                    *s /= RESCALE;
                }
                scaled_sum /= RESCALE;
                log_scale += RESCALE.ln();
            }
        }
        let weights = scaled
            .iter()
            .map(|&s| if s > 0.0 { (log_scale + s.ln()).exp() } else { 0.0 })
            .collect();
        Ok(TruncatedSeries {
            weights,
            total_shape: self.total_shape,
            max_rate: self.max_rate,
            mean_time_scale: 1.0 / self.shapes.iter().zip(&self.rates).map(|(r, b)| r / b).sum::<f64>(),
        })
    }
}

/// Finite truncation of the marginal-time CDF series. `weights[m]` holds
/// `c * delta_m`.
#[derive(Debug, Clone)]
pub struct TruncatedSeries {
    weights: Vec<f64>,
    total_shape: f64,
    max_rate: f64,
    mean_time_scale: f64,
}

impl TruncatedSeries {
    /// Index `M` of the last retained term.
    pub fn truncation(&self) -> usize {
        self.weights.len() - 1
    }

    /// Retained mass `c sum_{m<=M} delta_m`.
    pub fn retained_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `c delta_m` for `m = 0..=M`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `1 - sum_{m<=M} c delta_m (b_(1) / (q + b_(1)))^{rho + m}`, clamped to `[0, 1]`.
    pub fn cdf(&self, q: f64) -> f64 {
        let log_u = -(q.max(0.0) / self.max_rate).ln_1p();
        let tail: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(m, w)| w * ((self.total_shape + m as f64) * log_u).exp())
            .sum();
        (1.0 - tail).clamp(0.0, 1.0)
    }

    /// Invert the truncated CDF at `u` by bisection on a geometrically grown
    /// bracket.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if u <= self.cdf(0.0) {
            return Ok(0.0);
        }
        let mut hi = self.mean_time_scale.max(1e-300);
        let mut doublings = 0;
        while self.cdf(hi) < u {
            hi *= 2.0;
            doublings += 1;
            if !hi.is_finite() || doublings > 4000 {
                return Err(LdrError::Numerical(format!(
                    "could not bracket quantile {u} of the marginal time"
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..2000 {
            if hi - lo <= 1e-10 {
                return Ok(0.5 * (lo + hi));
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(LdrError::Numerical(format!(
            "bisection for quantile {u} did not converge"
        )))
    }
}

/// Truncated-series CDF `P(t < q)` of the marginal event time.
pub fn marginal_time_cdf(q: f64, spec: &GammaConvolutionSpec, mass_tol: f64) -> Result<f64> {
    check_time(q)?;
    Ok(spec.series(mass_tol)?.cdf(q))
}

/// Inverse-CDF draw of the marginal event time.
pub fn sample_marginal_time<R: Rng + ?Sized>(spec: &GammaConvolutionSpec, mass_tol: f64, rng: &mut R) -> Result<f64> {
    let series = spec.series(mass_tol)?;
    let u: f64 = rng.sample(rand_distr::Open01);
    series.quantile(u)
}

/// Many draws sharing one series expansion.
pub fn sample_marginal_times<R: Rng + ?Sized>(
    spec: &GammaConvolutionSpec,
    mass_tol: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let series = spec.series(mass_tol)?;
    (0..count)
        .map(|_| series.quantile(rng.sample(rand_distr::Open01)))
        .collect()
}
