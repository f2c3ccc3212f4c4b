//! Data-augmentation Gibbs sampler for the truncated gamma-process LDR model.
//!
//! Latent state per subject: sub-risk rates `lambda_ijk`, an imputed event
//! time `t_i` and the winning atom `(y_i, kappa_i)`. Coefficients are updated
//! through the negative-binomial form of the likelihood with Polya-Gamma
//! augmentation; atom weights through Chinese-restaurant-table counts.
//!
//! One sweep runs: lambda refresh, sub-risk assignment, time imputation,
//! beta (with omega), alpha, (l, gamma0, r), c0, pruning. The lambda refresh
//! comes first because the beta and r updates integrate lambda out, so the
//! rates must be redrawn before the next assignment reads them.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EventStatus, ObservationRecord, TimeStatus};
use crate::distributions::{
    crt_unchecked, polya_gamma_unchecked, sample_gamma, sample_gamma_log_scale, sample_mvn_canonical,
    standard_exponential,
};
use crate::error::{LdrError, Result};
use crate::model::LdrParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Shape and rate of the coefficient precisions `alpha`.
    pub a0: f64,
    pub b0: f64,
    /// Shape and rate of the concentrations `gamma0`.
    pub e0: f64,
    pub f0: f64,
    /// Shape and rate of the scales `c0`.
    pub e1: f64,
    pub f1: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            a0: 0.01,
            b0: 0.01,
            e0: 0.01,
            f0: 0.01,
            e1: 0.01,
            f1: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn uniform(v: f64) -> Self {
        Self {
            a0: v,
            b0: v,
            e0: v,
            f0: v,
            e1: v,
            f1: v,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.a0, self.b0, self.e0, self.f0, self.e1, self.f1];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(LdrError::param("hyperparameters must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(rename = "K")]
    pub num_subrisks: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Permanently mask atoms that win no subject in a sweep.
    pub prune: bool,
    /// Standard deviation of the initial coefficient draws.
    pub init_sd: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 8_000,
            thin: 1,
            num_subrisks: 10,
            seed: 0,
            hyperparams: Hyperparams::default(),
            prune: true,
            init_sd: 0.1,
        }
    }
}

impl ChainConfig {
    /// Shorter run for tests and quick experiments.
    pub fn fast() -> Self {
        Self {
            iterations: 2_000,
            burn_in: 1_500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(LdrError::param(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(LdrError::param("thin must be at least 1"));
        }
        if self.num_subrisks == 0 {
            return Err(LdrError::param("K must be at least 1"));
        }
        if !(self.init_sd >= 0.0 && self.init_sd.is_finite()) {
            return Err(LdrError::param("init_sd must be non-negative"));
        }
        self.hyperparams.validate()
    }
}

/// Full augmented state. Atom `a = j * K + k`; per-subject arrays are laid
/// out as `i * (J * K) + a`.
#[derive(Debug, Clone)]
pub struct GibbsState {
    num_risks: usize,
    num_subrisks: usize,
    dim: usize,
    n: usize,
    lambda: Vec<f64>,
    eta: Vec<f64>,
    omega: Vec<f64>,
    time: Vec<f64>,
    log_time: Vec<f64>,
    assign: Vec<usize>,
    counts: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    r: Vec<f64>,
    gamma0: Vec<f64>,
    c0: Vec<f64>,
    active: Vec<bool>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn categorical<R: Rng + ?Sized>(weights: impl Iterator<Item = (usize, f64)> + Clone, rng: &mut R) -> Option<usize> {
    let total: f64 = weights.clone().map(|(_, w)| w).sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (a, w) in weights {
        if w <= 0.0 {
            continue;
        }
        last = Some(a);
        if u < w {
            return Some(a);
        }
        u -= w;
    }
    last
}

impl GibbsState {
    fn empty(num_risks: usize, num_subrisks: usize, dim: usize, n: usize) -> Self {
        let atoms = num_risks * num_subrisks;
        Self {
            num_risks,
            num_subrisks,
            dim,
            n,
            lambda: vec![0.0; n * atoms],
            eta: vec![0.0; n * atoms],
            omega: vec![0.0; n * atoms],
            time: vec![1.0; n],
            log_time: vec![0.0; n],
            assign: vec![0; n],
            counts: vec![0; atoms],
            alpha: vec![1.0; atoms * dim],
            beta: vec![0.0; atoms * dim],
            r: vec![1.0; atoms],
            gamma0: vec![1.0; num_risks],
            c0: vec![1.0; num_risks],
            active: vec![true; atoms],
        }
    }

    fn check_data(num_risks: usize, dim: usize, data: &[ObservationRecord]) -> Result<()> {
        for (i, rec) in data.iter().enumerate() {
            if rec.covariates().len() != dim {
                return Err(LdrError::param(format!(
                    "record {i} has {} covariates, expected {dim}",
                    rec.covariates().len()
                )));
            }
            if let EventStatus::Known(j) = rec.event() {
                if j >= num_risks {
                    return Err(LdrError::param(format!("record {i} has risk {j} but J = {num_risks}")));
                }
            }
        }
        Ok(())
    }

    /// Starting point for a chain: unit weights and precisions, intercepts
    /// matched to the observed time scale, random slopes with sd `init_sd`.
    pub fn initialize<R: Rng + ?Sized>(data: &Dataset, config: &ChainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(LdrError::param("cannot run a chain on an empty dataset"));
        }
        let (j_count, k_count, dim) = (data.num_risks(), config.num_subrisks, data.covariate_dim());
        let records = data.records();
        Self::check_data(j_count, dim, records)?;
        let mut s = Self::empty(j_count, k_count, dim, records.len());
        let known: Vec<f64> = records
            .iter()
            .filter_map(|r| match r.time() {
                TimeStatus::Observed(t) | TimeStatus::RightCensored(t) => Some(t),
                TimeStatus::Missing => None,
            })
            .collect();
        let mean_time = if known.is_empty() {
            1.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        };
        let intercept = -((j_count * k_count) as f64 * mean_time).ln();
        for a in 0..j_count * k_count {
            for v in 0..dim {
                let noise: f64 = config.init_sd * rng.sample::<f64, _>(StandardNormal);
                s.beta[a * dim + v] = if v == 0 { intercept + noise } else { noise };
            }
        }
        s.refresh_eta(records);
        for i in 0..s.n {
            s.time[i] = match records[i].time() {
                TimeStatus::Observed(t) | TimeStatus::RightCensored(t) => t,
                TimeStatus::Missing => mean_time,
            };
            s.log_time[i] = s.time[i].ln();
        }
        s.draw_lambda_prior(rng);
        step_impute_time(&mut s, records, rng)?;
        step_assign_subrisk(&mut s, records, rng)?;
        Ok(s)
    }

    /// Every parameter drawn from its prior; rates from their conditional
    /// prior given the coefficients. Times and assignments come from `data`
    /// where observed and from the race otherwise.
    pub fn from_prior<R: Rng + ?Sized>(
        data: &[ObservationRecord],
        num_risks: usize,
        num_subrisks: usize,
        dim: usize,
        hyper: &Hyperparams,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        if num_risks == 0 || num_subrisks == 0 || dim == 0 {
            return Err(LdrError::param("J, K and the covariate dimension must be positive"));
        }
        Self::check_data(num_risks, dim, data)?;
        let mut s = Self::empty(num_risks, num_subrisks, dim, data.len());
        let kf = num_subrisks as f64;
        for j in 0..num_risks {
            s.gamma0[j] = sample_gamma(hyper.e0, 1.0 / hyper.f0, rng);
            s.c0[j] = sample_gamma(hyper.e1, 1.0 / hyper.f1, rng);
            for k in 0..num_subrisks {
                let a = j * num_subrisks + k;
                s.r[a] = sample_gamma(s.gamma0[j] / kf, 1.0 / s.c0[j], rng);
                for v in 0..dim {
                    let alpha = sample_gamma(hyper.a0, 1.0 / hyper.b0, rng).max(ALPHA_FLOOR);
                    s.alpha[a * dim + v] = alpha;
                    s.beta[a * dim + v] = rng.sample::<f64, _>(StandardNormal) / alpha.sqrt();
                }
            }
        }
        s.refresh_eta(data);
        s.draw_lambda_prior(rng);
        for i in 0..s.n {
            s.time[i] = match data[i].time() {
                TimeStatus::Observed(t) | TimeStatus::RightCensored(t) => t,
                TimeStatus::Missing => 1.0,
            };
        }
        step_impute_time(&mut s, data, rng)?;
        step_assign_subrisk(&mut s, data, rng)?;
        Ok(s)
    }

    fn draw_lambda_prior<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let atoms = self.atoms();
        for i in 0..self.n {
            for a in 0..atoms {
                let idx = i * atoms + a;
                self.lambda[idx] = if self.active[a] {
                    sample_gamma_log_scale(self.r[a], self.eta[idx], rng)
                } else {
                    0.0
                };
            }
        }
    }

    fn refresh_eta(&mut self, data: &[ObservationRecord]) {
        let atoms = self.atoms();
        for (i, rec) in data.iter().enumerate() {
            let x = rec.covariates();
            for a in 0..atoms {
                self.eta[i * atoms + a] = self.beta[a * self.dim..(a + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum();
            }
        }
    }

    fn recount(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for &a in &self.assign {
            self.counts[a] += 1;
        }
    }

    #[inline]
    fn atoms(&self) -> usize {
        self.num_risks * self.num_subrisks
    }

    #[inline]
    fn atom(&self, j: usize, k: usize) -> usize {
        j * self.num_subrisks + k
    }

    pub fn num_subjects(&self) -> usize {
        self.n
    }

    pub fn num_risks(&self) -> usize {
        self.num_risks
    }

    pub fn num_subrisks(&self) -> usize {
        self.num_subrisks
    }

    pub fn covariate_dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self, i: usize, j: usize, k: usize) -> f64 {
        self.lambda[i * self.atoms() + self.atom(j, k)]
    }

    pub fn omega(&self, i: usize, j: usize, k: usize) -> f64 {
        self.omega[i * self.atoms() + self.atom(j, k)]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.time[i]
    }

    /// Winning `(risk, sub-risk)` of subject `i`.
    pub fn assignment(&self, i: usize) -> (usize, usize) {
        let a = self.assign[i];
        (a / self.num_subrisks, a % self.num_subrisks)
    }

    /// `n_ijk`.
    pub fn indicator(&self, i: usize, j: usize, k: usize) -> usize {
        (self.assign[i] == self.atom(j, k)) as usize
    }

    /// `m_jk`.
    pub fn count(&self, j: usize, k: usize) -> usize {
        self.counts[self.atom(j, k)]
    }

    pub fn r(&self, j: usize, k: usize) -> f64 {
        self.r[self.atom(j, k)]
    }

    pub fn beta(&self, j: usize, k: usize) -> &[f64] {
        let a = self.atom(j, k);
        &self.beta[a * self.dim..(a + 1) * self.dim]
    }

    pub fn alpha(&self, j: usize, k: usize) -> &[f64] {
        let a = self.atom(j, k);
        &self.alpha[a * self.dim..(a + 1) * self.dim]
    }

    pub fn gamma0(&self, j: usize) -> f64 {
        self.gamma0[j]
    }

    pub fn c0(&self, j: usize) -> f64 {
        self.c0[j]
    }

    pub fn is_active(&self, j: usize, k: usize) -> bool {
        self.active[self.atom(j, k)]
    }

    pub fn active_per_risk(&self) -> Vec<usize> {
        (0..self.num_risks)
            .map(|j| (0..self.num_subrisks).filter(|&k| self.is_active(j, k)).count())
            .collect()
    }

    pub fn set_lambda(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = i * self.atoms() + self.atom(j, k);
        self.lambda[idx] = value;
    }

    pub fn set_time(&mut self, i: usize, t: f64) {
        self.time[i] = t;
        self.log_time[i] = t.ln();
    }

    pub fn set_assignment(&mut self, i: usize, j: usize, k: usize) {
        self.assign[i] = self.atom(j, k);
        self.recount();
    }

    pub fn set_r(&mut self, j: usize, k: usize, value: f64) {
        let a = self.atom(j, k);
        self.r[a] = value;
    }

    pub fn set_gamma0(&mut self, j: usize, value: f64) {
        self.gamma0[j] = value;
    }

    pub fn set_c0(&mut self, j: usize, value: f64) {
        self.c0[j] = value;
    }

    pub fn set_beta(&mut self, j: usize, k: usize, beta: &[f64], data: &[ObservationRecord]) {
        let a = self.atom(j, k);
        self.beta[a * self.dim..(a + 1) * self.dim].copy_from_slice(beta);
        self.refresh_eta(data);
    }

    /// Replace the outcomes by a fresh race over the current rates: every
    /// subject gets an observed time and known type. Returns the simulated
    /// records (covariates taken from `data`).
    pub fn resimulate_outcomes<R: Rng + ?Sized>(
        &mut self,
        data: &[ObservationRecord],
        rng: &mut R,
    ) -> Result<Vec<ObservationRecord>> {
        let atoms = self.atoms();
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut best = (0, f64::INFINITY);
            for a in 0..atoms {
                let rate = self.lambda[i * atoms + a];
                if rate > 0.0 {
                    let t = standard_exponential(rng) / rate;
                    if t < best.1 {
                        best = (a, t);
                    }
                }
            }
            let (a, t) = best;
            if !t.is_finite() || t <= 0.0 {
                return Err(LdrError::Numerical(format!("race for subject {i} produced time {t}")));
            }
            self.assign[i] = a;
            self.time[i] = t;
            self.log_time[i] = t.ln();
            out.push(ObservationRecord::observed(
                data[i].covariates().to_vec(),
                t,
                a / self.num_subrisks,
            )?);
        }
        self.recount();
        Ok(out)
    }

    /// Frozen parameters of the active atoms.
    pub fn params(&self) -> Result<LdrParams> {
        self.snapshot(0, 0.0).params()
    }

    fn snapshot(&self, sweep: usize, loglik: f64) -> StoredDraw {
        let (jn, kn) = (self.num_risks, self.num_subrisks);
        StoredDraw {
            sweep,
            r: (0..jn).map(|j| (0..kn).map(|k| self.r(j, k)).collect()).collect(),
            beta: (0..jn)
                .map(|j| (0..kn).map(|k| self.beta(j, k).to_vec()).collect())
                .collect(),
            active_mask: (0..jn)
                .map(|j| (0..kn).map(|k| self.is_active(j, k)).collect())
                .collect(),
            loglik,
        }
    }
}

/// Step: redraw `lambda_ijk ~ Gamma(r + n_ijk, scale e^eta / (1 + t e^eta))`
/// for active atoms.
pub fn step_sample_lambda<R: Rng + ?Sized>(state: &mut GibbsState, rng: &mut R) {
    let atoms = state.atoms();
    for i in 0..state.n {
        let t = state.time[i];
        let winner = state.assign[i];
        for a in 0..atoms {
            let idx = i * atoms + a;
            state.lambda[idx] = if state.active[a] {
                let shape = state.r[a] + (winner == a) as u8 as f64;
                // ln(e^eta / (1 + t e^eta)), stable for either sign of eta.
                let eta = state.eta[idx];
                let log_scale = if eta > 0.0 {
                    -((-eta).exp() + t).ln()
                } else {
                    eta - (t * eta.exp()).ln_1p()
                };
                sample_gamma_log_scale(shape, log_scale, rng)
            } else {
                0.0
            };
        }
    }
}

/// Step: sample the winning sub-risk in proportion to the rates, over the
/// known risk's atoms or over every atom when the type is missing.
pub fn step_assign_subrisk<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &[ObservationRecord],
    rng: &mut R,
) -> Result<()> {
    let atoms = state.atoms();
    let kn = state.num_subrisks;
    for (i, rec) in data.iter().enumerate() {
        let row = &state.lambda[i * atoms..(i + 1) * atoms];
        let active = &state.active;
        let pick = match rec.event() {
            EventStatus::Known(j) => {
                categorical((j * kn..(j + 1) * kn).filter(|&a| active[a]).map(|a| (a, row[a])), rng)
            }
            EventStatus::Missing => categorical((0..atoms).filter(|&a| active[a]).map(|a| (a, row[a])), rng),
        };
        state.assign[i] =
            pick.ok_or_else(|| LdrError::Invariant(format!("subject {i} has no active atom with positive rate")))?;
    }
    state.recount();
    Ok(())
}

/// Step: observed times are kept; censored and missing times become
/// `T_c + Exp(sum lambda)` with `T_c = 0` when the time is missing.
pub fn step_impute_time<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &[ObservationRecord],
    rng: &mut R,
) -> Result<()> {
    let atoms = state.atoms();
    for (i, rec) in data.iter().enumerate() {
        let t = match rec.time() {
            TimeStatus::Observed(t) => t,
            status => {
                let lower = match status {
                    TimeStatus::RightCensored(c) => c,
                    _ => 0.0,
                };
                let total: f64 = state.lambda[i * atoms..(i + 1) * atoms].iter().sum();
                if !(total > 0.0) {
                    return Err(LdrError::Invariant(format!("subject {i} has zero total rate")));
                }
                let t = lower + standard_exponential(rng) / total;
                if !(t > 0.0 && t.is_finite()) {
                    return Err(LdrError::Numerical(format!("imputed time {t} for subject {i}")));
                }
                t
            }
        };
        state.time[i] = t;
        state.log_time[i] = t.ln();
    }
    Ok(())
}

/// Step: `omega_ijk ~ PG(r + n, eta + ln t)`, then
/// `beta_jk ~ N(P^-1 h, P^-1)` with `P = diag(alpha) + sum omega x x'` and
/// `h = sum x ((n - r)/2 - omega ln t)`. Masked atoms draw from the prior.
pub fn step_sample_beta<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &[ObservationRecord],
    rng: &mut R,
) -> Result<()> {
    let atoms = state.atoms();
    let d = state.dim;
    let mut precision = vec![0.0; d * d];
    let mut linear = vec![0.0; d];
    for a in 0..atoms {
        let alpha = &state.alpha[a * d..(a + 1) * d];
        if !state.active[a] {
            for v in 0..d {
                state.beta[a * d + v] = rng.sample::<f64, _>(StandardNormal) / alpha[v].sqrt();
            }
            continue;
        }
        precision.iter_mut().for_each(|p| *p = 0.0);
        linear.iter_mut().for_each(|h| *h = 0.0);
        for v in 0..d {
            precision[v * d + v] = alpha[v];
        }
        let r = state.r[a];
        for (i, rec) in data.iter().enumerate() {
            let idx = i * atoms + a;
            let n = (state.assign[i] == a) as u8 as f64;
            let lt = state.log_time[i];
            let psi = state.eta[idx] + lt;
            let w = polya_gamma_unchecked(r + n, psi, rng);
            state.omega[idx] = w;
            let x = rec.covariates();
            let coef = 0.5 * (n - r) - w * lt;
            for u in 0..d {
                linear[u] += coef * x[u];
                let wx = w * x[u];
                for v in u..d {
                    precision[u * d + v] += wx * x[v];
                }
            }
        }
        for u in 0..d {
            for v in 0..u {
                precision[u * d + v] = precision[v * d + u];
            }
        }
        let p = DMatrix::from_row_slice(d, d, &precision);
        let h = DVector::from_column_slice(&linear);
        let draw = sample_mvn_canonical(&p, &h, rng)?;
        if draw.iter().any(|v| !v.is_finite()) {
            return Err(LdrError::Numerical(format!("non-finite coefficient draw for atom {a}")));
        }
        state.beta[a * d..(a + 1) * d].copy_from_slice(draw.as_slice());
    }
    state.refresh_eta(data);
    Ok(())
}

/// Precisions below this are raised to it. With vague `(a0, b0)` the prior
/// puts visible mass on precisions like 1e-100, whose coefficient draws
/// overflow `e^{x'beta}`.
pub const ALPHA_FLOOR: f64 = 1e-6;

/// Step: `alpha_vjk ~ Gamma(a0 + 1/2, scale 1 / (b0 + beta^2 / 2))`.
pub fn step_sample_alpha<R: Rng + ?Sized>(state: &mut GibbsState, hyper: &Hyperparams, rng: &mut R) {
    for (alpha, beta) in state.alpha.iter_mut().zip(&state.beta) {
        *alpha = sample_gamma(hyper.a0 + 0.5, 1.0 / (hyper.b0 + 0.5 * beta * beta), rng).max(ALPHA_FLOOR);
    }
}

/// `sum_i ln(1 + t_i e^{eta_ijk})` for one atom.
fn exposure(state: &GibbsState, a: usize) -> f64 {
    let atoms = state.atoms();
    (0..state.n)
        .map(|i| softplus(state.eta[i * atoms + a] + state.log_time[i]))
        .sum()
}

/// Step: table counts `l_jk ~ CRT(m_jk, gamma0/K)`, then
/// `gamma0_j ~ Gamma(e0 + sum l, 1/(f0 + sum_k ln(1 + S_jk/c0)/K))` and
/// `r_jk ~ Gamma(m_jk + gamma0/K, 1/(c0 + S_jk))`, where
/// `S_jk = sum_i ln(1 + t_i e^{eta_ijk})` over active atoms.
pub fn step_sample_r_gamma0<R: Rng + ?Sized>(state: &mut GibbsState, hyper: &Hyperparams, rng: &mut R) {
    let kn = state.num_subrisks;
    let kf = kn as f64;
    for j in 0..state.num_risks {
        let c0 = state.c0[j];
        let mut tables = 0u64;
        let mut log_term = 0.0;
        let mut s = vec![0.0; kn];
        for k in 0..kn {
            let a = j * kn + k;
            if state.active[a] {
                s[k] = exposure(state, a);
                tables += crt_unchecked(state.counts[a] as u64, state.gamma0[j] / kf, rng);
                // ln(1 + S/c0) without forming S/c0, which overflows for tiny c0.
                log_term += (c0 + s[k]).ln() - c0.ln();
            }
        }
        state.gamma0[j] = sample_gamma(hyper.e0 + tables as f64, 1.0 / (hyper.f0 + log_term / kf), rng);
        for k in 0..kn {
            let a = j * kn + k;
            let m = if state.active[a] { state.counts[a] as f64 } else { 0.0 };
            state.r[a] = sample_gamma(m + state.gamma0[j] / kf, 1.0 / (c0 + s[k]), rng);
        }
    }
}

/// Step: `c0_j ~ Gamma(e1 + gamma0_j, 1/(f1 + sum_k r_jk))`.
pub fn step_sample_c0<R: Rng + ?Sized>(state: &mut GibbsState, hyper: &Hyperparams, rng: &mut R) {
    let kn = state.num_subrisks;
    for j in 0..state.num_risks {
        let total: f64 = state.r[j * kn..(j + 1) * kn].iter().sum();
        state.c0[j] = sample_gamma(hyper.e1 + state.gamma0[j], 1.0 / (hyper.f1 + total), rng);
    }
}

/// Step: mask every atom that won no subject. Masks are permanent.
pub fn step_prune(state: &mut GibbsState) {
    let atoms = state.atoms();
    for a in 0..atoms {
        if state.active[a] && state.counts[a] == 0 {
            state.active[a] = false;
            for i in 0..state.n {
                state.lambda[i * atoms + a] = 0.0;
            }
        }
    }
}

/// `sum_i [-ln t_i + sum_jk ln NB(n_ijk; r_jk, sigmoid(eta + ln t_i))]` over
/// active atoms at the current augmented state.
pub fn log_likelihood(state: &GibbsState) -> f64 {
    let atoms = state.atoms();
    let mut total = 0.0;
    for i in 0..state.n {
        let lt = state.log_time[i];
        total -= lt;
        for a in 0..atoms {
            if !state.active[a] {
                continue;
            }
            let psi = state.eta[i * atoms + a] + lt;
            let r = state.r[a];
            total -= r * softplus(psi);
            if state.assign[i] == a {
                total += r.ln() - softplus(-psi);
            }
        }
    }
    total
}

/// One full sweep.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &[ObservationRecord],
    config: &ChainConfig,
    rng: &mut R,
) -> Result<()> {
    let hyper = &config.hyperparams;
    step_sample_lambda(state, rng);
    step_assign_subrisk(state, data, rng)?;
    step_impute_time(state, data, rng)?;
    step_sample_beta(state, data, rng)?;
    step_sample_alpha(state, hyper, rng);
    step_sample_r_gamma0(state, hyper, rng);
    step_sample_c0(state, hyper, rng);
    if config.prune {
        step_prune(state);
    }
    Ok(())
}

/// One stored posterior draw over all `J x K` atoms, masked ones included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDraw {
    pub sweep: usize,
    pub r: Vec<Vec<f64>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub active_mask: Vec<Vec<bool>>,
    pub loglik: f64,
}

impl StoredDraw {
    /// Parameters of the active atoms only.
    pub fn params(&self) -> Result<LdrParams> {
        let k = self.r.first().map(Vec::len).unwrap_or(0);
        let mut r = Vec::with_capacity(self.r.len());
        let mut beta = Vec::with_capacity(self.r.len());
        for j in 0..self.r.len() {
            let keep: Vec<usize> = (0..self.r[j].len()).filter(|&k| self.active_mask[j][k]).collect();
            r.push(keep.iter().map(|&k| self.r[j][k]).collect());
            beta.push(keep.iter().map(|&k| self.beta[j][k].clone()).collect());
        }
        LdrParams::new(k.max(1), r, beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub sweep: usize,
    pub active_per_risk: Vec<usize>,
    pub loglik: f64,
}

/// Output of one chain.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub num_risks: usize,
    pub num_subrisks: usize,
    pub draws: Vec<StoredDraw>,
    pub diagnostics: Vec<SweepDiagnostics>,
    /// Per subject, how often each risk won after burn-in.
    pub event_votes: Vec<Vec<u32>>,
    params: Vec<LdrParams>,
}

impl PosteriorSamples {
    pub fn from_draws(num_risks: usize, num_subrisks: usize, draws: Vec<StoredDraw>) -> Result<Self> {
        if draws.is_empty() {
            return Err(LdrError::param("posterior has no stored draws"));
        }
        let params = draws.iter().map(StoredDraw::params).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_risks,
            num_subrisks,
            draws,
            diagnostics: Vec::new(),
            event_votes: Vec::new(),
            params,
        })
    }

    /// Frozen parameters of every stored draw.
    pub fn params(&self) -> &[LdrParams] {
        &self.params
    }

    pub fn param_refs(&self) -> Vec<&LdrParams> {
        self.params.iter().collect()
    }

    /// Posterior mean of each `r_jk`, counting masked draws as zero.
    pub fn mean_weights(&self) -> Vec<Vec<f64>> {
        let n = self.draws.len() as f64;
        (0..self.num_risks)
            .map(|j| {
                (0..self.num_subrisks)
                    .map(|k| {
                        self.draws
                            .iter()
                            .filter(|d| d.active_mask[j][k])
                            .map(|d| d.r[j][k])
                            .sum::<f64>()
                            / n
                            + 0.0
                    })
                    .collect()
            })
            .collect()
    }

    /// Number of atoms per risk whose mean weight is at least `1/ratio` of
    /// the risk's largest mean weight.
    pub fn dominant_atoms(&self, ratio: f64) -> Vec<usize> {
        self.mean_weights()
            .iter()
            .map(|w| {
                let top = w.iter().copied().fold(0.0, f64::max);
                w.iter().filter(|&&v| v > 0.0 && v * ratio >= top).count()
            })
            .collect()
    }

    /// Majority post-burn-in event type of subject `i`.
    pub fn majority_event(&self, i: usize) -> Option<usize> {
        let votes = self.event_votes.get(i)?;
        let (j, &best) = votes.iter().enumerate().max_by_key(|(_, v)| **v)?;
        (best > 0).then_some(j)
    }

    /// Point estimate: posterior means of atoms active in the final draw.
    pub fn posterior_mean(&self) -> Result<LdrParams> {
        let last = self.draws.last().ok_or_else(|| LdrError::param("no draws"))?;
        let mut r = Vec::new();
        let mut beta = Vec::new();
        for j in 0..self.num_risks {
            let mut rj = Vec::new();
            let mut bj = Vec::new();
            for k in 0..self.num_subrisks {
                if !last.active_mask[j][k] {
                    continue;
                }
                let live: Vec<&StoredDraw> = self.draws.iter().filter(|d| d.active_mask[j][k]).collect();
                let n = live.len() as f64;
                rj.push(live.iter().map(|d| d.r[j][k]).sum::<f64>() / n);
                let dim = last.beta[j][k].len();
                bj.push(
                    (0..dim)
                        .map(|v| live.iter().map(|d| d.beta[j][k][v]).sum::<f64>() / n)
                        .collect(),
                );
            }
            r.push(rj);
            beta.push(bj);
        }
        LdrParams::new(self.num_subrisks, r, beta)
    }

    /// JSON lines, one stored draw per line.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.draws {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n").map_err(|e| LdrError::io("<trace>", e))?;
        }
        Ok(())
    }

    pub fn read_trace<R: BufRead>(reader: R) -> Result<Self> {
        let mut draws = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| LdrError::io("<trace>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            draws.push(serde_json::from_str::<StoredDraw>(&line)?);
        }
        let first = draws.first().ok_or_else(|| LdrError::param("trace is empty"))?;
        let (j, k) = (first.r.len(), first.r.first().map(Vec::len).unwrap_or(0));
        Self::from_draws(j, k, draws)
    }

    /// CSV: sweep, one active-count column per risk, loglik.
    pub fn write_diagnostics<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sweep".to_string()];
        header.extend((1..=self.num_risks).map(|j| format!("active_risk{j}")));
        header.push("loglik".into());
        out.write_record(&header)?;
        for d in &self.diagnostics {
            let mut row = vec![d.sweep.to_string()];
            row.extend(d.active_per_risk.iter().map(|c| c.to_string()));
            row.push(format!("{}", d.loglik));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| LdrError::io("<diagnostics>", e))?;
        Ok(())
    }
}

/// Run one chain and keep the thinned post-burn-in draws.
pub fn run_chain<R: Rng + ?Sized>(data: &Dataset, config: &ChainConfig, rng: &mut R) -> Result<PosteriorSamples> {
    let mut state = GibbsState::initialize(data, config, rng)?;
    let records = data.records();
    let mut draws = Vec::with_capacity((config.iterations - config.burn_in).div_ceil(config.thin));
    let mut diagnostics = Vec::with_capacity(config.iterations);
    let mut votes = vec![vec![0u32; data.num_risks()]; data.len()];
    for s in 0..config.iterations {
        sweep(&mut state, records, config, rng).map_err(|e| LdrError::Sweep {
            sweep: s,
            source: Box::new(e),
        })?;
        let loglik = log_likelihood(&state);
        if !loglik.is_finite() {
            return Err(LdrError::Sweep {
                sweep: s,
                source: Box::new(LdrError::Numerical(format!("log-likelihood {loglik}"))),
            });
        }
        diagnostics.push(SweepDiagnostics {
            sweep: s,
            active_per_risk: state.active_per_risk(),
            loglik,
        });
        if s >= config.burn_in {
            for (i, v) in votes.iter_mut().enumerate() {
                v[state.assignment(i).0] += 1;
            }
            if (s - config.burn_in).is_multiple_of(config.thin) {
                draws.push(state.snapshot(s, loglik));
            }
        }
    }
    let mut samples = PosteriorSamples::from_draws(data.num_risks(), config.num_subrisks, draws)?;
    samples.diagnostics = diagnostics;
    samples.event_votes = votes;
    Ok(samples)
}
