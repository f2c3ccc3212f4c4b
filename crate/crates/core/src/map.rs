//! Maximum a posteriori fitting by Monte-Carlo score-function gradients.
//!
//! With `lambda_jk = lt_jk e^{x'beta_jk}` and `lt_jk ~ Gamma(r_jk, 1)`, each
//! subject contributes `p_i = E[p_t(lt) p_y(lt)]`. Gradients in `beta` are
//! self-normalized ratios over the same draws; gradients in `r` weight the
//! gamma score `ln lt - digamma(r)` by the normalized `p_t p_y`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::data::{Dataset, EventStatus, ObservationRecord, TimeStatus};
use crate::distributions::sample_log_gamma;
use crate::error::{LdrError, Result};
use crate::model::{dot, LdrParams};
use crate::rng::substream;

const LOG_R_MIN: f64 = -23.0;
const LOG_R_MAX: f64 = 23.0;

/// Time factor of one subject's likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeFactor {
    Uncensored(f64),
    RightCensored(f64),
    Missing,
}

/// Event-type factor of one subject's likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFactor {
    Known(usize),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodTerm {
    pub time: TimeFactor,
    pub event: EventFactor,
}

impl LikelihoodTerm {
    pub fn new(time: TimeFactor, event: EventFactor) -> Result<Self> {
        if time == TimeFactor::Missing && event == EventFactor::Missing {
            return Err(LdrError::param("time and event type cannot both be missing"));
        }
        Ok(Self { time, event })
    }

    pub fn from_record(record: &ObservationRecord) -> Result<Self> {
        let time = match record.time() {
            TimeStatus::Observed(t) => TimeFactor::Uncensored(t),
            TimeStatus::RightCensored(t) => TimeFactor::RightCensored(t),
            TimeStatus::Missing => TimeFactor::Missing,
        };
        let event = match record.event() {
            EventStatus::Known(j) => EventFactor::Known(j),
            EventStatus::Missing => EventFactor::Missing,
        };
        Self::new(time, event)
    }
}

/// `M` draws of `lt ~ Gamma(r, 1)` for every atom, stored as logarithms so
/// tiny shapes do not underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaDraws {
    num_atoms: usize,
    log_values: Vec<f64>,
}

impl LambdaDraws {
    pub fn sample<R: Rng + ?Sized>(params: &LdrParams, m: usize, rng: &mut R) -> Result<Self> {
        let shapes: Vec<f64> = params.iter_atoms().map(|(_, a)| a.weight).collect();
        Self::sample_shapes(&shapes, m, rng)
    }

    fn sample_shapes<R: Rng + ?Sized>(shapes: &[f64], m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(LdrError::param("at least one Monte-Carlo draw is required"));
        }
        let mut log_values = Vec::with_capacity(m * shapes.len());
        for _ in 0..m {
            log_values.extend(shapes.iter().map(|&r| sample_log_gamma(r, rng)));
        }
        Ok(Self {
            num_atoms: shapes.len(),
            log_values,
        })
    }

    /// From explicit positive draws, one row per sample in atom order.
    pub fn from_values(rows: &[Vec<f64>]) -> Result<Self> {
        let num_atoms = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || num_atoms == 0 {
            return Err(LdrError::param("draw matrix must be non-empty"));
        }
        let mut log_values = Vec::with_capacity(rows.len() * num_atoms);
        for row in rows {
            if row.len() != num_atoms {
                return Err(LdrError::param("ragged draw matrix"));
            }
            if row.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(LdrError::param("draws must be positive and finite"));
            }
            log_values.extend(row.iter().map(|v| v.ln()));
        }
        Ok(Self { num_atoms, log_values })
    }

    pub fn len(&self) -> usize {
        self.log_values.len() / self.num_atoms
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn num_atoms(&self) -> usize {
        self.num_atoms
    }

    pub fn log_row(&self, m: usize) -> &[f64] {
        &self.log_values[m * self.num_atoms..(m + 1) * self.num_atoms]
    }
}

/// Gradient value with an underflow flag: when every draw has zero
/// likelihood the value is all zeros and `underflow` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub underflow: bool,
}

/// Atoms laid out flat in `iter_atoms` order.
#[derive(Debug, Clone)]
struct FlatParams {
    num_subrisks: usize,
    num_risks: usize,
    risk_of: Vec<usize>,
    r: Vec<f64>,
    beta: Vec<Vec<f64>>,
}

impl FlatParams {
    fn from_params(p: &LdrParams) -> Self {
        let mut risk_of = Vec::new();
        let mut r = Vec::new();
        let mut beta = Vec::new();
        for (j, a) in p.iter_atoms() {
            risk_of.push(j);
            r.push(a.weight);
            beta.push(a.coefficients.clone());
        }
        Self {
            num_subrisks: p.num_subrisks(),
            num_risks: p.num_risks(),
            risk_of,
            r,
            beta,
        }
    }

    fn to_params(&self) -> Result<LdrParams> {
        let mut r = vec![Vec::new(); self.num_risks];
        let mut beta = vec![Vec::new(); self.num_risks];
        for (a, &j) in self.risk_of.iter().enumerate() {
            r[j].push(self.r[a]);
            beta[j].push(self.beta[a].clone());
        }
        LdrParams::new(self.num_subrisks, r, beta)
    }

    fn num_atoms(&self) -> usize {
        self.r.len()
    }

    fn nest<T: Clone>(&self, flat: Vec<T>) -> Vec<Vec<T>> {
        let mut out = vec![Vec::new(); self.num_risks];
        for (a, v) in flat.into_iter().enumerate() {
            out[self.risk_of[a]].push(v);
        }
        out
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct SubjectEval {
    log_p: f64,
    /// Per atom: `sum_m w_m d log f_m / d eta_a`.
    d_eta: Vec<f64>,
    /// Per atom: `sum_m w_m (ln lt_am - digamma(r_a))`.
    d_r: Vec<f64>,
    underflow: bool,
}

fn evaluate_subject(
    term: &LikelihoodTerm,
    x: &[f64],
    flat: &FlatParams,
    draws: &LambdaDraws,
    gradients: bool,
) -> SubjectEval {
    let n_atoms = flat.num_atoms();
    let eta: Vec<f64> = flat.beta.iter().map(|b| dot(b, x)).collect();
    let m = draws.len();
    let mut log_f = Vec::with_capacity(m);
    let mut log_lam = vec![0.0; n_atoms];
    let mut coef_rows: Vec<Vec<f64>> = Vec::with_capacity(if gradients { m } else { 0 });
    for s in 0..m {
        let row = draws.log_row(s);
        for a in 0..n_atoms {
            log_lam[a] = row[a] + eta[a];
        }
        let log_s = log_sum_exp(log_lam.iter().copied());
        let log_y = match term.event {
            EventFactor::Known(y) => log_sum_exp(
                log_lam
                    .iter()
                    .zip(&flat.risk_of)
                    .filter(|(_, &j)| j == y)
                    .map(|(v, _)| *v),
            ),
            EventFactor::Missing => 0.0,
        };
        let s_total = log_s.exp();
        let mut lf = match term.time {
            TimeFactor::Uncensored(t) => log_s - t * s_total,
            TimeFactor::RightCensored(c) => -c * s_total,
            TimeFactor::Missing => 0.0,
        };
        if let EventFactor::Known(_) = term.event {
            lf += log_y - log_s;
        }
        log_f.push(if lf.is_nan() { f64::NEG_INFINITY } else { lf });
        if gradients {
            let coefs = (0..n_atoms)
                .map(|a| {
                    let share = (log_lam[a] - log_s).exp();
                    let lam = log_lam[a].exp();
                    let mut c = match term.time {
                        TimeFactor::Uncensored(t) => share - t * lam,
                        TimeFactor::RightCensored(cens) => -cens * lam,
                        TimeFactor::Missing => 0.0,
                    };
                    if let EventFactor::Known(y) = term.event {
                        if flat.risk_of[a] == y {
                            c += (log_lam[a] - log_y).exp();
                        }
                        c -= share;
                    }
                    c
                })
                .collect();
            coef_rows.push(coefs);
        }
    }
    let lse = log_sum_exp(log_f.iter().copied());
    let log_p = lse - (m as f64).ln();
    let mut out = SubjectEval {
        log_p,
        d_eta: vec![0.0; n_atoms],
        d_r: vec![0.0; n_atoms],
        underflow: lse == f64::NEG_INFINITY,
    };
    if !gradients || out.underflow {
        return out;
    }
    let psi: Vec<f64> = flat.r.iter().map(|&r| digamma(r)).collect();
    for s in 0..m {
        let w = (log_f[s] - lse).exp();
        if w == 0.0 {
            continue;
        }
        let row = draws.log_row(s);
        for a in 0..n_atoms {
            out.d_eta[a] += w * coef_rows[s][a];
            out.d_r[a] += w * (row[a] - psi[a]);
        }
    }
    out
}

fn check_inputs(record: &ObservationRecord, params: &LdrParams, draws: &LambdaDraws) -> Result<LikelihoodTerm> {
    params.check_covariates(record.covariates())?;
    if draws.num_atoms() != params.num_atoms() {
        return Err(LdrError::param(format!(
            "draws cover {} atoms, parameters have {}",
            draws.num_atoms(),
            params.num_atoms()
        )));
    }
    let term = LikelihoodTerm::from_record(record)?;
    if let EventFactor::Known(y) = term.event {
        params.check_risk(y)?;
    }
    Ok(term)
}

/// `ln (1/M) sum_m p_t(lt_m) p_y(lt_m)` for one subject.
pub fn mc_log_likelihood(record: &ObservationRecord, params: &LdrParams, draws: &LambdaDraws) -> Result<f64> {
    let term = check_inputs(record, params, draws)?;
    let flat = FlatParams::from_params(params);
    Ok(evaluate_subject(&term, record.covariates(), &flat, draws, false).log_p)
}

/// Self-normalized gradient of [`mc_log_likelihood`] in every `beta_jk`,
/// shaped `[risk][atom][coefficient]`.
pub fn grad_beta(
    record: &ObservationRecord,
    params: &LdrParams,
    draws: &LambdaDraws,
) -> Result<Flagged<Vec<Vec<Vec<f64>>>>> {
    let term = check_inputs(record, params, draws)?;
    let flat = FlatParams::from_params(params);
    let x = record.covariates();
    let ev = evaluate_subject(&term, x, &flat, draws, true);
    let flat_grad: Vec<Vec<f64>> = ev.d_eta.iter().map(|&c| x.iter().map(|v| c * v).collect()).collect();
    Ok(Flagged {
        value: flat.nest(flat_grad),
        underflow: ev.underflow,
    })
}

/// Score-function gradient in every `r_jk`, shaped `[risk][atom]`.
pub fn grad_r(record: &ObservationRecord, params: &LdrParams, draws: &LambdaDraws) -> Result<Flagged<Vec<Vec<f64>>>> {
    let term = check_inputs(record, params, draws)?;
    let flat = FlatParams::from_params(params);
    let ev = evaluate_subject(&term, record.covariates(), &flat, draws, true);
    Ok(Flagged {
        value: flat.nest(ev.d_r),
        underflow: ev.underflow,
    })
}

/// Prior on the atom weights `r_jk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RPrior {
    /// Gamma with the given shape and rate.
    Gamma { shape: f64, rate: f64 },
    /// `-weight * ||r||_2`.
    L2 { weight: f64 },
}

impl RPrior {
    /// `Gamma(0.01/K, scale 1/0.01)`.
    pub fn vague(num_subrisks: usize) -> Self {
        RPrior::Gamma {
            shape: 0.01 / num_subrisks as f64,
            rate: 0.01,
        }
    }

    /// `Gamma(1/K, 1)`.
    pub fn unit(num_subrisks: usize) -> Self {
        RPrior::Gamma {
            shape: 1.0 / num_subrisks as f64,
            rate: 1.0,
        }
    }

    pub fn l2() -> Self {
        RPrior::L2 { weight: 0.001 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RPrior::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            RPrior::L2 { weight } => weight >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(LdrError::param(format!("invalid r prior {self:?}")))
        }
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        match *self {
            RPrior::Gamma { shape, rate } => r.iter().map(|&v| (shape - 1.0) * v.ln() - rate * v).sum(),
            RPrior::L2 { weight } => -weight * r.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn gradient(&self, r: &[f64]) -> Vec<f64> {
        match *self {
            RPrior::Gamma { shape, rate } => r.iter().map(|&v| (shape - 1.0) / v - rate).collect(),
            RPrior::L2 { weight } => {
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| -weight * v / norm.max(f64::MIN_POSITIVE)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Momentum with per-coordinate RMS scaling.
    Adaptive,
    /// Fixed-step gradient ascent.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub mc_samples: usize,
    /// Draws per subject for the epoch-level objective.
    pub eval_mc_samples: usize,
    pub step_size: f64,
    /// `None` for full batch.
    pub minibatch_size: Option<usize>,
    pub max_epochs: usize,
    /// Stop once the best objective has not improved by `tolerance * |best|`
    /// for `patience` epochs.
    pub tolerance: f64,
    pub patience: usize,
    pub t_df: f64,
    pub r_prior: RPrior,
    pub optimizer: Optimizer,
    /// Reuse the same draws every epoch; the epoch objective then uses
    /// those `mc_samples` draws too.
    pub common_random_numbers: bool,
    /// Hold `r` at its initial value.
    pub fix_r: bool,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            mc_samples: 10,
            eval_mc_samples: 100,
            step_size: 1e-2,
            minibatch_size: Some(100),
            max_epochs: 200,
            tolerance: 1e-4,
            patience: 25,
            t_df: 4.0,
            r_prior: RPrior::unit(10),
            optimizer: Optimizer::Adaptive,
            common_random_numbers: false,
            fix_r: false,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.eval_mc_samples == 0 {
            return Err(LdrError::param("Monte-Carlo sample counts must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(LdrError::param("step size must be positive"));
        }
        if self.minibatch_size == Some(0) {
            return Err(LdrError::param("minibatch size must be at least 1"));
        }
        if !(self.t_df > 0.0) {
            return Err(LdrError::param("t prior degrees of freedom must be positive"));
        }
        self.r_prior.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub minibatch: usize,
    #[serde(rename = "logP")]
    pub log_posterior: f64,
}

#[derive(Debug, Clone)]
pub struct MapFit {
    pub params: LdrParams,
    /// Minibatch objective estimates scaled to the full data.
    pub trace: Vec<TraceRow>,
    /// Full-data objective after each epoch; entry 0 is the initial value.
    pub epoch_objective: Vec<f64>,
    pub best_epoch: usize,
}

impl MapFit {
    /// CSV with columns `epoch, minibatch, logP`.
    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.trace {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| LdrError::io("<trace>", e))?;
        Ok(())
    }
}

fn log_t_prior(beta: &[Vec<f64>], df: f64) -> f64 {
    beta.iter()
        .flatten()
        .map(|b| -(df + 1.0) / 2.0 * (b * b / df).ln_1p())
        .sum()
}

/// Starting point: every atom gets `r = 1`, intercept `-ln(J K mean_time)`
/// and `N(0, init_sd^2)` jitter on all coefficients.
pub fn initial_params<R: Rng + ?Sized>(
    data: &Dataset,
    num_subrisks: usize,
    init_sd: f64,
    rng: &mut R,
) -> Result<LdrParams> {
    if data.is_empty() {
        return Err(LdrError::param("cannot initialize from an empty dataset"));
    }
    let times: Vec<f64> = data
        .records()
        .iter()
        .filter_map(|r| match r.time() {
            TimeStatus::Observed(t) | TimeStatus::RightCensored(t) => Some(t),
            TimeStatus::Missing => None,
        })
        .collect();
    let mean_t = if times.is_empty() {
        1.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let j = data.num_risks();
    let base = -((j * num_subrisks) as f64 * mean_t).ln();
    let noise = Normal::new(0.0, init_sd.max(0.0)).map_err(|e| LdrError::param(e.to_string()))?;
    let dim = data.covariate_dim();
    let beta = (0..j)
        .map(|_| {
            (0..num_subrisks)
                .map(|_| {
                    (0..dim)
                        .map(|v| noise.sample(rng) + if v == 0 { base } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    LdrParams::new(num_subrisks, vec![vec![1.0; num_subrisks]; j], beta)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8)
            })
            .collect()
    }
}

struct Objective<'a> {
    terms: &'a [LikelihoodTerm],
    records: &'a [ObservationRecord],
    config: &'a MapConfig,
}

impl Objective<'_> {
    fn draws_for(
        &self,
        flat: &FlatParams,
        subjects: &[usize],
        m: usize,
        base: u64,
        epoch_stream: u64,
    ) -> Vec<LambdaDraws> {
        subjects
            .iter()
            .map(|&i| {
                let mut rng = substream(base ^ epoch_stream.wrapping_mul(0x9E37_79B9_7F4A_7C15), i as u64);
                LambdaDraws::sample_shapes(&flat.r, m, &mut rng).expect("m >= 1")
            })
            .collect()
    }

    /// Sum of subject log-likelihoods, plus per-atom gradient sums when asked.
    fn batch(
        &self,
        flat: &FlatParams,
        subjects: &[usize],
        draws: &[LambdaDraws],
        gradients: bool,
    ) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let evals: Vec<SubjectEval> = subjects
            .par_iter()
            .zip(draws.par_iter())
            .map(|(&i, d)| evaluate_subject(&self.terms[i], self.records[i].covariates(), flat, d, gradients))
            .collect();
        let n_atoms = flat.num_atoms();
        let mut ll = 0.0;
        let mut g_r = vec![0.0; n_atoms];
        let mut g_beta: Vec<Vec<f64>> = flat.beta.iter().map(|b| vec![0.0; b.len()]).collect();
        for (ev, &i) in evals.iter().zip(subjects) {
            ll += ev.log_p;
            if !gradients || ev.underflow {
                continue;
            }
            let x = self.records[i].covariates();
            for a in 0..n_atoms {
                g_r[a] += ev.d_r[a];
                for (g, xv) in g_beta[a].iter_mut().zip(x) {
                    *g += ev.d_eta[a] * xv;
                }
            }
        }
        (ll, g_r, g_beta)
    }

    fn prior(&self, flat: &FlatParams) -> f64 {
        log_t_prior(&flat.beta, self.config.t_df) + self.config.r_prior.log_density(&flat.r)
    }
}

/// Stochastic gradient ascent on the log posterior with Student-t priors on
/// every coefficient and `config.r_prior` on the weights. Returns the iterate
/// with the best full-data objective.
pub fn fit_map<R: Rng + ?Sized>(data: &Dataset, init: &LdrParams, config: &MapConfig, rng: &mut R) -> Result<MapFit> {
    config.validate()?;
    if data.is_empty() {
        return Err(LdrError::param("MAP fit needs at least one record"));
    }
    if init.num_risks() != data.num_risks() {
        return Err(LdrError::param(format!(
            "initial parameters have {} risks, data has {}",
            init.num_risks(),
            data.num_risks()
        )));
    }
    init.check_covariates(data.records()[0].covariates())?;
    let records = data.records();
    let terms: Vec<LikelihoodTerm> = records.iter().map(LikelihoodTerm::from_record).collect::<Result<_>>()?;
    let obj = Objective {
        terms: &terms,
        records,
        config,
    };
    let n = records.len();
    let all: Vec<usize> = (0..n).collect();
    let draw_base: u64 = rng.random();
    let eval_base: u64 = rng.random();

    let mut flat = FlatParams::from_params(init);
    // Under common random numbers the epoch objective is the fixed-draw
    // objective being ascended.
    let (eval_m, eval_seed, eval_stream) = if config.common_random_numbers {
        (config.mc_samples, draw_base, 1)
    } else {
        (config.eval_mc_samples, eval_base, 0)
    };
    let evaluate = |flat: &FlatParams| -> f64 {
        let draws = obj.draws_for(flat, &all, eval_m, eval_seed, eval_stream);
        obj.batch(flat, &all, &draws, false).0 + obj.prior(flat)
    };
    let initial = evaluate(&flat);
    if initial.is_nan() {
        return Err(LdrError::Optimization {
            epoch: 0,
            step_size: config.step_size,
            message: "initial objective is NaN".into(),
        });
    }
    let mut best = (initial, flat.clone(), 0usize);
    let mut epoch_objective = vec![initial];
    let mut trace = Vec::new();
    let n_params: usize = flat.beta.iter().map(Vec::len).sum::<usize>() + flat.num_atoms();
    let mut adam = Adam::new(n_params);
    let batch_size = config.minibatch_size.unwrap_or(n).min(n);
    let mut order = all.clone();
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        if batch_size < n {
            order.shuffle(rng);
        }
        for (mb, subjects) in order.chunks(batch_size).enumerate() {
            let stream = if config.common_random_numbers {
                1
            } else {
                (epoch * 1_000_003 + mb + 1) as u64
            };
            let draws = obj.draws_for(&flat, subjects, config.mc_samples, draw_base, stream);
            let (ll, g_r, g_beta) = obj.batch(&flat, subjects, &draws, true);
            let scale = n as f64 / subjects.len() as f64;
            let estimate = scale * ll + obj.prior(&flat);
            trace.push(TraceRow {
                epoch,
                minibatch: mb,
                log_posterior: estimate,
            });

            let prior_r = config.r_prior.gradient(&flat.r);
            let mut grad = Vec::with_capacity(n_params);
            for (a, gb) in g_beta.iter().enumerate() {
                for (v, g) in gb.iter().enumerate() {
                    let b = flat.beta[a][v];
                    grad.push(scale * g - (config.t_df + 1.0) * b / (config.t_df + b * b));
                }
            }
            for a in 0..flat.num_atoms() {
                // Chain rule through u = ln r.
                grad.push(if config.fix_r {
                    0.0
                } else {
                    flat.r[a] * (scale * g_r[a] + prior_r[a])
                });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(LdrError::Optimization {
                    epoch,
                    step_size: config.step_size,
                    message: format!("non-finite gradient in minibatch {mb}"),
                });
            }
            let delta = match config.optimizer {
                Optimizer::Adaptive => adam.step(&grad, config.step_size),
                Optimizer::Plain => grad.iter().map(|g| config.step_size * g).collect(),
            };
            let mut k = 0;
            for b in flat.beta.iter_mut() {
                for v in b.iter_mut() {
                    *v += delta[k];
                    k += 1;
                }
            }
            for r in flat.r.iter_mut() {
                *r = (r.ln() + delta[k]).clamp(LOG_R_MIN, LOG_R_MAX).exp();
                k += 1;
            }
        }
        let value = evaluate(&flat);
        if value.is_nan() || flat.beta.iter().flatten().any(|b| !b.is_finite()) {
            return Err(LdrError::Optimization {
                epoch,
                step_size: config.step_size,
                message: "objective became NaN".into(),
            });
        }
        epoch_objective.push(value);
        if value > best.0 + config.tolerance * best.0.abs() {
            stale = 0;
        } else {
            stale += 1;
        }
        if value > best.0 {
            best = (value, flat.clone(), epoch);
        }
        if stale >= config.patience {
            break;
        }
    }

    Ok(MapFit {
        params: best.1.to_params()?,
        trace,
        epoch_objective,
        best_epoch: best.2,
    })
}
