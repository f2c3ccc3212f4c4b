use ldr_core::map::{grad_beta, grad_r, mc_log_likelihood, LambdaDraws};
use ldr_core::stats::variance;
use ldr_core::{seeded, EventStatus, LdrParams, ObservationRecord, TimeStatus};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ensure, Check};

pub fn random_params<R: Rng>(rng: &mut R) -> LdrParams {
    let j = rng.random_range(1..=2);
    let k = rng.random_range(1..=3);
    let dim = rng.random_range(1..=3);
    let r = (0..j)
        .map(|_| (0..k).map(|_| rng.random_range(0.3..3.0)).collect())
        .collect();
    let beta = (0..j)
        .map(|_| {
            (0..k)
                .map(|_| (0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        })
        .collect();
    LdrParams::new(k, r, beta).unwrap()
}

pub fn random_record<R: Rng>(p: &LdrParams, rng: &mut R) -> ObservationRecord {
    let mut x = vec![1.0];
    x.extend((1..p.covariate_dim()).map(|_| rng.sample::<f64, StandardNormal>(StandardNormal)));
    let t = rng.random_range(0.1..2.0);
    let y = rng.random_range(0..p.num_risks());
    let (time, event) = match rng.random_range(0..4) {
        0 => (TimeStatus::Observed(t), EventStatus::Known(y)),
        1 => (TimeStatus::Observed(t), EventStatus::Missing),
        2 => (TimeStatus::RightCensored(t), EventStatus::Missing),
        _ => (TimeStatus::Missing, EventStatus::Known(y)),
    };
    ObservationRecord::new(x, time, event).unwrap()
}

fn perturb(p: &LdrParams, j: usize, k: usize, v: usize, h: f64) -> LdrParams {
    let mut beta: Vec<Vec<Vec<f64>>> = p
        .risks()
        .iter()
        .map(|atoms| atoms.iter().map(|a| a.coefficients.clone()).collect())
        .collect();
    beta[j][k][v] += h;
    LdrParams::new(p.num_subrisks(), p.weights(), beta).unwrap()
}

/// Analytic `d/d beta` against central differences of the same-draw objective.
pub fn beta_finite_differences(configs: usize) -> Check {
    let mut rng = seeded(10);
    let mut worst = 0.0f64;
    for case in 0..configs {
        let p = random_params(&mut rng);
        let rec = random_record(&p, &mut rng);
        let draws = LambdaDraws::sample(&p, 10, &mut rng).map_err(|e| e.to_string())?;
        let g = grad_beta(&rec, &p, &draws).map_err(|e| e.to_string())?;
        ensure(!g.underflow, || format!("case {case}: unexpected underflow"))?;
        let h = 1e-5;
        for (j, atoms) in p.risks().iter().enumerate() {
            for k in 0..atoms.len() {
                for v in 0..p.covariate_dim() {
                    let up = mc_log_likelihood(&rec, &perturb(&p, j, k, v, h), &draws).unwrap();
                    let down = mc_log_likelihood(&rec, &perturb(&p, j, k, v, -h), &draws).unwrap();
                    let fd = (up - down) / (2.0 * h);
                    let an = g.value[j][k][v];
                    let rel = (an - fd).abs() / fd.abs().max(1e-3);
                    ensure(rel < 1e-5, || {
                        format!("case {case} ({j},{k},{v}): analytic {an}, fd {fd}")
                    })?;
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok(format!(
        "grad_beta vs finite differences on {configs} configs (worst rel {worst:.1e})"
    ))
}

/// Single-atom `d/dr ln f(t)` for the Lomax marginal:
/// `1/r + ln b - ln(t + b)` with `b = e^{-eta}`.
pub fn r_exact_gradient(m: usize) -> Check {
    let (r0, b0, x1, t) = (1.6, -0.2, 0.7, 0.8);
    let p = LdrParams::lomax_racing(vec![r0], vec![vec![b0, 0.4]]).unwrap();
    let rec = ObservationRecord::observed(vec![1.0, x1], t, 0).unwrap();
    let scale = (-(b0 + 0.4 * x1)).exp();
    let exact = 1.0 / r0 + scale.ln() - (t + scale).ln();

    let mut rng = seeded(11);
    let estimate = |rng: &mut ldr_core::LdrRng| {
        let d = LambdaDraws::sample(&p, m, rng).unwrap();
        grad_r(&rec, &p, &d).unwrap().value[0][0]
    };
    // SE of one M-draw estimate, from independent replicates.
    let reps: Vec<f64> = (0..30).map(|_| estimate(&mut rng)).collect();
    let se = variance(&reps).sqrt();
    let single = estimate(&mut rng);
    let z = (single - exact).abs() / se;
    ensure(z < 2.0, || {
        format!("grad_r {single:.5} vs exact {exact:.5} ({z:.2} SE)")
    })?;
    Ok(format!("grad_r {single:.4} vs exact {exact:.4} ({z:.2} SE at M = {m})"))
}
