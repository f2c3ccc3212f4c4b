//! Cause-specific concordance, Brier score and CIF-based prediction tables.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationRecord;
use crate::error::{LdrError, Result};
use crate::model::{cif_table, LdrParams};

pub use crate::data::train_test_split;

/// Default Monte-Carlo draws per CIF evaluation.
pub const DEFAULT_N_MC: usize = 1000;

fn outcomes(data: &[ObservationRecord]) -> Result<Vec<(f64, usize)>> {
    data.iter()
        .enumerate()
        .map(|(i, r)| {
            r.outcome()
                .ok_or_else(|| LdrError::param(format!("test record {i} is censored or incomplete")))
        })
        .collect()
}

/// `P(score_i > score_i' | y_i = risk and (t_i < t_i' or y_i' != risk))`
/// over ordered pairs; score ties earn half credit, time ties are skipped.
pub fn c_index(scores: &[f64], data: &[ObservationRecord], risk: usize) -> Result<f64> {
    if scores.len() != data.len() {
        return Err(LdrError::param(format!(
            "{} scores for {} records",
            scores.len(),
            data.len()
        )));
    }
    let out = outcomes(data)?;
    let mut concordant = 0.0;
    let mut comparable = 0usize;
    for (i, &(ti, yi)) in out.iter().enumerate() {
        if yi != risk {
            continue;
        }
        for (k, &(tk, yk)) in out.iter().enumerate() {
            if k == i || ti == tk {
                continue;
            }
            if yk == risk && ti > tk {
                continue;
            }
            comparable += 1;
            if scores[i] > scores[k] {
                concordant += 1.0;
            } else if scores[i] == scores[k] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(LdrError::UndefinedMetric(format!(
            "no comparable pairs for risk {risk}"
        )));
    }
    Ok(concordant / comparable as f64)
}

/// `(1/n) sum_i (1(t_i <= tau, y_i = risk) - p_i)^2`.
pub fn brier_score(predictions: &[f64], data: &[ObservationRecord], risk: usize, tau: f64) -> Result<f64> {
    if predictions.len() != data.len() {
        return Err(LdrError::param(format!(
            "{} predictions for {} records",
            predictions.len(),
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(LdrError::UndefinedMetric("empty test set".into()));
    }
    let out = outcomes(data)?;
    let total: f64 = out
        .iter()
        .zip(predictions)
        .map(|(&(t, y), &p)| {
            let hit = (t <= tau && y == risk) as u8 as f64;
            (hit - p).powi(2)
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// CIF of `risk` at `tau`, averaged over the parameter draws in `sources`
/// (one entry for a point estimate).
pub fn score_from_posterior<R: Rng + ?Sized>(
    sources: &[&LdrParams],
    x: &[f64],
    risk: usize,
    tau: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    let first = sources
        .first()
        .ok_or_else(|| LdrError::param("no parameter sources supplied"))?;
    first.check_risk(risk)?;
    Ok(cif_table(x, &[tau], sources, n_mc, rng)?[risk][0])
}

/// CIF table for every subject: `[subject][risk][tau]`.
pub fn predict_cif<R: Rng + ?Sized>(
    sources: &[&LdrParams],
    data: &[ObservationRecord],
    taus: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    data.iter()
        .map(|rec| cif_table(rec.covariates(), taus, sources, n_mc, rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    CIndex,
    Brier,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::CIndex => "cindex",
            MetricKind::Brier => "brier",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = LdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cindex" | "c-index" => Ok(MetricKind::CIndex),
            "brier" => Ok(MetricKind::Brier),
            other => Err(LdrError::param(format!("unknown metric {other:?}"))),
        }
    }
}

/// One metric for one risk across evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub risk: usize,
    pub taus: Vec<f64>,
    pub metric: MetricKind,
    pub values: Vec<f64>,
    pub n_mc: usize,
    pub split: String,
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(LdrError::param("at least one evaluation time is required"));
    }
    if taus.iter().any(|t| !(*t >= 0.0)) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LdrError::param(
            "evaluation times must be non-negative and strictly increasing",
        ));
    }
    Ok(())
}

/// Evaluate `metric` for every risk at every `tau` on a fully observed test set.
pub fn evaluate<R: Rng + ?Sized>(
    sources: &[&LdrParams],
    test: &[ObservationRecord],
    taus: &[f64],
    metric: MetricKind,
    n_mc: usize,
    split: &str,
    rng: &mut R,
) -> Result<Vec<MetricReport>> {
    let table = predict_cif(sources, test, taus, n_mc, rng)?;
    metrics_from_predictions(&table, test, taus, metric, n_mc, split)
}

/// Same as [`evaluate`] from a precomputed `[subject][risk][tau]` table.
pub fn metrics_from_predictions(
    table: &[Vec<Vec<f64>>],
    test: &[ObservationRecord],
    taus: &[f64],
    metric: MetricKind,
    n_mc: usize,
    split: &str,
) -> Result<Vec<MetricReport>> {
    check_taus(taus)?;
    if test.is_empty() {
        return Err(LdrError::UndefinedMetric("empty test set".into()));
    }
    let num_risks = table[0].len();
    let mut reports = Vec::with_capacity(num_risks);
    for j in 0..num_risks {
        let mut values = Vec::with_capacity(taus.len());
        for (ti, &tau) in taus.iter().enumerate() {
            let col: Vec<f64> = table.iter().map(|row| row[j][ti]).collect();
            values.push(match metric {
                MetricKind::CIndex => c_index(&col, test, j)?,
                MetricKind::Brier => brier_score(&col, test, j, tau)?,
            });
        }
        reports.push(MetricReport {
            risk: j,
            taus: taus.to_vec(),
            metric,
            values,
            n_mc,
            split: split.to_string(),
        });
    }
    Ok(reports)
}

/// CSV with columns `risk, tau, metric, value` (risks one-based).
pub fn write_reports<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["risk", "tau", "metric", "value"])?;
    for rep in reports {
        for (tau, v) in rep.taus.iter().zip(&rep.values) {
            out.write_record([
                (rep.risk + 1).to_string(),
                tau.to_string(),
                rep.metric.name().to_string(),
                v.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| LdrError::io("<metrics>", e))?;
    Ok(())
}
