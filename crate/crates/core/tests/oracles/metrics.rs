use ldr_core::eval::{brier_score, c_index};
use ldr_core::{seeded, ObservationRecord};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{ensure, Check};

pub fn records(outcomes: &[(f64, usize)]) -> Vec<ObservationRecord> {
    outcomes
        .iter()
        .map(|&(t, y)| ObservationRecord::observed(vec![1.0], t, y).unwrap())
        .collect()
}

/// Visit each unordered pair once and credit whichever member is the
/// earlier risk-`j` event.
pub fn brute_c_index(scores: &[f64], out: &[(f64, usize)], j: usize) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..out.len() {
        for b in a + 1..out.len() {
            let (ta, ya) = out[a];
            let (tb, yb) = out[b];
            if ta == tb {
                continue;
            }
            let mut credit = |i: usize, k: usize| {
                den += 1.0;
                num += if scores[i] > scores[k] {
                    1.0
                } else if scores[i] == scores[k] {
                    0.5
                } else {
                    0.0
                };
            };
            let a_first = ta < tb;
            if ya == j && (a_first || yb != j) {
                credit(a, b);
            }
            if yb == j && (!a_first || ya != j) {
                credit(b, a);
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn brute_brier(p: &[f64], out: &[(f64, usize)], j: usize, tau: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..out.len() {
        let hit = if out[i].0 <= tau && out[i].1 == j { 1.0 } else { 0.0 };
        s += (hit - p[i]) * (hit - p[i]);
    }
    s / out.len() as f64
}

/// Random instances of size 1..=6 on a coarse grid so ties are common.
pub fn small_instances(count: usize) -> Check {
    let mut rng = seeded(40);
    let mut undefined = 0;
    for case in 0..count {
        let n = rng.random_range(1..=6);
        let out: Vec<(f64, usize)> = (0..n)
            .map(|_| (rng.random_range(1..6) as f64 * 0.5, rng.random_range(0..2)))
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        let recs = records(&out);
        let j = rng.random_range(0..2);
        let tau = rng.random_range(0.0..3.0);
        match (brute_c_index(&scores, &out, j), c_index(&scores, &recs, j)) {
            (Some(e), Ok(g)) => ensure((e - g).abs() < 1e-12, || format!("case {case}: c-index {g} vs {e}"))?,
            (None, Err(_)) => undefined += 1,
            (e, g) => return Err(format!("case {case}: c-index {g:?} vs {e:?}")),
        }
        let g = brier_score(&scores, &recs, j, tau).map_err(|e| e.to_string())?;
        let e = brute_brier(&scores, &out, j, tau);
        ensure((e - g).abs() < 1e-12, || format!("case {case}: brier {g} vs {e}"))?;
    }
    Ok(format!(
        "{count} instances of size <= 6 match brute force ({undefined} without comparable pairs)"
    ))
}

/// Mean C-index of shuffled scores over 200 reshuffles, n = 200.
pub fn permutation_baseline() -> Check {
    let mut rng = seeded(21);
    let n = 200;
    let out: Vec<(f64, usize)> = (0..n)
        .map(|_| (rng.random_range(0.0..5.0), rng.random_range(0..2)))
        .collect();
    let recs = records(&out);
    let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut values = Vec::new();
    for _ in 0..200 {
        scores.shuffle(&mut rng);
        values.push(c_index(&scores, &recs, 0).map_err(|e| e.to_string())?);
    }
    let avg = values.iter().sum::<f64>() / values.len() as f64;
    ensure((avg - 0.5).abs() < 0.05, || format!("permutation baseline {avg:.4}"))?;
    Ok(format!("permutation baseline {avg:.4}"))
}
