use ldr_core::gibbs::{step_sample_lambda, step_sample_r_gamma0, sweep, ChainConfig, GibbsState, Hyperparams};
use ldr_core::stats::{batch_means_se, ks_two_sample, ks_two_sample_pvalue, mean, std_error};
use ldr_core::{seeded, Dataset, Generator, ObservationRecord, SyntheticSpec};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::{ensure, Check};

fn hyper() -> Hyperparams {
    Hyperparams {
        a0: 3.0,
        b0: 2.0,
        e0: 2.0,
        f0: 1.0,
        e1: 3.0,
        f1: 2.0,
    }
}

/// With no subjects the sampler must leave the prior invariant.
pub fn prior_moments(sweeps: usize) -> Check {
    let h = hyper();
    let (jn, kn, dim) = (2, 3, 2);
    let config = ChainConfig {
        num_subrisks: kn,
        hyperparams: h,
        prune: false,
        ..ChainConfig::default()
    };
    let mut rng = seeded(1);
    let mut state = GibbsState::from_prior(&[], jn, kn, dim, &h, &mut rng).map_err(|e| e.to_string())?;
    let (mut r, mut g, mut c, mut a, mut b) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..sweeps {
        sweep(&mut state, &[], &config, &mut rng).map_err(|e| e.to_string())?;
        r.push(state.r(1, 2));
        g.push(state.gamma0(0));
        c.push(state.c0(1));
        a.push(state.alpha(0, 1)[1]);
        b.push(state.beta(1, 0)[0]);
    }
    // E[r] = E[gamma0/K] E[1/c0] under independence of gamma0 and c0.
    let expected = [
        ("r", &r, h.e0 / h.f0 / kn as f64 * h.f1 / (h.e1 - 1.0)),
        ("gamma0", &g, h.e0 / h.f0),
        ("c0", &c, h.e1 / h.f1),
        ("alpha", &a, h.a0 / h.b0),
        ("beta", &b, 0.0),
    ];
    let mut worst = 0.0f64;
    for (name, xs, target) in expected {
        let se = batch_means_se(xs);
        let m = mean(xs);
        let z = (m - target).abs() / se;
        ensure(z < 3.0, || format!("{name}: mean {m:.4} vs {target:.4} ({z:.2} SE)"))?;
        worst = worst.max(z);
    }
    Ok(format!("prior moments within 3 SE (worst {worst:.2} SE)"))
}

fn geweke_covariates() -> Vec<ObservationRecord> {
    [-1.0, -0.3, 0.2, 0.8, 1.5]
        .iter()
        .map(|&x| ObservationRecord::observed(vec![1.0, x], 1.0, 0).unwrap())
        .collect()
}

fn geweke_stats(s: &GibbsState, data: &[ObservationRecord]) -> [f64; 5] {
    let mean_log_t = data.iter().map(|r| r.outcome().unwrap().0.ln()).sum::<f64>() / data.len() as f64;
    [s.r(0, 0), s.gamma0(1), s.c0(0), s.beta(1, 1)[1], mean_log_t]
}

/// Marginal-conditional simulator against successive-conditional simulator.
pub fn geweke(n: usize, thin: usize) -> Check {
    let h = Hyperparams::uniform(2.0);
    let (jn, kn) = (2, 2);
    let base = geweke_covariates();

    let mut rng = seeded(2);
    let mut marginal = vec![Vec::new(); 5];
    for _ in 0..n {
        let mut s = GibbsState::from_prior(&base, jn, kn, 2, &h, &mut rng).map_err(|e| e.to_string())?;
        let data = s.resimulate_outcomes(&base, &mut rng).map_err(|e| e.to_string())?;
        for (v, x) in marginal.iter_mut().zip(geweke_stats(&s, &data)) {
            v.push(x);
        }
    }

    let config = ChainConfig {
        num_subrisks: kn,
        hyperparams: h,
        prune: false,
        ..ChainConfig::default()
    };
    let mut rng = seeded(3);
    let mut s = GibbsState::from_prior(&base, jn, kn, 2, &h, &mut rng).map_err(|e| e.to_string())?;
    let mut data = s.resimulate_outcomes(&base, &mut rng).map_err(|e| e.to_string())?;
    let mut successive = vec![Vec::new(); 5];
    for it in 0..n * thin {
        sweep(&mut s, &data, &config, &mut rng).map_err(|e| e.to_string())?;
        step_sample_lambda(&mut s, &mut rng);
        data = s.resimulate_outcomes(&base, &mut rng).map_err(|e| e.to_string())?;
        if it % thin == 0 {
            for (v, x) in successive.iter_mut().zip(geweke_stats(&s, &data)) {
                v.push(x);
            }
        }
    }

    let names = ["r", "gamma0", "c0", "beta_slope", "mean_log_t"];
    let mut min_p = 1.0f64;
    for (k, name) in names.iter().enumerate() {
        let d = ks_two_sample(&marginal[k], &successive[k]);
        let p = ks_two_sample_pvalue(d, n, n);
        ensure(p > 0.01, || format!("{name}: KS {d:.4}, p = {p:.4}"))?;
        min_p = min_p.min(p);
    }
    Ok(format!("Geweke KS p-values above 0.01 (min {min_p:.3})"))
}

fn frozen_state(seed: u64) -> (GibbsState, Dataset, ChainConfig) {
    let data = ldr_core::data::simulate(&SyntheticSpec::new(Generator::Data1, 60, seed), &mut seeded(seed)).unwrap();
    let config = ChainConfig {
        num_subrisks: 3,
        hyperparams: Hyperparams::uniform(1.0),
        prune: false,
        ..ChainConfig::default()
    };
    let mut rng = seeded(seed + 100);
    let mut s = GibbsState::initialize(&data, &config, &mut rng).unwrap();
    for _ in 0..50 {
        sweep(&mut s, data.records(), &config, &mut rng).unwrap();
    }
    (s, data, config)
}

/// Random-walk Metropolis on `ln x` for a log-density `f(x)`.
fn metropolis_log_scale(
    f: impl Fn(&[f64]) -> f64,
    start: Vec<f64>,
    steps: usize,
    scale: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut x = start;
    // Density of u = ln x picks up the Jacobian sum(u).
    let target = |x: &[f64]| f(x) + x.iter().map(|v| v.ln()).sum::<f64>();
    let mut cur = target(&x);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let prop: Vec<f64> = x
            .iter()
            .map(|v| v * (scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
            .collect();
        let next = target(&prop);
        if rng.random::<f64>().ln() < next - cur {
            x = prop;
            cur = next;
        }
        out.push(x.clone());
    }
    out
}

pub fn lambda_vs_metropolis() -> Check {
    let (s, data, _) = frozen_state(4);
    let (i, j, k) = (7, 1, 0);
    let r = s.r(j, k);
    let eta: f64 = s
        .beta(j, k)
        .iter()
        .zip(data.records()[i].covariates())
        .map(|(b, x)| b * x)
        .sum();
    let t = s.time(i);
    let n = s.indicator(i, j, k) as f64;
    let log_target = |x: &[f64]| (r + n - 1.0) * x[0].ln() - x[0] * ((-eta).exp() + t);

    let chain = metropolis_log_scale(log_target, vec![s.lambda(i, j, k).max(1e-3)], 200_000, 0.8, 5);
    let mh: Vec<f64> = chain[20_000..].iter().map(|v| v[0]).collect();

    let mut state = s.clone();
    let mut rng = seeded(6);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            step_sample_lambda(&mut state, &mut rng);
            state.lambda(i, j, k)
        })
        .collect();
    let (a, b) = (mean(&mh), mean(&draws));
    let se = (batch_means_se(&mh).powi(2) + std_error(&draws).powi(2)).sqrt();
    let z = (a - b).abs() / se;
    ensure(z < 4.0, || {
        format!("lambda: metropolis {a:.4} vs gibbs {b:.4} ({z:.2} SE)")
    })?;
    Ok(format!("lambda conditional mean agrees ({z:.2} SE)"))
}

/// Joint `(gamma0, r_1..K)` conditional with counts and exposures frozen.
pub fn r_gamma0_vs_metropolis() -> Check {
    let (s, data, config) = frozen_state(7);
    let h = config.hyperparams;
    let j = 0;
    let kn = s.num_subrisks();
    let records = data.records();
    // S_k = sum_i ln(1 + t_i e^{eta_ik}); counts are the winners of atom k.
    let exposure: Vec<f64> = (0..kn)
        .map(|k| {
            records
                .iter()
                .enumerate()
                .map(|(i, rec)| {
                    let eta: f64 = s.beta(j, k).iter().zip(rec.covariates()).map(|(b, x)| b * x).sum();
                    (s.time(i) * eta.exp()).ln_1p()
                })
                .sum()
        })
        .collect();
    let counts: Vec<f64> = (0..kn).map(|k| s.count(j, k) as f64).collect();
    let c0 = s.c0(j);
    let kf = kn as f64;
    let log_target = |x: &[f64]| {
        let g = x[0];
        let mut lp = (h.e0 - 1.0) * g.ln() - h.f0 * g;
        for k in 0..kn {
            let r = x[k + 1];
            let shape = g / kf;
            lp += shape * c0.ln() - ln_gamma(shape) + (shape + counts[k] - 1.0) * r.ln() - r * (c0 + exposure[k]);
        }
        lp
    };
    let start: Vec<f64> = std::iter::once(s.gamma0(j)).chain((0..kn).map(|k| s.r(j, k))).collect();
    let chain = metropolis_log_scale(log_target, start, 400_000, 0.25, 8);
    let burned = &chain[40_000..];

    let mut state = s.clone();
    let mut rng = seeded(9);
    let mut gibbs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..20_000 {
        step_sample_r_gamma0(&mut state, &h, &mut rng);
        gibbs.push(
            std::iter::once(state.gamma0(j))
                .chain((0..kn).map(|k| state.r(j, k)))
                .collect(),
        );
    }
    let mut worst = 0.0f64;
    for d in 0..=kn {
        let mh: Vec<f64> = burned.iter().map(|v| v[d]).collect();
        let gb: Vec<f64> = gibbs.iter().map(|v| v[d]).collect();
        let (a, b) = (mean(&mh), mean(&gb));
        let se = (batch_means_se(&mh).powi(2) + batch_means_se(&gb).powi(2)).sqrt();
        let z = (a - b).abs() / se;
        ensure(z < 4.0, || {
            format!("coordinate {d}: metropolis {a:.4} vs gibbs {b:.4} ({z:.2} SE)")
        })?;
        worst = worst.max(z);
    }
    Ok(format!("r and gamma0 conditional means agree (worst {worst:.2} SE)"))
}
