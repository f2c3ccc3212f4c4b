use ldr_core::model::{marginal_time_cdf, GammaConvolutionSpec, DEFAULT_MASS_TOL};
use ldr_core::seeded;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use super::{ensure, Check};

/// Series CDF against simulated `t ~ Exp(sum lambda)` at the quartiles.
pub fn against_monte_carlo(specs: usize, draws: usize) -> Check {
    let mut rng = seeded(50);
    let mut worst = 0.0f64;
    for case in 0..specs {
        let c = rng.random_range(2..=5);
        let shapes: Vec<f64> = (0..c).map(|_| rng.random_range(0.3..3.0)).collect();
        let rates: Vec<f64> = (0..c).map(|_| rng.random_range(-1.2f64..1.2).exp()).collect();
        let spec = GammaConvolutionSpec::new(shapes.clone(), rates.clone()).map_err(|e| e.to_string())?;
        let series = spec.series(DEFAULT_MASS_TOL).map_err(|e| e.to_string())?;
        ensure(series.retained_mass() >= 1.0 - DEFAULT_MASS_TOL, || {
            format!("case {case}: retained mass {}", series.retained_mass())
        })?;
        let gammas: Vec<Gamma<f64>> = shapes
            .iter()
            .zip(&rates)
            .map(|(r, b)| Gamma::new(*r, 1.0 / b).unwrap())
            .collect();
        let mut times: Vec<f64> = (0..draws)
            .map(|_| {
                let rate: f64 = gammas.iter().map(|g| g.sample(&mut rng)).sum();
                <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng) / rate
            })
            .collect();
        times.sort_by(f64::total_cmp);
        for u in [0.25, 0.5, 0.75] {
            let q = series.quantile(u).map_err(|e| e.to_string())?;
            let emp = times.partition_point(|&t| t < q) as f64 / draws as f64;
            let model = marginal_time_cdf(q, &spec, DEFAULT_MASS_TOL).map_err(|e| e.to_string())?;
            let err = (model - emp).abs();
            ensure(err < 0.003, || {
                format!("case {case} u={u}: series {model:.5} vs simulated {emp:.5}")
            })?;
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "{specs} random specs within 0.003 of simulation (worst {worst:.4})"
    ))
}

/// Equal rates collapse to a single gamma, whose mixture is Lomax.
pub fn closed_forms() -> Check {
    let mut worst = 0.0f64;
    let cases: [(Vec<f64>, Vec<f64>); 4] = [
        (vec![2.5], vec![0.7]),
        (vec![0.3], vec![4.0]),
        (vec![0.5, 1.2, 3.0], vec![1.5, 1.5, 1.5]),
        (vec![0.2, 0.2], vec![0.1, 0.1]),
    ];
    for (shapes, rates) in cases {
        let rho: f64 = shapes.iter().sum();
        let b = rates[0];
        let spec = GammaConvolutionSpec::new(shapes, rates).map_err(|e| e.to_string())?;
        for q in [0.01, 0.3, 1.0, 4.0, 40.0] {
            let exact = 1.0 - (b / (q + b)).powf(rho);
            let got = marginal_time_cdf(q, &spec, DEFAULT_MASS_TOL).map_err(|e| e.to_string())?;
            let err = (got - exact).abs();
            ensure(err < 1e-8, || format!("rho={rho} b={b} q={q}: {got} vs {exact}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("closed forms to 1e-8 (worst {worst:.1e})"))
}
