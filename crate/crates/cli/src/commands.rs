use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ldr_core::data::simulate;
use ldr_core::eval::{metrics_from_predictions, predict_cif, write_reports};
use ldr_core::gibbs::run_chain;
use ldr_core::interpret::{embed_fit, write_embedding};
use ldr_core::map::{fit_map, initial_params};
use ldr_core::{seeded, substream, CsvSchema, Dataset, LdrParams, MetricKind, PosteriorSamples, SyntheticSpec};
use serde_json::json;

use crate::config::{resolve, FileConfig, FitConfig};
use crate::error::{CliError, Result};
use crate::manifest::{replay_args, write_atomic, RunManifest};
use crate::{
    Cli, Command, DataArgs, EmbedArgs, EvaluateArgs, FitArgs, MetricArg, ModelArgs, PredictArgs, SeedArg, SeedOrigin,
    SimulateArgs,
};

/// Per-invocation bookkeeping shared by every subcommand.
struct Run {
    dir: PathBuf,
    seed: u64,
    origin: SeedOrigin,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(dir: &Path, seed: u64, origin: SeedOrigin) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            seed,
            origin,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> ldr_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.dir.join(name);
        write_atomic(&path, &buf)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        summary: serde_json::Value,
        started: Instant,
        argv: &[String],
    ) -> Result<()> {
        let manifest = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            seed_source: self.origin.name(),
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            summary,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            replay_args: replay_args(argv, self.seed),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(ldr_core::LdrError::from)?;
        write_atomic(&self.dir.join(format!("{command}.manifest.json")), &bytes)
    }
}

fn resolve_seed(arg: &SeedArg, origin: Option<SeedOrigin>, file_seed: Option<u64>) -> (u64, SeedOrigin) {
    if let Some(s) = arg.seed {
        return (s, origin.unwrap_or(SeedOrigin::Flag));
    }
    if let Some(s) = file_seed {
        return (s, SeedOrigin::Config);
    }
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    (nanos, SeedOrigin::Generated)
}

pub fn run(cli: &Cli, origin: Option<SeedOrigin>, argv: Vec<String>) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(cli, a, origin, &argv, started),
        Command::Fit(a) => fit_cmd(cli, a, origin, &argv, started),
        Command::Predict(a) => predict_cmd(cli, a, origin, &argv, started),
        Command::Evaluate(a) => evaluate_cmd(cli, a, origin, &argv, started),
        Command::Embed(a) => embed_cmd(cli, a, origin, &argv, started),
    }
}

fn load_data(args: &DataArgs, run: &mut Run) -> Result<Dataset> {
    let schema = CsvSchema {
        time_column: args.time_column.clone(),
        event_column: args.event_column.clone(),
        covariate_columns: args.covariates.clone(),
        num_risks: args.risks,
    };
    let data = Dataset::load_csv(&args.data, &schema)?;
    if data.is_empty() {
        return Err(CliError::Ingestion(format!("{}: no records", args.data.display())));
    }
    run.inputs.push(args.data.clone());
    Ok(data)
}

/// A point estimate or a stored posterior trace.
enum Fitted {
    Point(LdrParams),
    Trace(PosteriorSamples),
}

impl Fitted {
    fn load(args: &ModelArgs, run: &mut Run) -> Result<Self> {
        if args.draw_stride == 0 {
            return Err(CliError::Usage("--draw-stride must be at least 1".into()));
        }
        let path = &args.params;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        run.inputs.push(path.clone());
        if path.extension().is_some_and(|e| e == "jsonl") {
            Ok(Fitted::Trace(PosteriorSamples::read_trace(text.as_bytes())?))
        } else {
            Ok(Fitted::Point(LdrParams::from_json(&text)?))
        }
    }

    fn sources(&self, stride: usize) -> Vec<&LdrParams> {
        match self {
            Fitted::Point(p) => vec![p],
            Fitted::Trace(s) => s.params().iter().step_by(stride).collect(),
        }
    }

    fn point(&self) -> Result<LdrParams> {
        match self {
            Fitted::Point(p) => Ok(p.clone()),
            Fitted::Trace(s) => Ok(s.posterior_mean()?),
        }
    }
}

fn simulate_cmd(
    cli: &Cli,
    a: &SimulateArgs,
    origin: Option<SeedOrigin>,
    argv: &[String],
    started: Instant,
) -> Result<()> {
    let (seed, origin) = resolve_seed(&a.seed, origin, None);
    let mut run = Run::new(&cli.output_dir, seed, origin)?;
    let mut spec = SyntheticSpec::new(a.generator.into(), a.n, seed);
    if let Some(c) = a.censor_time {
        spec.censor_time = c;
    }
    let data = simulate(&spec, &mut seeded(seed))?;
    run.write(&format!("{}.csv", a.name), |b| data.write_csv_to(b))?;
    let meta = data.metadata();
    run.write(&format!("{}.json", a.name), |b| {
        serde_json::to_writer_pretty(b, &meta)?;
        Ok(())
    })?;
    run.finish("simulate", json!(spec), json!(meta), started, argv)
}

fn fit_cmd(cli: &Cli, a: &FitArgs, origin: Option<SeedOrigin>, argv: &[String], started: Instant) -> Result<()> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (seed, origin) = resolve_seed(&a.seed, origin, file.seed);
    let config = resolve(a, &file, seed)?;
    let mut run = Run::new(&cli.output_dir, seed, origin)?;
    if let Some(p) = &a.config {
        run.inputs.push(p.clone());
    }
    let data = load_data(&a.data, &mut run)?;

    let summary = match &config {
        FitConfig::Gibbs { chains, chain } => {
            let results: Vec<ldr_core::Result<PosteriorSamples>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..*chains)
                    .map(|c| {
                        let data = &data;
                        s.spawn(move || run_chain(data, chain, &mut substream(seed, c as u64)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("chain thread panicked"))
                    .collect()
            });
            let mut per_chain = Vec::new();
            for (c, res) in results.into_iter().enumerate() {
                let samples = res?;
                let prefix = if *chains > 1 {
                    format!("chain{c}/")
                } else {
                    String::new()
                };
                let mean = samples.posterior_mean()?;
                run.write(&format!("{prefix}params.json"), |b| {
                    b.extend_from_slice(mean.to_json()?.as_bytes());
                    Ok(())
                })?;
                run.write(&format!("{prefix}trace.jsonl"), |b| samples.write_trace(b))?;
                run.write(&format!("{prefix}diagnostics.csv"), |b| samples.write_diagnostics(b))?;
                let final_active = samples.diagnostics.last().map(|d| d.active_per_risk.clone());
                per_chain.push(json!({
                    "chain": c,
                    "stored_draws": samples.draws.len(),
                    "final_active_per_risk": final_active,
                    "dominant_atoms": samples.dominant_atoms(10.0),
                }));
            }
            json!({ "chains": per_chain })
        }
        FitConfig::Map { k, init_sd, map } => {
            let mut rng = seeded(seed);
            let init = initial_params(&data, *k, *init_sd, &mut rng)?;
            let fit = fit_map(&data, &init, map, &mut rng)?;
            run.write("params.json", |b| {
                b.extend_from_slice(fit.params.to_json()?.as_bytes());
                Ok(())
            })?;
            run.write("trace.csv", |b| fit.write_trace(b))?;
            run.write("objective.csv", |b| {
                let mut w = String::from("epoch,objective\n");
                for (e, v) in fit.epoch_objective.iter().enumerate() {
                    w.push_str(&format!("{e},{v}\n"));
                }
                b.extend_from_slice(w.as_bytes());
                Ok(())
            })?;
            json!({
                "epochs": fit.epoch_objective.len().saturating_sub(1),
                "best_epoch": fit.best_epoch,
                "best_objective": fit.epoch_objective.get(fit.best_epoch),
            })
        }
    };
    run.finish("fit", json!(config), summary, started, argv)
}

fn predict_cmd(
    cli: &Cli,
    a: &PredictArgs,
    origin: Option<SeedOrigin>,
    argv: &[String],
    started: Instant,
) -> Result<()> {
    let (seed, origin) = resolve_seed(&a.seed, origin, None);
    let mut run = Run::new(&cli.output_dir, seed, origin)?;
    let fitted = Fitted::load(&a.model, &mut run)?;
    let data = load_data(&a.data, &mut run)?;
    if let Some(t) = a.tau.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("horizon {t} must be non-negative")));
    }
    let sources = fitted.sources(a.model.draw_stride);
    let num_risks = sources[0].num_risks();
    let risks: Vec<usize> = match &a.risk {
        None => (0..num_risks).collect(),
        Some(list) => list
            .iter()
            .map(|&r| {
                if (1..=num_risks).contains(&r) {
                    Ok(r - 1)
                } else {
                    Err(CliError::Usage(format!("risk {r} outside 1..={num_risks}")))
                }
            })
            .collect::<Result<_>>()?,
    };
    let table = predict_cif(&sources, data.records(), &a.tau, a.model.n_mc, &mut seeded(seed))?;
    run.write(&a.out, |b| {
        let mut w = String::from("row,risk,tau,cif\n");
        for (i, row) in table.iter().enumerate() {
            for &j in &risks {
                for (t, tau) in a.tau.iter().enumerate() {
                    w.push_str(&format!("{i},{},{tau},{}\n", j + 1, row[j][t]));
                }
            }
        }
        b.extend_from_slice(w.as_bytes());
        Ok(())
    })?;
    let config = json!({ "tau": a.tau, "risks": risks.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "n_mc": a.model.n_mc, "draw_stride": a.model.draw_stride, "sources": sources.len() });
    run.finish("predict", config, json!({ "rows": table.len() }), started, argv)
}

fn evaluate_cmd(
    cli: &Cli,
    a: &EvaluateArgs,
    origin: Option<SeedOrigin>,
    argv: &[String],
    started: Instant,
) -> Result<()> {
    let (seed, origin) = resolve_seed(&a.seed, origin, None);
    let mut run = Run::new(&cli.output_dir, seed, origin)?;
    let fitted = Fitted::load(&a.model, &mut run)?;
    let data = load_data(&a.data, &mut run)?;
    let test = data.fully_observed();
    let dropped = data.len() - test.len();
    if dropped > 0 {
        eprintln!("note: {dropped} row(s) with a missing or censored outcome left out of scoring");
    }
    let sources = fitted.sources(a.model.draw_stride);
    let table = predict_cif(&sources, test.records(), &a.tau, a.model.n_mc, &mut seeded(seed))?;
    let mut reports = Vec::new();
    for m in &a.metric {
        let kind = match m {
            MetricArg::Cindex => MetricKind::CIndex,
            MetricArg::Brier => MetricKind::Brier,
        };
        reports.extend(metrics_from_predictions(
            &table,
            test.records(),
            &a.tau,
            kind,
            a.model.n_mc,
            &a.split,
        )?);
    }
    run.write(&a.out, |b| write_reports(&reports, b))?;
    let config = json!({ "tau": a.tau, "metrics": reports.iter().map(|r| r.metric.name()).collect::<Vec<_>>(),
        "n_mc": a.model.n_mc, "draw_stride": a.model.draw_stride, "split": a.split });
    let summary = json!({ "scored_rows": test.len(), "dropped_rows": dropped, "reports": reports });
    run.finish("evaluate", config, summary, started, argv)
}

fn embed_cmd(cli: &Cli, a: &EmbedArgs, origin: Option<SeedOrigin>, argv: &[String], started: Instant) -> Result<()> {
    let (seed, origin) = resolve_seed(&a.seed, origin, None);
    let mut run = Run::new(&cli.output_dir, seed, origin)?;
    let params = Fitted::load(&a.model, &mut run)?.point()?;
    let data = load_data(&a.data, &mut run)?;
    let emb = embed_fit(data.records(), &params, a.model.n_mc, a.neighbors, &mut seeded(seed))?;
    if !emb.excluded.is_empty() {
        eprintln!(
            "note: {} point(s) outside the largest neighbour component were left out",
            emb.excluded.len()
        );
    }
    run.write(&a.out, |b| write_embedding(&emb.rows, b))?;
    let reps: Vec<_> = emb
        .representatives
        .iter()
        .map(|r| json!({ "risk": r.risk + 1, "subrisk": r.atom + 1, "centroid": r.centroid }))
        .collect();
    let config = json!({ "neighbors": a.neighbors, "n_mc": a.model.n_mc });
    let summary = json!({ "rows": emb.rows.len(), "excluded": emb.excluded, "representatives": reps });
    run.finish("embed", config, summary, started, argv)
}
