//! Observation records, datasets, CSV interchange and the two synthetic
//! competing-risks generators.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::standard_exponential;
use crate::error::{LdrError, Result};
use crate::rng::{seeded, substream};

/// What is known about a subject's event time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStatus {
    Observed(f64),
    RightCensored(f64),
    Missing,
}

/// What is known about a subject's event type. Risks are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventStatus {
    Known(usize),
    Missing,
}

/// One subject. `covariates[0]` is the intercept and always equals 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    covariates: Vec<f64>,
    time: TimeStatus,
    event: EventStatus,
}

impl ObservationRecord {
    pub fn new(covariates: Vec<f64>, time: TimeStatus, event: EventStatus) -> Result<Self> {
        if covariates.first() != Some(&1.0) {
            return Err(LdrError::param("covariate vector must start with the intercept 1"));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(LdrError::param("covariates must be finite"));
        }
        match time {
            TimeStatus::Observed(t) | TimeStatus::RightCensored(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(LdrError::param(format!("time {t} must be positive and finite")))
            }
            TimeStatus::RightCensored(_) if event != EventStatus::Missing => {
                return Err(LdrError::param("a right-censored record cannot carry an event type"))
            }
            TimeStatus::Missing if event == EventStatus::Missing => {
                return Err(LdrError::param("event time and event type cannot both be missing"))
            }
            _ => {}
        }
        Ok(Self {
            covariates,
            time,
            event,
        })
    }

    /// Uncensored record with known type.
    pub fn observed(covariates: Vec<f64>, time: f64, risk: usize) -> Result<Self> {
        Self::new(covariates, TimeStatus::Observed(time), EventStatus::Known(risk))
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn time(&self) -> TimeStatus {
        self.time
    }

    pub fn event(&self) -> EventStatus {
        self.event
    }

    /// Observed time and known type, usable for testing.
    pub fn is_fully_observed(&self) -> bool {
        matches!(
            (self.time, self.event),
            (TimeStatus::Observed(_), EventStatus::Known(_))
        )
    }

    pub fn is_censored(&self) -> bool {
        matches!(self.time, TimeStatus::RightCensored(_))
    }

    /// `(t, y)` if fully observed.
    pub fn outcome(&self) -> Option<(f64, usize)> {
        match (self.time, self.event) {
            (TimeStatus::Observed(t), EventStatus::Known(j)) => Some((t, j)),
            _ => None,
        }
    }

    pub fn with_event(&self, event: EventStatus) -> Result<Self> {
        Self::new(self.covariates.clone(), self.time, event)
    }
}

/// Summary written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub n: usize,
    #[serde(rename = "J")]
    pub num_risks: usize,
    #[serde(rename = "V")]
    pub num_covariates: usize,
    pub censored_count: usize,
    pub missing_time_count: usize,
    pub missing_event_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    covariate_names: Vec<String>,
    num_risks: usize,
    pub provenance: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(records: Vec<ObservationRecord>, covariate_names: Vec<String>, num_risks: usize) -> Result<Self> {
        if num_risks == 0 {
            return Err(LdrError::param("J must be at least 1"));
        }
        let dim = covariate_names.len() + 1;
        for (i, rec) in records.iter().enumerate() {
            if rec.covariates.len() != dim {
                return Err(LdrError::param(format!(
                    "record {i} has {} covariates, expected {dim} including the intercept",
                    rec.covariates.len()
                )));
            }
            if let EventStatus::Known(j) = rec.event {
                if j >= num_risks {
                    return Err(LdrError::param(format!("record {i} has risk {j} but J = {num_risks}")));
                }
            }
        }
        Ok(Self {
            records,
            covariate_names,
            num_risks,
            provenance: BTreeMap::new(),
        })
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_risks(&self) -> usize {
        self.num_risks
    }

    /// `V + 1`.
    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn metadata(&self) -> DatasetMetadata {
        DatasetMetadata {
            n: self.len(),
            num_risks: self.num_risks,
            num_covariates: self.covariate_names.len(),
            censored_count: self.records.iter().filter(|r| r.is_censored()).count(),
            missing_time_count: self.records.iter().filter(|r| r.time == TimeStatus::Missing).count(),
            missing_event_count: self
                .records
                .iter()
                .filter(|r| r.event == EventStatus::Missing && !r.is_censored())
                .count(),
        }
    }

    fn with_records(&self, records: Vec<ObservationRecord>) -> Self {
        Self {
            records,
            covariate_names: self.covariate_names.clone(),
            num_risks: self.num_risks,
            provenance: self.provenance.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.with_records(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Only rows with observed time and known type.
    pub fn fully_observed(&self) -> Self {
        self.with_records(self.records.iter().filter(|r| r.is_fully_observed()).cloned().collect())
    }

    /// Hide the event type of a random `fraction` of the uncensored rows with
    /// known type. Returns the masked dataset and the masked row indices.
    pub fn mask_event_types<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Self, Vec<usize>)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(LdrError::param(format!("mask fraction {fraction} outside [0, 1]")));
        }
        let mut eligible: Vec<usize> = (0..self.len())
            .filter(|&i| self.records[i].is_fully_observed())
            .collect();
        eligible.shuffle(rng);
        let count = (fraction * eligible.len() as f64).round() as usize;
        let mut masked: Vec<usize> = eligible[..count].to_vec();
        masked.sort_unstable();
        let mut records = self.records.clone();
        for &i in &masked {
            records[i] = records[i].with_event(EventStatus::Missing)?;
        }
        Ok((self.with_records(records), masked))
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| LdrError::io(path, e))?;
        let mut ds = Self::read_csv(file, schema)?;
        ds.provenance.insert("source".into(), path.display().to_string());
        Ok(ds)
    }

    pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| LdrError::Ingestion {
                    line: 1,
                    column: name.to_string(),
                    message: "column missing from header".into(),
                })
        };
        let time_col = find(&schema.time_column)?;
        let event_col = find(&schema.event_column)?;
        let covariate_names: Vec<String> = match &schema.covariate_columns {
            Some(cols) => cols.clone(),
            None => headers
                .iter()
                .filter(|h| *h != schema.time_column && *h != schema.event_column)
                .map(str::to_string)
                .collect(),
        };
        let cov_cols = covariate_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

        let mut records = Vec::new();
        let mut rejected = Vec::new();
        let mut max_risk = 0;
        for (idx, row) in rdr.records().enumerate() {
            let row = row?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(idx + 2);
            let bad = |column: &str, message: String| LdrError::Ingestion {
                line,
                column: column.to_string(),
                message,
            };
            let mut covariates = Vec::with_capacity(cov_cols.len() + 1);
            covariates.push(1.0);
            for (name, &c) in covariate_names.iter().zip(&cov_cols) {
                let field = row.get(c).unwrap_or("");
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(name, format!("cannot parse covariate {field:?}")))?;
                if !v.is_finite() {
                    return Err(bad(name, format!("non-finite covariate {field:?}")));
                }
                covariates.push(v);
            }
            let time_field = row.get(time_col).unwrap_or("");
            let mut time = parse_time(time_field).map_err(|m| bad(&schema.time_column, m))?;
            let event_field = row.get(event_col).unwrap_or("");
            let event = match event_field {
                "" => EventStatus::Missing,
                s => {
                    let code: usize = s
                        .parse()
                        .map_err(|_| bad(&schema.event_column, format!("cannot parse event {s:?}")))?;
                    if code == 0 {
                        time = match time {
                            TimeStatus::Observed(t) | TimeStatus::RightCensored(t) => TimeStatus::RightCensored(t),
                            TimeStatus::Missing => {
                                return Err(bad(
                                    &schema.event_column,
                                    "censoring marker without a censoring time".into(),
                                ))
                            }
                        };
                        EventStatus::Missing
                    } else {
                        if let Some(j) = schema.num_risks {
                            if code > j {
                                return Err(bad(&schema.event_column, format!("event {code} exceeds J = {j}")));
                            }
                        }
                        if matches!(time, TimeStatus::RightCensored(_)) {
                            return Err(bad(
                                &schema.event_column,
                                format!("censored time with event type {code}"),
                            ));
                        }
                        max_risk = max_risk.max(code);
                        EventStatus::Known(code - 1)
                    }
                }
            };
            if time == TimeStatus::Missing && event == EventStatus::Missing {
                rejected.push(bad(
                    &schema.time_column,
                    "event time and event type are both missing".into(),
                ));
                continue;
            }
            records.push(ObservationRecord {
                covariates,
                time,
                event,
            });
        }
        if !rejected.is_empty() {
            let count = rejected.len();
            return Err(LdrError::Rejected {
                rejected: count,
                first: Box::new(rejected.swap_remove(0)),
            });
        }
        let num_risks = schema.num_risks.unwrap_or(max_risk.max(1));
        Self::new(records, covariate_names, num_risks)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| LdrError::io(path, e))?;
        self.write_csv_to(file)
    }

    /// Header `time,event,<covariates>`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "event".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for rec in &self.records {
            let time = match rec.time {
                TimeStatus::Observed(t) => format!("{t}"),
                TimeStatus::RightCensored(t) => format!("C{t}"),
                TimeStatus::Missing => String::new(),
            };
            let event = match (rec.time, rec.event) {
                (TimeStatus::RightCensored(_), _) => "0".to_string(),
                (_, EventStatus::Known(j)) => (j + 1).to_string(),
                (_, EventStatus::Missing) => String::new(),
            };
            let mut row = vec![time, event];
            row.extend(rec.covariates[1..].iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| LdrError::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_metadata(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(path, json).map_err(|e| LdrError::io(path, e))
    }
}

fn parse_time(field: &str) -> std::result::Result<TimeStatus, String> {
    if field.is_empty() {
        return Ok(TimeStatus::Missing);
    }
    let (censored, number) = match field.strip_prefix('C') {
        Some(rest) => (true, rest),
        None => (false, field),
    };
    let t: f64 = number.parse().map_err(|_| format!("cannot parse time {field:?}"))?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(format!("time {field:?} must be positive"));
    }
    Ok(if censored {
        TimeStatus::RightCensored(t)
    } else {
        TimeStatus::Observed(t)
    })
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_column: String,
    pub event_column: String,
    /// `None` takes every other column, in header order.
    pub covariate_columns: Option<Vec<String>>,
    /// `None` infers `J` from the largest event code.
    pub num_risks: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            time_column: "time".into(),
            event_column: "event".into(),
            covariate_columns: None,
            num_risks: None,
        }
    }
}

/// Train/test partition; the test part keeps only fully observed rows.
pub fn train_test_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(LdrError::param(format!("train fraction {fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut seeded(seed));
    let cut = (fraction * data.len() as f64).round() as usize;
    let train = data.subset(&idx[..cut]);
    let test = data.subset(&idx[cut..]).fully_observed();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Data1,
    Data2,
}

impl std::str::FromStr for Generator {
    type Err = LdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data1" => Ok(Generator::Data1),
            "data2" => Ok(Generator::Data2),
            other => Err(LdrError::param(format!("unknown generator {other:?}"))),
        }
    }
}

/// Seeds of the default true coefficient draws, one per generator.
pub const DATA1_BETA_SEED: u64 = 3;
pub const DATA2_BETA_SEED: u64 = 11;

impl Generator {
    pub fn default_censor_time(self) -> f64 {
        match self {
            Generator::Data1 => 3.5,
            Generator::Data2 => 6.5,
        }
    }

    /// Fixed `N(0, I_3)` draws used as the true coefficients.
    pub fn default_beta(self) -> [Vec<f64>; 2] {
        let seed = match self {
            Generator::Data1 => DATA1_BETA_SEED,
            Generator::Data2 => DATA2_BETA_SEED,
        };
        beta_from_seed(seed)
    }
}

pub fn beta_from_seed(seed: u64) -> [Vec<f64>; 2] {
    let mut rng = substream(seed, 0xBE7A);
    let mut draw = || (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
    [draw(), draw()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
    pub beta: [Vec<f64>; 2],
    pub censor_time: f64,
}

impl SyntheticSpec {
    pub fn new(generator: Generator, n: usize, seed: u64) -> Self {
        Self {
            generator,
            n,
            seed,
            beta: generator.default_beta(),
            censor_time: generator.default_censor_time(),
        }
    }

    /// Event rates of the two latent exponential clocks at covariates `x`
    /// (no intercept).
    pub fn rates(&self, x: &[f64]) -> [f64; 2] {
        let e1: f64 = self.beta[0].iter().zip(x).map(|(b, v)| b * v).sum();
        let e2: f64 = self.beta[1].iter().zip(x).map(|(b, v)| b * v).sum();
        match self.generator {
            Generator::Data1 => [e1.exp(), e2.exp()],
            Generator::Data2 => [1.0 / e1.cosh(), 1.0 / e2.sinh().abs()],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LdrError::param("n must be at least 1"));
        }
        if self
            .beta
            .iter()
            .any(|b| b.len() != 3 || b.iter().any(|v| !v.is_finite()))
        {
            return Err(LdrError::param("true coefficient vectors must have length 3"));
        }
        if !(self.censor_time > 0.0) {
            return Err(LdrError::param("censor time must be positive"));
        }
        Ok(())
    }
}

/// Draw `spec.n` subjects with `x ~ N(0, I_3)`, racing the two latent clocks
/// and censoring at `spec.censor_time`.
pub fn simulate<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (x, rates) = loop {
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let rates = spec.rates(&x);
            if rates.iter().all(|r| r.is_finite() && *r > 0.0) {
                break (x, rates);
            }
        };
        let t1 = standard_exponential(rng) / rates[0];
        let t2 = standard_exponential(rng) / rates[1];
        let (t, y) = if t1 <= t2 { (t1, 0) } else { (t2, 1) };
        let mut covariates = Vec::with_capacity(4);
        covariates.push(1.0);
        covariates.extend(x);
        let rec = if t >= spec.censor_time {
            ObservationRecord::new(
                covariates,
                TimeStatus::RightCensored(spec.censor_time),
                EventStatus::Missing,
            )?
        } else {
            ObservationRecord::observed(covariates, t, y)?
        };
        records.push(rec);
    }
    let mut ds = Dataset::new(records, vec!["x1".into(), "x2".into(), "x3".into()], 2)?;
    ds.provenance
        .insert("generator".into(), format!("{:?}", spec.generator).to_lowercase());
    ds.provenance.insert("seed".into(), spec.seed.to_string());
    ds.provenance.insert("censor_time".into(), spec.censor_time.to_string());
    Ok(ds)
}
