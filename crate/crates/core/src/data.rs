//! CSV ingestion, preprocessing, synthetic data and stratified splitting.
//!
//! Random streams are `ChaCha8Rng::seed_from_u64(seed)` throughout, so any
//! external tool with the same generator can replay them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{SurvivalDataset, SurvivalRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSchema {
    pub time_column: String,
    pub event_column: String,
    pub categorical_columns: Vec<String>,
    pub zero_as_missing_columns: Vec<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            time_column: "time".into(),
            event_column: "event".into(),
            categorical_columns: Vec::new(),
            zero_as_missing_columns: Vec::new(),
        }
    }
}

impl DatasetSchema {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.time_column == self.event_column {
            out.push("schema.time_column and schema.event_column must differ".to_string());
        }
        for label in [&self.time_column, &self.event_column] {
            if self.categorical_columns.contains(label) || self.zero_as_missing_columns.contains(label)
            {
                out.push(format!("schema: label column {label} listed as a feature"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: ColumnValues,
}

/// Parsed CSV contents before imputation; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Wraps an already-numeric dataset (e.g. synthetic data) as a raw table.
    pub fn from_dataset(data: &SurvivalDataset) -> Self {
        let columns = data
            .feature_names()
            .iter()
            .enumerate()
            .map(|(k, name)| RawColumn {
                name: name.clone(),
                values: ColumnValues::Numeric(
                    data.records().iter().map(|r| Some(r.features[k])).collect(),
                ),
            })
            .collect();
        Self {
            columns,
            times: data.times(),
            events: data.events(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv(input: impl Read, schema: &DatasetSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut missing: Vec<String> = [&schema.time_column, &schema.event_column]
        .into_iter()
        .filter(|c| find(c).is_none())
        .cloned()
        .collect();
    missing.extend(
        schema
            .categorical_columns
            .iter()
            .chain(&schema.zero_as_missing_columns)
            .filter(|c| find(c).is_none())
            .cloned(),
    );
    if !missing.is_empty() {
        return Err(Error::Schema(missing));
    }
    let time_idx = find(&schema.time_column).unwrap();
    let event_idx = find(&schema.event_column).unwrap();
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&k| k != time_idx && k != event_idx)
        .collect();

    let mut columns: Vec<RawColumn> = feature_idx
        .iter()
        .map(|&k| RawColumn {
            name: headers[k].clone(),
            values: if schema.categorical_columns.contains(&headers[k]) {
                ColumnValues::Categorical(Vec::new())
            } else {
                ColumnValues::Numeric(Vec::new())
            },
        })
        .collect();
    let zero_missing: Vec<bool> = feature_idx
        .iter()
        .map(|&k| schema.zero_as_missing_columns.contains(&headers[k]))
        .collect();

    let mut times = Vec::new();
    let mut events = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Csv { line, message };
        if row.len() != headers.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                headers.len(),
                row.len()
            )));
        }
        let t_cell = row[time_idx].trim();
        let time: f64 = t_cell
            .parse()
            .map_err(|_| err(format!("time {t_cell:?} is not a number")))?;
        if !(time.is_finite() && time > 0.0) {
            return Err(err(format!("time must be positive, got {time}")));
        }
        let e_cell = row[event_idx].trim();
        let event = match e_cell {
            "1" | "1.0" | "true" | "True" => true,
            "0" | "0.0" | "false" | "False" => false,
            "" => return Err(err("event indicator is missing".into())),
            other => return Err(err(format!("event indicator {other:?} is not 0/1"))),
        };
        times.push(time);
        events.push(event);

        for ((col, &k), &zm) in columns.iter_mut().zip(&feature_idx).zip(&zero_missing) {
            let cell = row[k].trim();
            match &mut col.values {
                ColumnValues::Categorical(v) => {
                    v.push((!cell.is_empty()).then(|| cell.to_string()));
                }
                ColumnValues::Numeric(v) => {
                    if cell.is_empty() {
                        v.push(None);
                        continue;
                    }
                    let x: f64 = cell.parse().map_err(|_| {
                        err(format!("column {}: {cell:?} is not a number", col.name))
                    })?;
                    if !x.is_finite() {
                        return Err(err(format!("column {}: non-finite value", col.name)));
                    }
                    v.push(if zm && x == 0.0 { None } else { Some(x) });
                }
            }
        }
    }
    Ok(RawTable {
        columns,
        times,
        events,
    })
}

/// Writes `feature..., time, event` with shortest round-trip float formatting.
pub fn write_csv(data: &SurvivalDataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.extend(["time", "event"]);
    w.write_record(&header)?;
    for r in data.records() {
        let mut row: Vec<String> = r.features.iter().map(|x| x.to_string()).collect();
        row.push(r.time.to_string());
        row.push(if r.event { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub name: String,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalStats {
    pub name: String,
    pub mode: String,
    pub vocabulary: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnStats {
    Numeric(NumericStats),
    Categorical(CategoricalStats),
}

/// Training-set statistics for imputation, standardization and encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub columns: Vec<ColumnStats>,
    /// Constant or entirely missing columns, ignored at apply time.
    pub dropped: Vec<String>,
}

impl PreprocessStats {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.columns {
            match c {
                ColumnStats::Numeric(s) => names.push(s.name.clone()),
                ColumnStats::Categorical(s) => {
                    names.extend(s.vocabulary.iter().map(|v| format!("{}={v}", s.name)))
                }
            }
        }
        names
    }

    fn known_columns(&self) -> BTreeSet<&str> {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnStats::Numeric(s) => s.name.as_str(),
                ColumnStats::Categorical(s) => s.name.as_str(),
            })
            .chain(self.dropped.iter().map(String::as_str))
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn fit_preprocess(train: &RawTable) -> Result<PreprocessStats> {
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for col in &train.columns {
        match &col.values {
            ColumnValues::Numeric(v) => {
                let mut present: Vec<f64> = v.iter().flatten().copied().collect();
                if present.is_empty() {
                    warn!("dropping column {}: no observed values", col.name);
                    dropped.push(col.name.clone());
                    continue;
                }
                let med = median(&mut present);
                let imputed: Vec<f64> = v.iter().map(|x| x.unwrap_or(med)).collect();
                let n = imputed.len() as f64;
                let mean = imputed.iter().sum::<f64>() / n;
                let var = imputed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                if !(std > 1e-12 * mean.abs().max(1.0)) {
                    warn!("dropping column {}: constant after imputation", col.name);
                    dropped.push(col.name.clone());
                    continue;
                }
                columns.push(ColumnStats::Numeric(NumericStats {
                    name: col.name.clone(),
                    median: med,
                    mean,
                    std,
                }));
            }
            ColumnValues::Categorical(v) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for s in v.iter().flatten() {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
                // most frequent; ties go to the lexicographically smallest
                let Some((mode, _)) = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                else {
                    warn!("dropping column {}: no observed values", col.name);
                    dropped.push(col.name.clone());
                    continue;
                };
                columns.push(ColumnStats::Categorical(CategoricalStats {
                    name: col.name.clone(),
                    mode: mode.to_string(),
                    vocabulary: counts.keys().map(|s| s.to_string()).collect(),
                }));
            }
        }
    }
    Ok(PreprocessStats { columns, dropped })
}

pub fn apply_preprocess(table: &RawTable, stats: &PreprocessStats) -> Result<SurvivalDataset> {
    let known = stats.known_columns();
    let mut offending: Vec<String> = known
        .iter()
        .filter(|name| table.column(name).is_none())
        .map(|name| format!("{name} (missing)"))
        .collect();
    offending.extend(
        table
            .columns
            .iter()
            .filter(|c| !known.contains(c.name.as_str()))
            .map(|c| format!("{} (unknown)", c.name)),
    );
    if !offending.is_empty() {
        return Err(Error::Schema(offending));
    }

    let n = table.len();
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); n];
    for cs in &stats.columns {
        match cs {
            ColumnStats::Numeric(s) => {
                let col = table.column(&s.name).unwrap();
                let ColumnValues::Numeric(v) = &col.values else {
                    return Err(Error::Schema(vec![format!("{} (expected numeric)", s.name)]));
                };
                for (row, x) in features.iter_mut().zip(v) {
                    row.push((x.unwrap_or(s.median) - s.mean) / s.std);
                }
            }
            ColumnStats::Categorical(s) => {
                let col = table.column(&s.name).unwrap();
                let ColumnValues::Categorical(v) = &col.values else {
                    return Err(Error::Schema(vec![format!(
                        "{} (expected categorical)",
                        s.name
                    )]));
                };
                let mut unseen = 0usize;
                for (row, x) in features.iter_mut().zip(v) {
                    let value = x.as_deref().unwrap_or(&s.mode);
                    let hit = s.vocabulary.iter().position(|c| c == value);
                    if hit.is_none() {
                        unseen += 1;
                    }
                    row.extend((0..s.vocabulary.len()).map(|k| f64::from(u8::from(Some(k) == hit))));
                }
                if unseen > 0 {
                    warn!(
                        "column {}: {unseen} values outside the training vocabulary encoded as all zeros",
                        s.name
                    );
                }
            }
        }
    }
    let records = features
        .into_iter()
        .zip(table.times.iter().zip(&table.events))
        .map(|(f, (&t, &e))| SurvivalRecord::new(f, t, e))
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(records, stats.feature_names())
}

/// Event-time law for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDistribution {
    /// Times `U(low, high]` and one unrelated standard-normal feature.
    Uniform { low: f64, high: f64 },
    /// Weibull times with scale `scale * exp(-beta . x)` over standard-normal
    /// features `x`, one per coefficient.
    Weibull {
        shape: f64,
        scale: f64,
        coefficients: Vec<f64>,
    },
    /// Two equally likely groups with Weibull times of their own shape and
    /// scale. Features are the group id (0 short-lived, 1 long-lived) and a
    /// standard-normal covariate `u` that stretches times by `exp(spread * u)`.
    TwoCluster {
        short_shape: f64,
        long_shape: f64,
        short_scale: f64,
        long_scale: f64,
        spread: f64,
    },
}

impl TimeDistribution {
    /// Short-lived group with a falling hazard, long-lived group with a
    /// steeply rising one, so the hazards cross inside the follow-up.
    pub fn two_cluster() -> Self {
        TimeDistribution::TwoCluster {
            short_shape: 0.5,
            long_shape: 5.0,
            short_scale: 10.0,
            long_scale: 20.0,
            spread: 0.6,
        }
    }

    fn feature_names(&self) -> Vec<String> {
        match self {
            TimeDistribution::Uniform { .. } => vec!["x0".into()],
            TimeDistribution::Weibull { coefficients, .. } => {
                (0..coefficients.len()).map(|k| format!("x{k}")).collect()
            }
            TimeDistribution::TwoCluster { .. } => vec!["cluster".into(), "u".into()],
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            TimeDistribution::Uniform { low, high } => {
                if !(*low >= 0.0 && high > low && high.is_finite()) {
                    out.push(format!("uniform needs 0 <= low < high, got [{low}, {high}]"));
                }
            }
            TimeDistribution::Weibull { shape, scale, .. } => {
                if !(*shape > 0.0 && *scale > 0.0) {
                    out.push("weibull shape and scale must be positive".into());
                }
            }
            TimeDistribution::TwoCluster {
                short_shape,
                long_shape,
                short_scale,
                long_scale,
                spread,
            } => {
                if !(*short_shape > 0.0
                    && *long_shape > 0.0
                    && *short_scale > 0.0 && *long_scale > 0.0 && *spread >= 0.0) {
                    out.push("two-cluster shapes and scales must be positive".into());
                }
            }
        }
        out
    }

    /// Draws `(features, time)` for one record.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        // (0, 1]
        let unit = |rng: &mut ChaCha8Rng| 1.0 - rng.random::<f64>();
        let weibull = |scale: f64, shape: f64, u: f64| scale * (-u.ln()).powf(1.0 / shape);
        let (features, t) = match self {
            TimeDistribution::Uniform { low, high } => {
                let x: f64 = rng.sample(StandardNormal);
                (vec![x], low + (high - low) * unit(rng))
            }
            TimeDistribution::Weibull {
                shape,
                scale,
                coefficients,
            } => {
                let x: Vec<f64> = coefficients
                    .iter()
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let lin: f64 = x.iter().zip(coefficients).map(|(a, b)| a * b).sum();
                (x, weibull(scale * (-lin).exp(), *shape, unit(rng)))
            }
            TimeDistribution::TwoCluster {
                short_shape,
                long_shape,
                short_scale,
                long_scale,
                spread,
            } => {
                let long = rng.random::<bool>();
                let u: f64 = rng.sample(StandardNormal);
                let (shape, base) = if long {
                    (*long_shape, *long_scale)
                } else {
                    (*short_shape, *short_scale)
                };
                let t = weibull(base * (spread * u).exp(), shape, unit(rng));
                (vec![f64::from(u8::from(long)), u], t)
            }
        };
        (features, t.max(f64::MIN_POSITIVE))
    }
}

/// How censoring is imposed on drawn event times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringMode {
    /// Each record's flag flips with probability `c`; its time is kept. Flags
    /// are independent of times, the setting in which the closed-form
    /// comparison estimates are exact.
    IndependentFlags,
    /// Exactly `round(c n)` records are censored, drawn without replacement
    /// with weight `(time rank / n)^strength`, so late records drop out more.
    LateDropout { strength: f64 },
    /// A latent censoring time `C ~ U(0, h)` competes with the event time;
    /// `h` is tuned on the drawn sample so the realized rate is close to `c`.
    Competing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub censoring_rate: f64,
    pub distribution: TimeDistribution,
    pub censoring: CensoringMode,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn uniform(n: usize, censoring_rate: f64, seed: u64) -> Self {
        Self {
            n,
            censoring_rate,
            distribution: TimeDistribution::Uniform {
                low: 0.0,
                high: 100.0,
            },
            censoring: CensoringMode::IndependentFlags,
            seed,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SurvivalDataset> {
    let c = spec.censoring_rate;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::domain(format!("censoring rate must lie in [0, 1), got {c}")));
    }
    let problems = spec.distribution.problems();
    if !problems.is_empty() {
        return Err(Error::domain(problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draws: Vec<(Vec<f64>, f64)> = (0..spec.n).map(|_| spec.distribution.draw(&mut rng)).collect();
    let mut times: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let mut events = vec![true; spec.n];

    match spec.censoring {
        CensoringMode::IndependentFlags => {
            for e in events.iter_mut() {
                *e = rng.random::<f64>() >= c;
            }
        }
        CensoringMode::LateDropout { strength } => {
            if !(strength >= 0.0) {
                return Err(Error::domain("late-dropout strength must be >= 0"));
            }
            let m = (c * spec.n as f64).round() as usize;
            let mut order: Vec<usize> = (0..spec.n).collect();
            order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
            let mut weight = vec![0.0; spec.n];
            for (rank, &i) in order.iter().enumerate() {
                weight[i] = ((rank + 1) as f64 / spec.n as f64).powf(strength);
            }
            // weighted sampling without replacement: keep the m largest u^(1/w)
            let mut keys: Vec<(f64, usize)> = (0..spec.n)
                .map(|i| (rng.random::<f64>().powf(1.0 / weight[i]), i))
                .collect();
            keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in keys.iter().take(m) {
                events[i] = false;
            }
        }
        CensoringMode::Competing => {
            let v: Vec<f64> = (0..spec.n).map(|_| rng.random::<f64>()).collect();
            if c > 0.0 && spec.n > 0 {
                let rate = |h: f64| {
                    v.iter().zip(&times).filter(|(vi, t)| h * **vi < **t).count() as f64
                        / spec.n as f64
                };
                let t_max = times.iter().copied().fold(0.0, f64::max);
                let (mut lo, mut hi) = (t_max * 1e-6, t_max * 1e6);
                for _ in 0..200 {
                    let mid = (lo * hi).sqrt();
                    if rate(mid) > c {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let h = if (rate(lo) - c).abs() <= (rate(hi) - c).abs() { lo } else { hi };
                for i in 0..spec.n {
                    let censor = h * v[i];
                    if censor < times[i] {
                        times[i] = censor.max(f64::MIN_POSITIVE);
                        events[i] = false;
                    }
                }
            }
        }
    }

    let records = draws
        .into_iter()
        .zip(times.into_iter().zip(events))
        .map(|((f, _), (t, e))| SurvivalRecord::new(f, t, e))
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(records, spec.distribution.feature_names())
}

/// Train/test indices, stratified by the event flag.
///
/// Event and censored indices are each shuffled (events first, with one
/// `ChaCha8Rng::seed_from_u64(seed)` stream via `SliceRandom::shuffle`) and
/// the first `round(test_fraction * stratum size)` of each go to the test
/// set. Both index lists are returned in ascending order.
pub fn stratified_split_indices(
    data: &SurvivalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for flag in [true, false] {
        let mut stratum: Vec<usize> = (0..data.len())
            .filter(|&i| data.records()[i].event == flag)
            .collect();
        stratum.shuffle(&mut rng);
        let k = (test_fraction * stratum.len() as f64).round() as usize;
        test.extend_from_slice(&stratum[..k]);
        train.extend_from_slice(&stratum[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::domain(format!(
            "too few records ({}) to split with test fraction {test_fraction}",
            data.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(
    data: &SurvivalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let (train, test) = stratified_split_indices(data, test_fraction, seed)?;
    Ok((data.select(&train), data.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{count_pairs, MaskVariant};
    use proptest::prelude::*;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            categorical_columns: vec!["grp".into()],
            zero_as_missing_columns: vec!["hr".into()],
            ..DatasetSchema::default()
        }
    }

    #[test]
    fn reads_well_formed_file() {
        let csv = "age,grp,hr,time,event\n50,a,80,3.5,1\n61,,0,2,0\n,b,72,10,1\n";
        let t = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.times, vec![3.5, 2.0, 10.0]);
        assert_eq!(t.events, vec![true, false, true]);
        assert_eq!(
            t.column("hr").unwrap().values,
            ColumnValues::Numeric(vec![Some(80.0), None, Some(72.0)])
        );
        assert_eq!(
            t.column("age").unwrap().values,
            ColumnValues::Numeric(vec![Some(50.0), Some(61.0), None])
        );
    }

    #[test]
    fn missing_event_is_hard_error() {
        let csv = "x,time,event\n1,2,1\n1,3,\n";
        match read_csv(csv.as_bytes(), &DatasetSchema::default()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let csv = "x,time,event\n1,2,1\n1,-3,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &DatasetSchema::default()),
            Err(Error::Csv { line: 3, .. })
        ));
        let csv = "x,time,event\nfoo,2,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &DatasetSchema::default()),
            Err(Error::Csv { line: 2, .. })
        ));
        let csv = "x,event\n1,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &DatasetSchema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn centering_and_mode_imputation() {
        let train = "v,grp,time,event\n1,a,1,1\n2,a,2,1\n3,,3,0\n4,b,4,1\n";
        let schema = DatasetSchema {
            categorical_columns: vec!["grp".into()],
            ..DatasetSchema::default()
        };
        let t = read_csv(train.as_bytes(), &schema).unwrap();
        let stats = fit_preprocess(&t).unwrap();
        let ColumnStats::Numeric(v) = &stats.columns[0] else { panic!() };
        assert_eq!(v.mean, 2.5);
        let ColumnStats::Categorical(g) = &stats.columns[1] else { panic!() };
        assert_eq!(g.mode, "a");
        assert_eq!(g.vocabulary, vec!["a", "b"]);
        let d = apply_preprocess(&t, &stats).unwrap();
        // missing grp imputed with mode "a"
        assert_eq!(&d.records()[2].features[1..], &[1.0, 0.0]);
        assert_eq!(d.feature_names(), &["v", "grp=a", "grp=b"]);

        let test = "v,grp,time,event\n2.5,c,5,1\n";
        let tt = read_csv(test.as_bytes(), &schema).unwrap();
        let dt = apply_preprocess(&tt, &stats).unwrap();
        assert_eq!(dt.records()[0].features, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn column_mismatch_is_schema_error() {
        let schema = DatasetSchema::default();
        let t = read_csv("a,b,time,event\n1,2,1,1\n2,5,2,1\n".as_bytes(), &schema).unwrap();
        let stats = fit_preprocess(&t).unwrap();
        let other = read_csv("a,c,time,event\n1,2,1,1\n".as_bytes(), &schema).unwrap();
        match apply_preprocess(&other, &stats) {
            Err(Error::Schema(cols)) => assert_eq!(cols, vec!["b (missing)", "c (unknown)"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_columns_dropped() {
        let t = read_csv(
            "a,k,time,event\n1,5,1,1\n2,5,2,1\n".as_bytes(),
            &DatasetSchema::default(),
        )
        .unwrap();
        let stats = fit_preprocess(&t).unwrap();
        assert_eq!(stats.dropped, vec!["k"]);
        assert_eq!(apply_preprocess(&t, &stats).unwrap().num_features(), 1);
    }

    #[test]
    fn synthetic_basics() {
        let d = generate_synthetic(&SyntheticSpec::uniform(500, 0.0, 3)).unwrap();
        assert_eq!(d.num_events(), 500);
        let a = generate_synthetic(&SyntheticSpec::uniform(200, 0.4, 9)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::uniform(200, 0.4, 9)).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(&SyntheticSpec::uniform(10, 1.0, 1)).is_err());
    }

    #[test]
    fn synthetic_pair_rate_matches_estimate() {
        let n = 100_000;
        let c = 0.3;
        let d = generate_synthetic(&SyntheticSpec::uniform(n, c, 42)).unwrap();
        let b = count_pairs(&d.times(), &d.events(), MaskVariant::EventAny) as f64;
        let p = (1.0 - c) / 2.0;
        let observed = b / (n as f64 * n as f64);
        // generous bound: the U-statistic's standard error is O(1/sqrt(n))
        assert!((observed - p).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "{observed}");
    }

    #[test]
    fn other_censoring_modes_hit_rate() {
        for censoring in [CensoringMode::LateDropout { strength: 2.0 }, CensoringMode::Competing] {
            let spec = SyntheticSpec {
                censoring,
                ..SyntheticSpec::uniform(2000, 0.6, 5)
            };
            let d = generate_synthetic(&spec).unwrap();
            assert!((d.censoring_rate() - 0.6).abs() < 0.01, "{censoring:?}: {}", d.censoring_rate());
        }
    }

    #[test]
    fn split_is_stratified() {
        let t: Vec<f64> = (1..=100).map(f64::from).collect();
        let e: Vec<bool> = (0..100).map(|k| k < 40).collect();
        let d = SurvivalDataset::from_outcomes(&t, &e).unwrap();
        let (train, test) = stratified_split(&d, 0.2, 1).unwrap();
        assert_eq!((test.num_events(), test.len() - test.num_events()), (8, 12));
        assert_eq!(train.len(), 80);
        assert_eq!(stratified_split(&d, 0.2, 1).unwrap().1, test);
        let one = SurvivalDataset::from_outcomes(&[1.0], &[true]).unwrap();
        assert!(stratified_split(&one, 0.2, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_and_balances(
            flags in prop::collection::vec(any::<bool>(), 10..120),
            frac in 0.1f64..0.5,
            seed in any::<u64>(),
        ) {
            let t: Vec<f64> = (1..=flags.len()).map(|k| k as f64).collect();
            let d = SurvivalDataset::from_outcomes(&t, &flags).unwrap();
            let Ok((tr, te)) = stratified_split_indices(&d, frac, seed) else { return Ok(()) };
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..flags.len()).collect::<Vec<_>>());
            let rate = |idx: &[usize]| idx.iter().filter(|&&i| flags[i]).count() as f64 / idx.len() as f64;
            let full = d.num_events() as f64 / d.len() as f64;
            let tol = 1.0 / tr.len().min(te.len()) as f64 + 1e-12;
            prop_assert!((rate(&tr) - full).abs() <= tol);
            prop_assert!((rate(&te) - full).abs() <= tol);
        }

        #[test]
        fn standardization_on_train(values in prop::collection::vec(-100.0f64..100.0, 3..50)) {
            prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-3));
            let n = values.len();
            let table = RawTable {
                columns: vec![RawColumn { name: "v".into(), values: ColumnValues::Numeric(values.iter().map(|&v| Some(v)).collect()) }],
                times: vec![1.0; n],
                events: vec![true; n],
            };
            let d = apply_preprocess(&table, &fit_preprocess(&table).unwrap()).unwrap();
            let col: Vec<f64> = d.records().iter().map(|r| r.features[0]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
