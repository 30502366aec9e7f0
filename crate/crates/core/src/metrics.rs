//! Discrimination and calibration metrics with bootstrap aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{kaplan_meier_from, SurvivalCurve, SurvivalDataset};

fn check_lengths(curves: &[SurvivalCurve], data: &SurvivalDataset) -> Result<()> {
    if curves.len() != data.len() {
        return Err(Error::shape(format!(
            "{} curves for {} records",
            curves.len(),
            data.len()
        )));
    }
    Ok(())
}

/// Concordant, tied and total comparable-pair counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl PairCounts {
    pub fn score(&self) -> Option<f64> {
        (self.comparable > 0)
            .then(|| (2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

/// Pair counts behind the time-dependent concordance index: every pair with
/// `z_i < z_j` and `d_i = 1`, compared at `z_i`.
pub fn concordance_counts(curves: &[SurvivalCurve], data: &SurvivalDataset) -> Result<PairCounts> {
    check_lengths(curves, data)?;
    let records = data.records();
    let mut counts = PairCounts::default();
    for (i, ri) in records.iter().enumerate() {
        if !ri.event {
            continue;
        }
        let own = curves[i].at(ri.time);
        for (j, rj) in records.iter().enumerate() {
            if rj.time <= ri.time {
                continue;
            }
            let other = curves[j].at(ri.time);
            counts.comparable += 1;
            if own < other {
                counts.concordant += 1;
            } else if own == other {
                counts.tied += 1;
            }
        }
    }
    Ok(counts)
}

/// Time-dependent concordance; ties in prediction count one half.
pub fn cindex_td(curves: &[SurvivalCurve], data: &SurvivalDataset) -> Result<f64> {
    concordance_counts(curves, data)?
        .score()
        .ok_or_else(|| Error::Undefined("cindex_td: no comparable pairs".into()))
}

/// Weighting of cases inside each `AUC(t)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucWeighting {
    /// Every case counts equally.
    #[default]
    Uniform,
    /// Cases weighted by the inverse censoring-survival probability at
    /// their event time.
    Ipcw,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdaucOptions {
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub weighting: AucWeighting,
}

/// Resolved integration window and its Kaplan-Meier mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdaucWindow {
    pub tau1: f64,
    pub tau2: f64,
    pub mass: f64,
}

/// Default window: `tau1` is the first event time and `tau2` the last event
/// time at which the Kaplan-Meier estimate is still positive.
pub fn cdauc_window(data: &SurvivalDataset, opts: &CdaucOptions) -> Result<CdaucWindow> {
    let km = kaplan_meier_from(&data.times(), &data.events())?;
    let ev = km.event_times();
    let Some(&first) = ev.first() else {
        return Err(Error::Undefined("cdauc: no event times".into()));
    };
    let tau1 = opts.tau1.unwrap_or(first);
    let tau2 = match opts.tau2 {
        Some(t) => t,
        None => ev
            .iter()
            .zip(km.survival())
            .rev()
            .find(|(_, &s)| s > 0.0)
            .map_or(first, |(&t, _)| t),
    };
    if !(tau1 < tau2) {
        return Err(Error::Undefined(format!(
            "cdauc: empty window ({tau1}, {tau2}]"
        )));
    }
    let mass = km.eval(tau1) - km.eval(tau2);
    if !(mass > 0.0) {
        return Err(Error::Undefined(format!(
            "cdauc: no Kaplan-Meier mass in ({tau1}, {tau2}]"
        )));
    }
    Ok(CdaucWindow { tau1, tau2, mass })
}

/// Cumulative/dynamic `AUC(t)`: cases have `z_i <= t, d_i = 1`, controls
/// `z_j > t`. `None` when either group is empty.
pub fn auc_at(
    curves: &[SurvivalCurve],
    data: &SurvivalDataset,
    t: f64,
    case_weights: Option<&[f64]>,
) -> Result<Option<f64>> {
    check_lengths(curves, data)?;
    let mut controls = Vec::new();
    let mut cases = Vec::new();
    for (i, r) in data.records().iter().enumerate() {
        if r.time > t {
            controls.push(curves[i].at(t));
        } else if r.event {
            cases.push((curves[i].at(t), case_weights.map_or(1.0, |w| w[i])));
        }
    }
    if controls.is_empty() || cases.is_empty() {
        return Ok(None);
    }
    controls.sort_by(f64::total_cmp);
    let m = controls.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, w) in cases {
        let below = controls.partition_point(|&c| c < s);
        let not_above = controls.partition_point(|&c| c <= s);
        let above = m - not_above;
        let tied = not_above - below;
        num += w * (above as f64 + 0.5 * tied as f64);
        den += w * m as f64;
    }
    Ok(Some(num / den))
}

/// `sum_k AUC(t_k) (S(t_{k-1}) - S(t_k)) / (S(tau1) - S(tau2))` over event
/// times `t_k` in `(tau1, tau2]`, with `S` the Kaplan-Meier estimate on
/// `data`. Time points without controls are skipped and the remaining
/// weights renormalized.
pub fn cdauc(curves: &[SurvivalCurve], data: &SurvivalDataset, opts: &CdaucOptions) -> Result<f64> {
    check_lengths(curves, data)?;
    let window = cdauc_window(data, opts)?;
    let times = data.times();
    let events = data.events();
    let km = kaplan_meier_from(&times, &events)?;
    let case_weights = match opts.weighting {
        AucWeighting::Uniform => None,
        AucWeighting::Ipcw => {
            let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
            let g = kaplan_meier_from(&times, &flipped)?;
            Some(
                times
                    .iter()
                    .map(|&z| {
                        let p = g.eval_left(z);
                        if p > 0.0 {
                            1.0 / p
                        } else {
                            0.0
                        }
                    })
                    .collect::<Vec<_>>(),
            )
        }
    };

    let mut num = 0.0;
    let mut used = 0.0;
    for &t in km.event_times() {
        if t <= window.tau1 || t > window.tau2 {
            continue;
        }
        let w = km.eval_left(t) - km.eval(t);
        match auc_at(curves, data, t, case_weights.as_deref())? {
            Some(a) => {
                num += w * a;
                used += w;
            }
            None => {}
        }
    }
    if !(used > 0.0) {
        return Err(Error::Undefined(
            "cdauc: no time point in the window has both cases and controls".into(),
        ));
    }
    Ok(num / used)
}

/// Bin index of a survival value among `num_bins` equal-width bins on `[0, 1]`.
pub fn ddc_bin(value: f64, num_bins: usize) -> usize {
    ((value * num_bins as f64).floor().max(0.0) as usize).min(num_bins - 1)
}

/// KL divergence (natural log) of the binned `S(z_i | x_i)` of uncensored
/// records from the uniform distribution. Censored records are excluded.
pub fn ddc(curves: &[SurvivalCurve], data: &SurvivalDataset, num_bins: usize) -> Result<f64> {
    check_lengths(curves, data)?;
    let values: Vec<f64> = data
        .records()
        .iter()
        .zip(curves)
        .filter(|(r, _)| r.event)
        .map(|(r, c)| c.at(r.time))
        .collect();
    ddc_from_values(&values, num_bins)
}

pub fn ddc_from_values(values: &[f64], num_bins: usize) -> Result<f64> {
    if num_bins == 0 {
        return Err(Error::domain("ddc needs at least one bin"));
    }
    if values.is_empty() {
        return Err(Error::Undefined("ddc: no uncensored records".into()));
    }
    let mut counts = vec![0usize; num_bins];
    for &v in values {
        counts[ddc_bin(v, num_bins)] += 1;
    }
    let n = values.len() as f64;
    let q = 1.0 / num_bins as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * (p / q).ln()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub cdauc: CdaucOptions,
    pub ddc_bins: usize,
    pub bootstrap_folds: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            cdauc: CdaucOptions::default(),
            ddc_bins: 10,
            bootstrap_folds: 10,
        }
    }
}

impl MetricOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.ddc_bins == 0 {
            out.push("metrics.ddc_bins must be >= 1".into());
        }
        if self.bootstrap_folds < 2 {
            out.push("metrics.bootstrap_folds must be >= 2".into());
        }
        if let (Some(a), Some(b)) = (self.cdauc.tau1, self.cdauc.tau2) {
            if !(a < b) {
                out.push(format!("metrics.cdauc: tau1 {a} must be below tau2 {b}"));
            }
        }
        out
    }
}

/// Bootstrap mean and sample standard deviation of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub folds_used: usize,
    /// Resamples on which the metric was undefined.
    pub excluded_folds: Vec<usize>,
}

impl MetricSummary {
    fn from_samples(samples: &[Option<f64>]) -> Self {
        let used: Vec<f64> = samples.iter().flatten().copied().collect();
        let excluded_folds = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(k, _)| k)
            .collect();
        let n = used.len();
        // shifted by the first sample so identical samples give exactly zero spread
        let mean = used
            .first()
            .map(|&x0| x0 + used.iter().map(|x| x - x0).sum::<f64>() / n as f64);
        let std = mean.filter(|_| n > 1).map(|m| {
            (used.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            mean,
            std,
            folds_used: n,
            excluded_folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub folds: usize,
    pub seed: u64,
    pub cindex_td: MetricSummary,
    pub cdauc: MetricSummary,
    pub ddc: MetricSummary,
}

/// Metrics on the full evaluation set plus their bootstrap summaries.
/// Point estimates are `None` where undefined on the full set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_records: usize,
    pub n_events: usize,
    pub n_comparable_pairs: u64,
    pub ddc_excluded_censored: usize,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub cindex_td: Option<f64>,
    pub cdauc: Option<f64>,
    pub ddc: Option<f64>,
    pub bootstrap: BootstrapSummary,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Bootstrap resample indices: one `ChaCha8Rng::seed_from_u64(seed)` stream,
/// `n` draws of `random_range(0..n)` per fold, folds in order.
pub fn bootstrap_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..folds)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}

/// Evaluates fixed predictions on `data` and on `opts.bootstrap_folds`
/// resamples of it.
pub fn evaluate_curves(
    curves: &[SurvivalCurve],
    data: &SurvivalDataset,
    opts: &MetricOptions,
    seed: u64,
) -> Result<EvaluationReport> {
    check_lengths(curves, data)?;
    let problems = opts.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if data.is_empty() {
        return Err(Error::domain("evaluation set is empty"));
    }
    let one = |idx: Option<&[usize]>| -> Result<[Option<f64>; 3]> {
        let (c, d);
        let (cs, ds) = match idx {
            Some(idx) => {
                c = idx.iter().map(|&i| curves[i].clone()).collect::<Vec<_>>();
                d = data.select(idx);
                (c.as_slice(), &d)
            }
            None => (curves, data),
        };
        Ok([
            defined(cindex_td(cs, ds))?,
            defined(cdauc(cs, ds, &opts.cdauc))?,
            defined(ddc(cs, ds, opts.ddc_bins))?,
        ])
    };
    let [ci, auc, dd] = one(None)?;
    let window = cdauc_window(data, &opts.cdauc).ok();
    let folds = bootstrap_indices(data.len(), opts.bootstrap_folds, seed);
    let mut samples: [Vec<Option<f64>>; 3] = Default::default();
    for idx in &folds {
        let vals = one(Some(idx))?;
        for (s, v) in samples.iter_mut().zip(vals) {
            s.push(v);
        }
    }
    Ok(EvaluationReport {
        n_records: data.len(),
        n_events: data.num_events(),
        n_comparable_pairs: concordance_counts(curves, data)?.comparable,
        ddc_excluded_censored: data.len() - data.num_events(),
        tau1: window.map(|w| w.tau1),
        tau2: window.map(|w| w.tau2),
        cindex_td: ci,
        cdauc: auc,
        ddc: dd,
        bootstrap: BootstrapSummary {
            folds: opts.bootstrap_folds,
            seed,
            cindex_td: MetricSummary::from_samples(&samples[0]),
            cdauc: MetricSummary::from_samples(&samples[1]),
            ddc: MetricSummary::from_samples(&samples[2]),
        },
    })
}
