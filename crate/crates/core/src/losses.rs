//! Training objectives: the rank probability score (calibration), the
//! exponential pairwise kernel loss (discrimination) with event-event or
//! event-event plus event-censoring comparison masks, their normalized
//! combination, and comparison-count analytics.
//!
//! Each loss exists twice: as a plain `f64` function over [`SurvivalCurve`]s
//! and as a graph builder for training. Tests check one against the other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::survival::{Interpolant, SurvivalCurve, SurvivalDataset, TimeGrid};

/// Which ordered pairs `(i, j)` take part in the kernel loss.
///
/// Both require `d_i = 1` and `z_i < z_j`; `EventEvent` also needs `d_j = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    EventEvent,
    EventAny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonMask {
    pub variant: MaskVariant,
    pub pairs: Vec<(usize, usize)>,
}

impl ComparisonMask {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn qualifies(data: &SurvivalDataset, i: usize, j: usize, variant: MaskVariant) -> bool {
    let (ri, rj) = (&data.records()[i], &data.records()[j]);
    ri.event && ri.time < rj.time && (variant == MaskVariant::EventAny || rj.event)
}

/// Exhaustive enumeration of qualifying pairs, row-major in `(i, j)`.
pub fn build_mask(data: &SurvivalDataset, variant: MaskVariant) -> ComparisonMask {
    let n = data.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        if !data.records()[i].event {
            continue;
        }
        for j in 0..n {
            if qualifies(data, i, j, variant) {
                pairs.push((i, j));
            }
        }
    }
    ComparisonMask { variant, pairs }
}

/// Number of qualifying pairs without materializing them (`O(n log n)`).
pub fn count_pairs(times: &[f64], events: &[bool], variant: MaskVariant) -> u64 {
    let mut pool: Vec<f64> = match variant {
        MaskVariant::EventAny => times.to_vec(),
        MaskVariant::EventEvent => times
            .iter()
            .zip(events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect(),
    };
    pool.sort_by(f64::total_cmp);
    times
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| (pool.len() - pool.partition_point(|&x| x <= t)) as u64)
        .sum()
}

/// How `S(z_i | x)` is read off a discrete curve inside the kernel loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelEvaluation {
    /// Linear interpolation between nodes.
    #[default]
    Interpolated,
    /// Value at the node closest in time.
    NearestNode,
}

impl KernelEvaluation {
    fn interpolant(self, grid: &TimeGrid, t: f64) -> Interpolant {
        match self {
            KernelEvaluation::Interpolated => grid.interpolant(t),
            KernelEvaluation::NearestNode => Interpolant::Node(grid.nearest_node(t)),
        }
    }
}

/// How the calibration and discrimination terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// `rps / (n L) + lambda * kernel / n_comp`
    #[default]
    PerComparison,
    /// `rps + lambda * kernel`, the raw sums.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub kernel_variant: MaskVariant,
    pub kernel_evaluation: KernelEvaluation,
    pub normalization: LossNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: 1.0,
            kernel_variant: MaskVariant::EventAny,
            kernel_evaluation: KernelEvaluation::Interpolated,
            normalization: LossNormalization::PerComparison,
        }
    }
}

impl LossConfig {
    /// All violated constraints, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            out.push(format!("loss.lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            out.push(format!("loss.sigma must be > 0, got {}", self.sigma));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

fn check_curves(curves: &[SurvivalCurve], data: &SurvivalDataset, grid: &TimeGrid) -> Result<()> {
    if curves.len() != data.len() {
        return Err(Error::shape(format!(
            "{} curves for {} records",
            curves.len(),
            data.len()
        )));
    }
    if curves.iter().any(|c| c.grid().as_ref() != grid) {
        return Err(Error::shape("curve evaluated on a different grid"));
    }
    Ok(())
}

/// Per-record RPS target and inclusion mask over the grid.
fn rps_target(grid: &TimeGrid, time: f64, event: bool) -> (Vec<f64>, Vec<f64>) {
    let idx = grid.discretize(time);
    let l = grid.len();
    if event {
        let target = (0..l).map(|k| if k < idx { 1.0 } else { 0.0 }).collect();
        (target, vec![1.0; l])
    } else {
        let mask = (0..l).map(|k| if k <= idx { 1.0 } else { 0.0 }).collect();
        (vec![1.0; l], mask)
    }
}

/// Unnormalized rank probability score summed over records.
pub fn rps_loss(curves: &[SurvivalCurve], data: &SurvivalDataset, grid: &TimeGrid) -> Result<f64> {
    check_curves(curves, data, grid)?;
    let mut total = 0.0;
    for (c, r) in curves.iter().zip(data.records()) {
        let (target, mask) = rps_target(grid, r.time, r.event);
        for ((s, t), m) in c.values().iter().zip(&target).zip(&mask) {
            total += m * (s - t) * (s - t);
        }
    }
    Ok(total)
}

/// Unnormalized kernel loss `sum exp(-(S(z_i|x_j) - S(z_i|x_i)) / sigma)` over
/// the mask; zero for an empty mask.
pub fn kernel_loss(
    curves: &[SurvivalCurve],
    data: &SurvivalDataset,
    mask: &ComparisonMask,
    sigma: f64,
    evaluation: KernelEvaluation,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if curves.len() != data.len() {
        return Err(Error::shape("curves and records differ in length"));
    }
    let mut total = 0.0;
    for &(i, j) in &mask.pairs {
        let grid = curves[i].grid();
        let at = evaluation.interpolant(grid, data.records()[i].time);
        let own = at.eval(curves[i].values());
        let other = at.eval(curves[j].values());
        total += (-(other - own) / sigma).exp();
    }
    Ok(total)
}

/// The training objective on one batch.
pub fn combined_loss(
    curves: &[SurvivalCurve],
    data: &SurvivalDataset,
    grid: &TimeGrid,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let rps = rps_loss(curves, data, grid)?;
    let mask = build_mask(data, cfg.kernel_variant);
    let kernel = kernel_loss(curves, data, &mask, cfg.sigma, cfg.kernel_evaluation)?;
    Ok(match cfg.normalization {
        LossNormalization::PerComparison => {
            let rps_term = if data.is_empty() {
                0.0
            } else {
                rps / (data.len() * grid.len()) as f64
            };
            let kernel_term = if mask.is_empty() {
                0.0
            } else {
                cfg.lambda * kernel / mask.len() as f64
            };
            rps_term + kernel_term
        }
        LossNormalization::Raw => rps + cfg.lambda * kernel,
    })
}

/// Records the same objective as [`combined_loss`] on a graph, given the
/// survival matrix `[batch, L]` for the records of `data`.
pub fn combined_loss_graph(
    g: &mut Graph,
    survival: Var,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    cfg: &LossConfig,
) -> Result<Var> {
    let n = data.len();
    let l = grid.len();
    if g.shape(survival) != [n, l] {
        return Err(Error::shape(format!(
            "survival matrix {:?}, expected [{n}, {l}]",
            g.shape(survival)
        )));
    }
    let mut targets = Vec::with_capacity(n * l);
    let mut masks = Vec::with_capacity(n * l);
    for r in data.records() {
        let (t, m) = rps_target(grid, r.time, r.event);
        targets.extend(t);
        masks.extend(m);
    }
    let target = g.constant(Tensor::new(n, l, targets)?);
    let diff = g.sub(survival, target)?;
    let sq = g.square(diff);
    let masked = g.mul_const(sq, &Tensor::new(n, l, masks)?)?;
    let rps = g.sum(masked);

    let mask = build_mask(data, cfg.kernel_variant);
    let kernel = if mask.is_empty() || cfg.lambda == 0.0 {
        None
    } else {
        // weights[i, k]: contribution of node k to S(z_i | .); the constant
        // part of the interpolant cancels in the pairwise difference
        let mut weights = vec![0.0; n * l];
        for (i, r) in data.records().iter().enumerate() {
            let (_, terms) = cfg.kernel_evaluation.interpolant(grid, r.time).affine();
            for (k, w) in terms {
                weights[i * l + k] += w;
            }
        }
        let w = g.constant(Tensor::new(n, l, weights)?.transpose());
        // at[j, i] = S(z_i | x_j) up to the shared constant
        let at = g.matmul(survival, w)?;
        let other: Vec<usize> = mask.pairs.iter().map(|&(i, j)| j * n + i).collect();
        let own: Vec<usize> = mask.pairs.iter().map(|&(i, _)| i * n + i).collect();
        let other = g.gather(at, other)?;
        let own = g.gather(at, own)?;
        let margin = g.sub(other, own)?;
        let arg = g.scale(margin, -1.0 / cfg.sigma);
        let e = g.exp(arg);
        Some(g.sum(e))
    };

    Ok(match cfg.normalization {
        LossNormalization::PerComparison => {
            let rps_term = g.scale(rps, 1.0 / (n * l).max(1) as f64);
            match kernel {
                Some(k) => {
                    let k_term = g.scale(k, cfg.lambda / mask.len() as f64);
                    g.add(rps_term, k_term)?
                }
                None => rps_term,
            }
        }
        LossNormalization::Raw => match kernel {
            Some(k) => {
                let k_term = g.scale(k, cfg.lambda);
                g.add(rps, k_term)?
            }
            None => rps,
        },
    })
}

/// Probability that a random ordered pair is comparable when a fraction `c`
/// of records is censored independently of time: `(1-c)^2 / 2` for
/// event-event pairs, `(1-c) / 2` when event-censoring pairs also count.
pub fn estimate_comparison_probability(c: f64, variant: MaskVariant) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::domain(format!("censoring rate must lie in [0, 1), got {c}")));
    }
    Ok(match variant {
        MaskVariant::EventEvent => (1.0 - c) * (1.0 - c) / 2.0,
        MaskVariant::EventAny => (1.0 - c) / 2.0,
    })
}

/// Large-sample standard error of `pairs / n^2` under the same independence
/// model with continuous times, from the first-order (Hoeffding) variance of
/// the pair-count U-statistic: `sqrt(q^3 (1-q) / n)` for event-event pairs and
/// `sqrt(q (1-q) / (3 n))` with event-censoring pairs, where `q = 1 - c`.
pub fn comparison_standard_error(c: f64, n: usize, variant: MaskVariant) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::domain(format!("censoring rate must lie in [0, 1), got {c}")));
    }
    if n == 0 {
        return Err(Error::domain("standard error needs n >= 1"));
    }
    let q = 1.0 - c;
    let n = n as f64;
    Ok(match variant {
        MaskVariant::EventEvent => (q * q * q * (1.0 - q) / n).sqrt(),
        MaskVariant::EventAny => (q * (1.0 - q) / (3.0 * n)).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub n: usize,
    pub censoring_rate: f64,
    pub event_event_pairs: u64,
    pub event_any_pairs: u64,
    /// `|B| / |A|`, absent when there are no event-event pairs.
    pub factor_observed: Option<f64>,
    /// `1 / (1 - c)`, absent when every record is censored.
    pub factor_estimated: Option<f64>,
}

pub fn comparison_factor(data: &SurvivalDataset) -> ComparisonSummary {
    let (times, events) = (data.times(), data.events());
    let a = count_pairs(&times, &events, MaskVariant::EventEvent);
    let b = count_pairs(&times, &events, MaskVariant::EventAny);
    let c = data.censoring_rate();
    ComparisonSummary {
        n: data.len(),
        censoring_rate: c,
        event_event_pairs: a,
        event_any_pairs: b,
        factor_observed: (a > 0).then(|| b as f64 / a as f64),
        factor_estimated: (c < 1.0).then(|| 1.0 / (1.0 - c)),
    }
}
