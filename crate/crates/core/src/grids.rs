//! Output-node placement: linear, logarithmic and quantile spacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{Spacing, SurvivalDataset, TimeGrid};

/// How to lay out the `num_nodes` prediction times.
///
/// `t_max` and `t_min` are taken from the data passed to [`build_grid`] when
/// left unset: `t_max` is the largest observed time and `t_min` the smallest
/// observed time, floored at 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub spacing: Spacing,
    pub num_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
}

impl GridSpec {
    pub fn new(spacing: Spacing, num_nodes: usize) -> Self {
        Self {
            spacing,
            num_nodes,
            t_max: None,
            t_min: None,
        }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = Some(t_max);
        self
    }

    pub fn with_t_min(mut self, t_min: f64) -> Self {
        self.t_min = Some(t_min);
        self
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::new(Spacing::Quantile, 10)
    }
}

pub fn build_grid(spec: &GridSpec, data: &SurvivalDataset) -> Result<TimeGrid> {
    if spec.num_nodes < 2 {
        return Err(Error::domain("a grid needs at least 2 nodes"));
    }
    let nodes = match spec.spacing {
        Spacing::Linear => {
            let t_max = window(spec, data)?;
            let l = spec.num_nodes as f64;
            (1..=spec.num_nodes)
                .map(|k| k as f64 * t_max / l)
                .collect()
        }
        Spacing::Logarithmic => {
            let t_max = window(spec, data)?;
            let t_min = match spec.t_min {
                Some(t) => t,
                None => data
                    .records()
                    .iter()
                    .map(|r| r.time)
                    .reduce(f64::min)
                    .unwrap_or(1.0)
                    .max(1.0),
            };
            if !(t_min > 0.0 && t_min < t_max) {
                return Err(Error::domain(format!(
                    "logarithmic spacing needs 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}"
                )));
            }
            let l = spec.num_nodes as f64;
            let ratio = t_max / t_min;
            let mut nodes: Vec<f64> = (1..=spec.num_nodes)
                .map(|k| t_min * ratio.powf(k as f64 / l))
                .collect();
            // pin the endpoint against powf rounding
            *nodes.last_mut().unwrap() = t_max;
            nodes
        }
        Spacing::Quantile => {
            if data.is_empty() {
                return Err(Error::domain("quantile spacing needs a non-empty dataset"));
            }
            quantile_nodes(&data.times(), spec.num_nodes)
        }
    };
    TimeGrid::new(nodes, spec.spacing)
}

fn window(spec: &GridSpec, data: &SurvivalDataset) -> Result<f64> {
    let t_max = spec
        .t_max
        .or_else(|| data.max_time())
        .ok_or_else(|| Error::domain("t_max unset and dataset empty"))?;
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::domain(format!("t_max must be positive, got {t_max}")));
    }
    Ok(t_max)
}

/// Nearest-rank quantiles at levels `l / L`, deduplicated.
fn quantile_nodes(times: &[f64], num_nodes: usize) -> Vec<f64> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut nodes: Vec<f64> = (1..=num_nodes)
        .map(|l| {
            let rank = (l * n).div_ceil(num_nodes);
            sorted[rank.max(1) - 1]
        })
        .collect();
    nodes.dedup();
    nodes
}

/// Per-node counts of records whose discretized time lands on that node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCount {
    pub events: usize,
    pub censored: usize,
}

impl NodeCount {
    pub fn total(&self) -> usize {
        self.events + self.censored
    }
}

pub fn event_histogram(data: &SurvivalDataset, grid: &TimeGrid) -> Vec<NodeCount> {
    let mut counts = vec![NodeCount::default(); grid.len()];
    for r in data.records() {
        let slot = &mut counts[grid.discretize(r.time)];
        if r.event {
            slot.events += 1;
        } else {
            slot.censored += 1;
        }
    }
    counts
}
