//! Core survival types: records and datasets, discrete time grids, hazard and
//! survival sequences, the Kaplan-Meier estimator and curve interpolation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One individual: features, observed time `min(event, censoring)` and the
/// event indicator (`true` = event observed, `false` = right-censored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(features: Vec<f64>, time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::domain(format!(
                "observed time must be positive and finite, got {time}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("features must be finite"));
        }
        Ok(Self {
            features,
            time,
            event,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    feature_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let dim = feature_names.len();
        if let Some((i, r)) = records
            .iter()
            .enumerate()
            .find(|(_, r)| r.features.len() != dim)
        {
            return Err(Error::shape(format!(
                "record {i} has {} features, expected {dim}",
                r.features.len()
            )));
        }
        Ok(Self {
            records,
            feature_names,
        })
    }

    /// Builds a dataset from parallel time/event vectors with no features.
    pub fn from_outcomes(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::shape("times and events differ in length"));
        }
        let records = times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalRecord::new(Vec::new(), t, e))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records, Vec::new())
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn num_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Fraction of right-censored records; 0 for an empty dataset.
    pub fn censoring_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        (self.len() - self.num_events()) as f64 / self.len() as f64
    }

    pub fn max_time(&self) -> Option<f64> {
        self.records.iter().map(|r| r.time).reduce(f64::max)
    }

    /// New dataset holding the records at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Logarithmic,
    Quantile,
}

/// Ordered prediction times `t_1 < ... < t_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct TimeGrid {
    nodes: Vec<f64>,
    spacing: Spacing,
}

#[derive(Deserialize)]
struct RawGrid {
    nodes: Vec<f64>,
    spacing: Spacing,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.nodes, raw.spacing)
    }
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::domain(format!(
                "a time grid needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::domain("grid nodes must be positive and finite"));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("grid nodes must be strictly increasing"));
        }
        Ok(Self { nodes, spacing })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Zero-based index of the smallest node `>= t`, clamped to the last node.
    pub fn discretize(&self, t: f64) -> usize {
        self.nodes
            .partition_point(|&node| node < t)
            .min(self.nodes.len() - 1)
    }

    /// Index of the node closest to `t` (ties resolve to the earlier node).
    pub fn nearest_node(&self, t: f64) -> usize {
        let upper = self.nodes.partition_point(|&node| node < t);
        if upper == 0 {
            return 0;
        }
        if upper == self.nodes.len() {
            return upper - 1;
        }
        if t - self.nodes[upper - 1] <= self.nodes[upper] - t {
            upper - 1
        } else {
            upper
        }
    }

    /// Piecewise-linear evaluation rule for time `t` on this grid.
    pub fn interpolant(&self, t: f64) -> Interpolant {
        let first = self.nodes[0];
        if t < first {
            return Interpolant::Anchor {
                weight: (t / first).max(0.0),
            };
        }
        let last = self.nodes.len() - 1;
        if t >= self.nodes[last] {
            return Interpolant::Clamp { node: last };
        }
        // nodes[lower] <= t < nodes[lower + 1]
        let lower = self.nodes.partition_point(|&node| node <= t) - 1;
        let (a, b) = (self.nodes[lower], self.nodes[lower + 1]);
        Interpolant::Segment {
            lower,
            weight: (t - a) / (b - a),
        }
    }
}

/// How a curve defined on grid nodes is read off at an arbitrary time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interpolant {
    /// On the segment from the implicit anchor `(0, 1)` to the first node.
    Anchor { weight: f64 },
    /// Between `lower` and `lower + 1`; `weight` is the share of the upper node.
    Segment { lower: usize, weight: f64 },
    /// At or beyond the last node.
    Clamp { node: usize },
    /// Exact lookup of one node.
    Node(usize),
}

impl Interpolant {
    pub fn eval(&self, values: &[f64]) -> f64 {
        match *self {
            Interpolant::Anchor { weight } => 1.0 + (values[0] - 1.0) * weight,
            Interpolant::Segment { lower, weight } => {
                let a = values[lower];
                a + (values[lower + 1] - a) * weight
            }
            Interpolant::Clamp { node } | Interpolant::Node(node) => values[node],
        }
    }

    /// The same rule written as `constant + sum(weight_k * values[k])`.
    pub fn affine(&self) -> (f64, [(usize, f64); 2]) {
        match *self {
            Interpolant::Anchor { weight } => (1.0 - weight, [(0, weight), (0, 0.0)]),
            Interpolant::Segment { lower, weight } => {
                (0.0, [(lower, 1.0 - weight), (lower + 1, weight)])
            }
            Interpolant::Clamp { node } | Interpolant::Node(node) => {
                (0.0, [(node, 1.0), (node, 0.0)])
            }
        }
    }
}

/// Per-node hazards `h_1..h_L`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSequence {
    grid: Arc<TimeGrid>,
    hazards: Vec<f64>,
}

impl HazardSequence {
    pub fn new(grid: Arc<TimeGrid>, hazards: Vec<f64>) -> Result<Self> {
        if hazards.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} hazards for a grid of {} nodes",
                hazards.len(),
                grid.len()
            )));
        }
        if let Some(h) = hazards.iter().find(|h| !(0.0..=1.0).contains(*h)) {
            return Err(Error::domain(format!("hazard {h} outside [0, 1]")));
        }
        Ok(Self { grid, hazards })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn hazards(&self) -> &[f64] {
        &self.hazards
    }
}

/// Predicted survival `S(t_l | x)` on a grid; values in `[0, 1]`, non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} survival values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("survival value {v} outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::domain("survival curve must be non-increasing"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        self.grid.interpolant(t).eval(&self.values)
    }
}

/// `S(t_l) = prod_{j <= l} (1 - h_j)`.
pub fn survival_from_hazards(h: &HazardSequence) -> SurvivalCurve {
    let mut running = 1.0;
    let values = h
        .hazards
        .iter()
        .map(|&hz| {
            running *= 1.0 - hz;
            running
        })
        .collect();
    SurvivalCurve {
        grid: Arc::clone(&h.grid),
        values,
    }
}

/// Linear interpolation of `curve` at each of `eval_times`.
///
/// Before the first node the curve is read off the line through `(0, 1)` and
/// `(t_1, S(t_1))`; past the last node it is held at `S(t_L)`.
pub fn interpolate_curve(curve: &SurvivalCurve, eval_times: &[f64]) -> Vec<f64> {
    eval_times.iter().map(|&t| curve.at(t)).collect()
}

/// Product-limit survival estimate as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve {
    event_times: Vec<f64>,
    survival: Vec<f64>,
}

impl KaplanMeierCurve {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    /// `S(t)`, including any drop at `t` itself.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Left limit `S(t-)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

pub fn kaplan_meier(data: &SurvivalDataset) -> Result<KaplanMeierCurve> {
    kaplan_meier_from(&data.times(), &data.events())
}

/// Kaplan-Meier on raw `(time, event)` columns. Tied times are processed
/// together: all deaths at a time count against the same risk set, and
/// records censored at that time leave afterwards.
pub fn kaplan_meier_from(times: &[f64], events: &[bool]) -> Result<KaplanMeierCurve> {
    if times.is_empty() {
        return Err(Error::domain("Kaplan-Meier needs at least one record"));
    }
    if times.len() != events.len() {
        return Err(Error::shape("times and events differ in length"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut at_risk = times.len();
    let mut running = 1.0;
    let mut event_times = Vec::new();
    let mut survival = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut deaths = 0usize;
        let mut leaving = 0usize;
        while k < order.len() && times[order[k]] == t {
            deaths += usize::from(events[order[k]]);
            leaving += 1;
            k += 1;
        }
        if deaths > 0 {
            running *= 1.0 - deaths as f64 / at_risk as f64;
            event_times.push(t);
            survival.push(running);
        }
        at_risk -= leaving;
    }
    Ok(KaplanMeierCurve {
        event_times,
        survival,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nodes: &[f64]) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::new(nodes.to_vec(), Spacing::Linear).unwrap())
    }

    #[test]
    fn hazards_to_survival_examples() {
        let g = grid(&[1.0, 2.0, 3.0]);
        let s = survival_from_hazards(&HazardSequence::new(g, vec![0.0; 3]).unwrap());
        assert_eq!(s.values(), &[1.0, 1.0, 1.0]);

        let g = grid(&[1.0, 2.0]);
        let s = survival_from_hazards(&HazardSequence::new(g.clone(), vec![1.0, 0.3]).unwrap());
        assert_eq!(s.values(), &[0.0, 0.0]);

        let s = survival_from_hazards(&HazardSequence::new(g, vec![0.5, 0.5]).unwrap());
        assert_eq!(s.values(), &[0.5, 0.25]);
    }

    #[test]
    fn hazard_out_of_range_is_rejected() {
        let g = grid(&[1.0, 2.0]);
        assert!(matches!(
            HazardSequence::new(g.clone(), vec![0.1, 1.2]),
            Err(Error::Domain(_))
        ));
        assert!(HazardSequence::new(g, vec![-0.1, 0.2]).is_err());
    }

    #[test]
    fn km_all_events() {
        let km = kaplan_meier_from(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert!((km.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.eval(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.eval(3.0), 0.0);
        assert_eq!(km.eval(0.5), 1.0);
        assert_eq!(km.eval_left(2.0), km.eval(1.0));
    }

    #[test]
    fn km_censored_only_and_risk_set() {
        let km = kaplan_meier_from(&[5.0], &[false]).unwrap();
        assert!(km.event_times().is_empty());
        assert_eq!(km.eval(100.0), 1.0);

        let km = kaplan_meier_from(&[1.0, 2.0], &[false, true]).unwrap();
        assert_eq!(km.eval(1.5), 1.0);
        assert_eq!(km.eval(2.0), 0.0);
    }

    #[test]
    fn km_ties_processed_together() {
        // two deaths and one censoring at t=2, risk set of 4
        let km = kaplan_meier_from(&[2.0, 2.0, 2.0, 3.0], &[true, true, false, true]).unwrap();
        assert_eq!(km.event_times(), &[2.0, 3.0]);
        assert!((km.eval(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(km.eval(3.0), 0.0);
    }

    #[test]
    fn km_empty_is_error() {
        assert!(kaplan_meier_from(&[], &[]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let c = SurvivalCurve::new(grid(&[10.0, 20.0]), vec![1.0, 0.0]).unwrap();
        assert_eq!(interpolate_curve(&c, &[15.0]), vec![0.5]);
        assert_eq!(interpolate_curve(&c, &[25.0]), vec![0.0]);

        let c = SurvivalCurve::new(grid(&[10.0, 20.0]), vec![0.8, 0.4]).unwrap();
        assert!((c.at(5.0) - 0.9).abs() < 1e-15);
        assert_eq!(c.at(1000.0), 0.4);
    }

    #[test]
    fn discretize_rules() {
        let g = grid(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.discretize(3.0), 2);
        assert_eq!(g.discretize(2.5), 2);
        assert_eq!(g.discretize(0.1), 0);
        assert_eq!(g.discretize(9.0), 3);
        assert_eq!(g.nearest_node(2.4), 1);
        assert_eq!(g.nearest_node(2.6), 2);
    }

    #[test]
    fn curve_validation() {
        let g = grid(&[1.0, 2.0]);
        assert!(SurvivalCurve::new(g.clone(), vec![0.5, 0.6]).is_err());
        assert!(SurvivalCurve::new(g.clone(), vec![1.1, 0.6]).is_err());
        assert!(SurvivalCurve::new(g, vec![0.5]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![1.0], Spacing::Linear).is_err());
        assert!(TimeGrid::new(vec![1.0, 1.0], Spacing::Linear).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0], Spacing::Linear).is_err());
    }

    fn random_curve() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|l| {
            (
                prop::collection::vec(0.01f64..10.0, l),
                prop::collection::vec(0.0f64..=1.0, l),
            )
        })
    }

    fn curve_from(steps: &[f64], hazards: &[f64]) -> SurvivalCurve {
        let mut t = 0.0;
        let nodes: Vec<f64> = steps
            .iter()
            .map(|s| {
                t += s;
                t
            })
            .collect();
        let h = HazardSequence::new(grid(&nodes), hazards.to_vec()).unwrap();
        survival_from_hazards(&h)
    }

    proptest! {
        #[test]
        fn survival_is_non_increasing((steps, hazards) in random_curve()) {
            let c = curve_from(&steps, &hazards);
            prop_assert!(c.values().windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(c.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn interpolation_hits_nodes_and_stays_monotone((steps, hazards) in random_curve()) {
            let c = curve_from(&steps, &hazards);
            let at_nodes = interpolate_curve(&c, c.grid().nodes());
            prop_assert_eq!(&at_nodes[..], c.values());

            let last = c.grid().last();
            let ts: Vec<f64> = (0..200).map(|k| k as f64 * last * 1.2 / 199.0).collect();
            let vals = interpolate_curve(&c, &ts);
            prop_assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }

        #[test]
        fn km_without_censoring_is_one_minus_ecdf(times in prop::collection::vec(1u32..30, 1..40)) {
            let t: Vec<f64> = times.iter().map(|&x| x as f64).collect();
            let km = kaplan_meier_from(&t, &vec![true; t.len()]).unwrap();
            let n = t.len() as f64;
            for &e in km.event_times() {
                let ecdf = t.iter().filter(|&&x| x <= e).count() as f64 / n;
                prop_assert!((km.eval(e) - (1.0 - ecdf)).abs() < 1e-12);
            }
        }
    }
}
