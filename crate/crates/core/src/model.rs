//! The recurrent hazard network and its training loop.
//!
//! Features pass through a dense encoder; the encoding is fed unchanged at
//! each of the `L` grid steps into a stack of (optionally bidirectional)
//! LSTM layers; each step's state, optionally concatenated with the
//! encoding, goes through a shared dense aggregation head ending in one
//! sigmoid unit that gives the hazard at that node.

use std::sync::Arc;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_preprocess, stratified_split_indices, PreprocessStats, RawTable};
use crate::error::{Error, Result};
use crate::grids::{build_grid, GridSpec};
use crate::losses::{combined_loss, combined_loss_graph, LossConfig};
use crate::numerics::{
    adam_step, dropout, lstm_forward, Activation, AdamConfig, AdamState, Dense, Graph, LstmLayer,
    ParamStore, Tensor, Var,
};
use crate::survival::{SurvivalCurve, SurvivalDataset, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
    pub bidirectional: bool,
    pub lstm_skip: bool,
    /// Hidden widths before the final scalar layer.
    pub aggregation_layers: Vec<usize>,
    pub grid: GridSpec,
    pub loss: LossConfig,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: vec![32],
            decoder_layers: vec![32],
            bidirectional: true,
            lstm_skip: true,
            aggregation_layers: Vec::new(),
            grid: GridSpec::default(),
            loss: LossConfig::default(),
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, widths) in [
            ("encoder_layers", &self.encoder_layers),
            ("decoder_layers", &self.decoder_layers),
            ("aggregation_layers", &self.aggregation_layers),
        ] {
            if widths.contains(&0) {
                out.push(format!("model.{name}: widths must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            out.push(format!(
                "model.dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if self.grid.num_nodes < 2 {
            out.push(format!(
                "model.grid.num_nodes must be >= 2, got {}",
                self.grid.num_nodes
            ));
        }
        out.extend(self.loss.problems());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            max_epochs: 100,
            early_stop_patience: 10,
            validation_fraction: 0.2,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("train.batch_size must be >= 1".into());
        }
        if self.early_stop_patience == 0 {
            out.push("train.early_stop_patience must be >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            out.push(format!(
                "train.validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            out.push("train.optimizer.lr must be positive".into());
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            out.push("train.optimizer betas must lie in [0, 1)".into());
        }
        if !(o.eps > 0.0) {
            out.push("train.optimizer.eps must be positive".into());
        }
        out
    }
}

/// Layer structure of the network; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<LstmLayer>,
    pub aggregation: Vec<Dense>,
    pub output: Dense,
    pub num_features: usize,
    pub num_nodes: usize,
    pub lstm_skip: bool,
    pub dropout_rate: f64,
}

impl Network {
    /// Registers freshly initialised parameters in `store`.
    pub fn build(
        cfg: &ModelConfig,
        num_features: usize,
        num_nodes: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::domain("the network needs at least one feature"));
        }
        let mut width = num_features;
        let encoder: Vec<Dense> = cfg
            .encoder_layers
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let d = Dense::new(store, &format!("encoder.{k}"), width, w, rng);
                width = w;
                d
            })
            .collect();
        let encoded = width;
        let decoder: Vec<LstmLayer> = cfg
            .decoder_layers
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let layer = LstmLayer::new(
                    store,
                    &format!("decoder.{k}"),
                    width,
                    h,
                    cfg.bidirectional,
                    rng,
                );
                width = layer.output_width();
                layer
            })
            .collect();
        let lstm_skip = cfg.lstm_skip && !decoder.is_empty();
        if lstm_skip {
            width += encoded;
        }
        let aggregation = cfg
            .aggregation_layers
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let d = Dense::new(store, &format!("aggregation.{k}"), width, w, rng);
                width = w;
                d
            })
            .collect();
        let output = Dense::new(store, "output", width, 1, rng);
        Ok(Self {
            encoder,
            decoder,
            aggregation,
            output,
            num_features,
            num_nodes,
            lstm_skip,
            dropout_rate: cfg.dropout_rate,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.encoder.iter().map(Dense::num_scalars).sum::<usize>()
            + self.decoder.iter().map(LstmLayer::num_scalars).sum::<usize>()
            + self.aggregation.iter().map(Dense::num_scalars).sum::<usize>()
            + self.output.num_scalars()
    }

    /// Hazards and survival, both `[batch, L]`. Dropout is active only when
    /// `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let [_, p] = g.shape(x);
        if p != self.num_features {
            return Err(Error::domain(format!(
                "model expects {} features, got {p}",
                self.num_features
            )));
        }
        let rate = self.dropout_rate;
        let mut drop = |g: &mut Graph, v: Var| -> Result<Var> {
            match rng.as_deref_mut() {
                Some(r) => dropout(g, v, rate, r),
                None => Ok(v),
            }
        };

        let mut e = x;
        for layer in &self.encoder {
            e = layer.forward(g, store, e, Activation::Relu)?;
            e = drop(g, e)?;
        }
        let mut steps = vec![e; self.num_nodes];
        for layer in &self.decoder {
            steps = lstm_forward(g, store, &steps, layer)?;
            steps = steps
                .into_iter()
                .map(|s| drop(g, s))
                .collect::<Result<_>>()?;
        }
        let mut hazards = Vec::with_capacity(self.num_nodes);
        for s in steps {
            let mut a = if self.lstm_skip { g.concat(&[s, e])? } else { s };
            for layer in &self.aggregation {
                a = layer.forward(g, store, a, Activation::Relu)?;
                a = drop(g, a)?;
            }
            hazards.push(self.output.forward(g, store, a, Activation::Sigmoid)?);
        }
        let mut running: Option<Var> = None;
        let mut survival = Vec::with_capacity(self.num_nodes);
        for &h in &hazards {
            let keep = g.one_minus(h);
            let s = match running {
                Some(prev) => g.mul(prev, keep)?,
                None => keep,
            };
            running = Some(s);
            survival.push(s);
        }
        Ok((g.concat(&hazards)?, g.concat(&survival)?))
    }
}

fn feature_tensor(data: &SurvivalDataset, idx: &[usize]) -> Result<Tensor> {
    let p = data.num_features();
    let mut values = Vec::with_capacity(idx.len() * p);
    for &i in idx {
        values.extend_from_slice(&data.records()[i].features);
    }
    Tensor::new(idx.len(), p, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Fitted network with its grid and, when trained from a raw table, the
/// preprocessing statistics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    network: Network,
    store: ParamStore,
    grid: Arc<TimeGrid>,
    feature_names: Vec<String>,
    stats: Option<PreprocessStats>,
    config: ModelConfig,
}

/// Everything besides the parameter values needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub grid: TimeGrid,
    pub feature_names: Vec<String>,
    pub preprocessing: Option<PreprocessStats>,
    pub model: ModelConfig,
}

fn loss_on(
    network: &Network,
    store: &ParamStore,
    data: &SurvivalDataset,
    idx: &[usize],
    grid: &TimeGrid,
    loss: &LossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(feature_tensor(data, idx)?);
    let (_, s) = network.forward(&mut g, store, x, None)?;
    let s = g.value(s);
    let grid = Arc::new(grid.clone());
    let curves = (0..idx.len())
        .map(|r| SurvivalCurve::new(grid.clone(), s.row(r).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    combined_loss(&curves, &data.select(idx), &grid, loss)
}

/// Minibatch Adam on the combined loss with early stopping on a stratified
/// validation split. The time grid is built from all of `data`.
pub fn train(
    data: &SurvivalDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(TrainedModel, TrainingLog)> {
    let mut problems = mcfg.problems();
    problems.extend(tcfg.problems());
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let grid = Arc::new(build_grid(&mcfg.grid, data)?);
    let (train_idx, val_idx) = match stratified_split_indices(data, tcfg.validation_fraction, mcfg.seed)
    {
        Ok(split) => split,
        Err(_) => {
            warn!(
                "{} records are too few for a validation split; validating on the training data",
                data.len()
            );
            let all: Vec<usize> = (0..data.len()).collect();
            (all.clone(), all)
        }
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(mcfg.seed);
    let mut store = ParamStore::new();
    let network = Network::build(mcfg, data.num_features(), grid.len(), &mut store, &mut init_rng)?;
    let mut adam = AdamState::zeros(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(mcfg.seed.wrapping_add(1));

    let mut best_store = store.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order = train_idx.clone();

    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let fail = |message: String| Error::Training {
                epoch,
                batch: b,
                message,
            };
            let batch = data.select(chunk);
            let mut g = Graph::new();
            let x = g.constant(feature_tensor(data, chunk)?);
            let (_, s) = network.forward(&mut g, &store, x, Some(&mut rng))?;
            let loss = combined_loss_graph(&mut g, s, &batch, &grid, &mcfg.loss)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(fail(format!("loss is {value}")));
            }
            let grads = g.backward(loss)?.for_params(&store);
            adam_step(&mut store, &grads, &mut adam, &tcfg.optimizer)
                .map_err(|e| fail(e.to_string()))?;
            total += value;
            batches += 1;
        }
        let val = loss_on(&network, &store, data, &val_idx, &grid, &mcfg.loss)?;
        if !val.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: batches,
                message: format!("validation loss is {val}"),
            });
        }
        let improved = val < best_loss;
        if improved {
            best_loss = val;
            best_epoch = epoch;
            best_store = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        let train_loss = total / batches.max(1) as f64;
        debug!("epoch {epoch}: train {train_loss:.6} validation {val:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss: val,
            improved,
        });
        if since_best >= tcfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let log = TrainingLog {
        epochs,
        best_epoch,
        best_validation_loss: best_loss,
        stopped_early,
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
    };
    let model = TrainedModel {
        network,
        store: best_store,
        grid,
        feature_names: data.feature_names().to_vec(),
        stats: None,
        config: mcfg.clone(),
    };
    Ok((model, log))
}

/// Fits nothing itself: `stats` must come from the training table.
pub fn train_table(
    table: &RawTable,
    stats: &PreprocessStats,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(TrainedModel, TrainingLog)> {
    let data = apply_preprocess(table, stats)?;
    let (mut model, log) = train(&data, mcfg, tcfg)?;
    model.stats = Some(stats.clone());
    Ok((model, log))
}

impl TrainedModel {
    /// Untrained model with freshly initialised parameters.
    pub fn initial(cfg: &ModelConfig, grid: TimeGrid, feature_names: Vec<String>) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let network = Network::build(cfg, feature_names.len(), grid.len(), &mut store, &mut rng)?;
        Ok(Self {
            network,
            store,
            grid: Arc::new(grid),
            feature_names,
            stats: None,
            config: cfg.clone(),
        })
    }

    /// Rebuilds a model from a manifest and stored parameters, checking that
    /// every parameter name and shape matches the configured architecture.
    pub fn from_parts(manifest: ModelManifest, params: ParamStore) -> Result<Self> {
        let mut model = Self::initial(&manifest.model, manifest.grid, manifest.feature_names)?;
        let expected = model.store.params();
        let found = params.params();
        let matches = expected.len() == found.len()
            && expected
                .iter()
                .zip(found)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !matches {
            return Err(Error::Checkpoint(
                "stored parameters do not match the configured architecture".into(),
            ));
        }
        model.store = params;
        model.stats = manifest.preprocessing;
        Ok(model)
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            grid: (*self.grid).clone(),
            feature_names: self.feature_names.clone(),
            preprocessing: self.stats.clone(),
            model: self.config.clone(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn preprocessing(&self) -> Option<&PreprocessStats> {
        self.stats.as_ref()
    }

    /// Survival curves for preprocessed feature rows.
    pub fn predict_features(&self, rows: &[Vec<f64>]) -> Result<Vec<SurvivalCurve>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::from_rows(rows).map_err(|_| Error::domain("feature rows differ in length"))?;
        let mut g = Graph::new();
        let x = g.constant(x);
        let (_, s) = self.network.forward(&mut g, &self.store, x, None)?;
        let s = g.value(s);
        (0..rows.len())
            .map(|r| SurvivalCurve::new(self.grid.clone(), s.row(r).to_vec()))
            .collect()
    }

    pub fn predict(&self, data: &SurvivalDataset) -> Result<Vec<SurvivalCurve>> {
        if data.feature_names() != self.feature_names.as_slice() {
            return Err(Error::domain(format!(
                "feature columns {:?} differ from the model's {:?}",
                data.feature_names(),
                self.feature_names
            )));
        }
        let rows: Vec<Vec<f64>> = data.records().iter().map(|r| r.features.clone()).collect();
        self.predict_features(&rows)
    }

    /// Applies the stored preprocessing to a raw table, then predicts.
    pub fn predict_table(&self, table: &RawTable) -> Result<(SurvivalDataset, Vec<SurvivalCurve>)> {
        let stats = self.stats.as_ref().ok_or_else(|| {
            Error::domain("model carries no preprocessing statistics; predict on features instead")
        })?;
        let data = apply_preprocess(table, stats)?;
        let curves = self.predict(&data)?;
        Ok((data, curves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;
    use crate::survival::Spacing;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            encoder_layers: vec![4],
            decoder_layers: vec![3],
            aggregation_layers: vec![2],
            grid: GridSpec::new(Spacing::Linear, 4),
            dropout_rate: 0.0,
            ..ModelConfig::default()
        }
    }

    fn grid(l: usize) -> TimeGrid {
        TimeGrid::new((1..=l).map(|k| k as f64).collect(), Spacing::Linear).unwrap()
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|k| format!("x{k}")).collect()
    }

    #[test]
    fn zero_network_gives_half_hazards() {
        let mut m = TrainedModel::initial(&small_config(), grid(4), names(2)).unwrap();
        for p in m.store.params_mut() {
            p.tensor.data_mut().fill(0.0);
        }
        let curves = m.predict_features(&[vec![0.3, -1.0], vec![2.0, 5.0]]).unwrap();
        for c in curves {
            assert_eq!(c.values(), &[0.5, 0.25, 0.125, 0.0625]);
        }
    }

    #[test]
    fn empty_encoder_reads_raw_features() {
        let cfg = ModelConfig {
            encoder_layers: vec![],
            ..small_config()
        };
        let m = TrainedModel::initial(&cfg, grid(4), names(3)).unwrap();
        assert_eq!(m.network.decoder[0].forward.inputs, 3);
        let c = m.predict_features(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(c[0].values().len(), 4);
    }

    #[test]
    fn empty_decoder_feeds_aggregation() {
        let cfg = ModelConfig {
            decoder_layers: vec![],
            ..small_config()
        };
        let m = TrainedModel::initial(&cfg, grid(5), names(2)).unwrap();
        assert_eq!(m.network.aggregation[0].inputs, 4);
        assert_eq!(m.predict_features(&[vec![0.0, 1.0]]).unwrap()[0].values().len(), 5);
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let m = TrainedModel::initial(&small_config(), grid(4), names(2)).unwrap();
        assert!(matches!(
            m.predict_features(&[vec![1.0, 2.0, 3.0]]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn predictions_are_pure_per_row() {
        let m = TrainedModel::initial(&small_config(), grid(4), names(2)).unwrap();
        let a = vec![0.5, -0.2];
        let b = vec![-1.5, 0.7];
        let one = m.predict_features(&[a.clone(), b.clone(), a.clone()]).unwrap();
        let two = m.predict_features(&[b, a]).unwrap();
        assert_eq!(one[0], one[2]);
        assert_eq!(one[0], two[1]);
        assert_eq!(one[1], two[0]);
    }

    #[test]
    fn drsa_reduction_parameter_count() {
        let (p, e, h, l) = (5, 6, 7, 4);
        let cfg = ModelConfig {
            encoder_layers: vec![e],
            decoder_layers: vec![h],
            bidirectional: false,
            lstm_skip: false,
            aggregation_layers: vec![],
            ..ModelConfig::default()
        };
        let m = TrainedModel::initial(&cfg, grid(l), names(p)).unwrap();
        // dense encoder, one LSTM, one dense hazard unit
        let expected = (p * e + e) + 4 * h * (e + h + 1) + (h + 1);
        assert_eq!(m.network.num_scalars(), expected);
        assert_eq!(m.store.num_scalars(), expected);

        let full = ModelConfig {
            bidirectional: true,
            lstm_skip: true,
            ..cfg
        };
        let m = TrainedModel::initial(&full, grid(l), names(p)).unwrap();
        let expected = (p * e + e) + 2 * 4 * h * (e + h + 1) + (2 * h + e + 1);
        assert_eq!(m.store.num_scalars(), expected);
    }

    fn toy_data(n: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = rng.random_range(0.5..4.5);
                crate::survival::SurvivalRecord::new(x, t, rng.random::<f64>() < 0.7).unwrap()
            })
            .collect();
        SurvivalDataset::new(records, names(2)).unwrap()
    }

    #[test]
    fn pipeline_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            encoder_layers: vec![6],
            decoder_layers: vec![5],
            aggregation_layers: vec![4],
            ..small_config()
        };
        let data = toy_data(5, 3);
        let mut m = TrainedModel::initial(&cfg, grid(4), names(2)).unwrap();
        // move biases off zero so no unit sits exactly on a ReLU kink
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in m.store.params_mut() {
            if p.name.ends_with("bias") {
                p.tensor.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            }
        }
        let idx: Vec<usize> = (0..5).collect();
        let loss = |store: &ParamStore| {
            let mut g = Graph::new();
            let x = g.constant(feature_tensor(&data, &idx).unwrap());
            let (_, s) = m.network.forward(&mut g, store, x, None).unwrap();
            let l = combined_loss_graph(&mut g, s, &data, &m.grid, &cfg.loss).unwrap();
            (g, l)
        };
        let (g, l) = loss(&m.store);
        let analytic = g.backward(l).unwrap().for_params(&m.store);
        let report = check_gradients(&m.store, &analytic, 1e-5, |s| {
            let (g, l) = loss(s);
            g.value(l).data()[0]
        });
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let cfg = small_config();
        let data = toy_data(8, 4);
        let m = TrainedModel::initial(&cfg, grid(4), names(2)).unwrap();
        let idx: Vec<usize> = (0..8).collect();
        let plain = loss_on(&m.network, &m.store, &data, &idx, &m.grid, &cfg.loss).unwrap();
        let mut g = Graph::new();
        let x = g.constant(feature_tensor(&data, &idx).unwrap());
        let (_, s) = m.network.forward(&mut g, &m.store, x, None).unwrap();
        let l = combined_loss_graph(&mut g, s, &data, &m.grid, &cfg.loss).unwrap();
        assert!((g.value(l).data()[0] - plain).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let data = toy_data(60, 5);
        let tcfg = TrainConfig {
            batch_size: 16,
            max_epochs: 6,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        let cfg = ModelConfig {
            dropout_rate: 0.2,
            ..small_config()
        };
        let (a, log_a) = train(&data, &cfg, &tcfg).unwrap();
        let (b, log_b) = train(&data, &cfg, &tcfg).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.params(), b.params());
        let best = log_a.best_validation_loss;
        assert!(log_a.epochs.iter().all(|e| best <= e.validation_loss));
        assert_eq!(log_a.train_size + log_a.validation_size, 60);
    }

    #[test]
    fn rejects_invalid_configs_together() {
        let data = toy_data(10, 1);
        let mut cfg = small_config();
        cfg.dropout_rate = 1.0;
        cfg.loss.lambda = -1.0;
        let tcfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        match train(&data, &cfg, &tcfg) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
