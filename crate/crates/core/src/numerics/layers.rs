//! Dense and LSTM layers built on the autodiff graph, plus inverted dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, ParamId, ParamStore, Var};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Glorot-uniform initialisation: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// `act(x W + b)` for `x: [batch, in]`, `W: [in, out]`, `b: [1, out]`.
pub fn dense_forward(g: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let [_, inp] = g.shape(x);
    let [w_in, _] = g.shape(w);
    if inp != w_in {
        return Err(Error::shape(format!(
            "dense layer expects {w_in} inputs, got {inp}"
        )));
    }
    let xw = g.matmul(x, w)?;
    let z = g.add_row(xw, b)?;
    Ok(act.apply(g, z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot_uniform(inputs, outputs, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, outputs));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        act: Activation,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        dense_forward(g, x, w, b, act)
    }

    pub fn num_scalars(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// One LSTM direction. Gate columns are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_input = store.add(
            format!("{name}.w_input"),
            glorot_uniform(inputs, 4 * hidden, rng),
        );
        let w_hidden = store.add(
            format!("{name}.w_hidden"),
            glorot_uniform(hidden, 4 * hidden, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, 4 * hidden));
        Self {
            w_input,
            w_hidden,
            bias,
            inputs,
            hidden,
        }
    }

    pub fn num_scalars(&self) -> usize {
        4 * self.hidden * (self.inputs + self.hidden + 1)
    }

    /// Runs the recurrence over `sequence` (each `[batch, inputs]`) from zero
    /// state and returns the hidden state after every step.
    fn run(&self, g: &mut Graph, store: &ParamStore, sequence: &[Var]) -> Result<Vec<Var>> {
        let h = self.hidden;
        let w_in = g.param(store, self.w_input);
        let w_h = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let batch = g.shape(sequence[0])[0];

        let mut state_h = g.constant(Tensor::zeros(batch, h));
        let mut state_c = g.constant(Tensor::zeros(batch, h));
        let mut projected: Vec<(Var, Var)> = Vec::new();
        let mut outputs = Vec::with_capacity(sequence.len());
        for &x in sequence {
            let [rows, cols] = g.shape(x);
            if rows != batch || cols != self.inputs {
                return Err(Error::shape(format!(
                    "lstm step input {rows}x{cols}, expected {batch}x{}",
                    self.inputs
                )));
            }
            // constant decoder inputs repeat the same var; project it once
            let xw = match projected.iter().find(|(v, _)| *v == x) {
                Some(&(_, p)) => p,
                None => {
                    let xw = g.matmul(x, w_in)?;
                    let p = g.add_row(xw, b)?;
                    projected.push((x, p));
                    p
                }
            };
            let hw = g.matmul(state_h, w_h)?;
            let gates = g.add(xw, hw)?;
            let i_pre = g.slice(gates, 0, h)?;
            let f_pre = g.slice(gates, h, 2 * h)?;
            let c_pre = g.slice(gates, 2 * h, 3 * h)?;
            let o_pre = g.slice(gates, 3 * h, 4 * h)?;
            let i = g.sigmoid(i_pre);
            let f = g.sigmoid(f_pre);
            let cand = g.tanh(c_pre);
            let o = g.sigmoid(o_pre);
            let keep = g.mul(f, state_c)?;
            let write = g.mul(i, cand)?;
            state_c = g.add(keep, write)?;
            let squashed = g.tanh(state_c);
            state_h = g.mul(o, squashed)?;
            outputs.push(state_h);
        }
        Ok(outputs)
    }
}

/// An LSTM layer, optionally bidirectional.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: LstmCell,
    pub backward: Option<LstmCell>,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let forward = LstmCell::new(store, &format!("{name}.fwd"), inputs, hidden, rng);
        let backward = bidirectional
            .then(|| LstmCell::new(store, &format!("{name}.bwd"), inputs, hidden, rng));
        Self { forward, backward }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn num_scalars(&self) -> usize {
        self.forward.num_scalars() + self.backward.as_ref().map_or(0, LstmCell::num_scalars)
    }
}

/// Per-step outputs `[batch, hidden]`, or `[batch, 2 * hidden]` when
/// bidirectional: step `l` concatenates the forward state after reading
/// steps `1..=l` with the backward state after reading steps `L..=l`.
pub fn lstm_forward(
    g: &mut Graph,
    store: &ParamStore,
    sequence: &[Var],
    layer: &LstmLayer,
) -> Result<Vec<Var>> {
    if sequence.is_empty() {
        return Err(Error::shape("lstm needs at least one time step"));
    }
    let fwd = layer.forward.run(g, store, sequence)?;
    let Some(bwd_cell) = &layer.backward else {
        return Ok(fwd);
    };
    let reversed: Vec<Var> = sequence.iter().rev().copied().collect();
    let mut bwd = bwd_cell.run(g, store, &reversed)?;
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| g.concat(&[f, b]))
        .collect()
}

/// Inverted dropout: zero with probability `rate`, scale survivors by `1 / (1 - rate)`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let [r, c] = g.shape(x);
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    g.mul_const(x, &Tensor::new(r, c, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_dense_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap());
        let w = g.constant(Tensor::zeros(3, 2));
        let b = g.constant(Tensor::zeros(1, 2));
        let y = dense_forward(&mut g, x, w, b, Activation::Identity).unwrap();
        assert_eq!(g.value(y), &Tensor::zeros(2, 2));
    }

    #[test]
    fn identity_dense_passes_through() {
        let mut g = Graph::new();
        let input = Tensor::new(2, 2, vec![1.5, -2.0, 0.25, 3.0]).unwrap();
        let x = g.constant(input.clone());
        let w = g.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::zeros(1, 2));
        let y = dense_forward(&mut g, x, w, b, Activation::Identity).unwrap();
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn dense_matches_hand_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ws: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(2, 2, xs.clone()).unwrap());
        let w = g.constant(Tensor::new(2, 3, ws.clone()).unwrap());
        let b = g.constant(Tensor::new(1, 3, bs.clone()).unwrap());
        let y = dense_forward(&mut g, x, w, b, Activation::Identity).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let expect = xs[r * 2] * ws[c] + xs[r * 2 + 1] * ws[3 + c] + bs[c];
                assert!((g.value(y).get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 4));
        let w = g.constant(Tensor::zeros(3, 2));
        let b = g.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            dense_forward(&mut g, x, w, b, Activation::Relu),
            Err(Error::Shape(_))
        ));
    }

    fn zero_store(layer: &LstmLayer, store: &mut ParamStore) {
        let mut cells = vec![&layer.forward];
        cells.extend(layer.backward.as_ref());
        for cell in cells {
            for id in [cell.w_input, cell.w_hidden, cell.bias] {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
    }

    #[test]
    fn zero_lstm_gives_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "dec", 3, 4, true, &mut rng);
        zero_store(&layer, &mut store);
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(2, 3, 0.7));
        let out = lstm_forward(&mut g, &store, &[x, x, x], &layer).unwrap();
        for v in out {
            assert_eq!(g.value(v), &Tensor::zeros(2, 8));
        }
    }

    /// Literal scalar transcription of the LSTM recurrence for one sample.
    fn scalar_lstm(
        xs: &[Vec<f64>],
        w_in: &Tensor,
        w_h: &Tensor,
        b: &Tensor,
        hidden: usize,
    ) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut out = Vec::new();
        for x in xs {
            let mut gate = vec![0.0; 4 * hidden];
            for (k, gk) in gate.iter_mut().enumerate() {
                let mut s = b.get(0, k);
                for (p, xp) in x.iter().enumerate() {
                    s += xp * w_in.get(p, k);
                }
                for (q, hq) in h.iter().enumerate() {
                    s += hq * w_h.get(q, k);
                }
                *gk = s;
            }
            for u in 0..hidden {
                let i = sigmoid(gate[u]);
                let f = sigmoid(gate[hidden + u]);
                let cand = gate[2 * hidden + u].tanh();
                let o = sigmoid(gate[3 * hidden + u]);
                c[u] = f * c[u] + i * cand;
                h[u] = o * c[u].tanh();
            }
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn lstm_matches_scalar_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "dec", 3, 2, true, &mut rng);
        // give the biases some non-zero values too
        for cell in [&layer.forward, layer.backward.as_ref().unwrap()] {
            for v in store.get_mut(cell.bias).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let steps = 4;
        let batch = 2;
        let seq: Vec<Tensor> = (0..steps)
            .map(|_| {
                let d = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::new(batch, 3, d).unwrap()
            })
            .collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
        let out = lstm_forward(&mut g, &store, &vars, &layer).unwrap();

        let bwd = layer.backward.as_ref().unwrap();
        for s in 0..batch {
            let xs: Vec<Vec<f64>> = seq.iter().map(|t| t.row(s).to_vec()).collect();
            let f = &layer.forward;
            let fwd_states = scalar_lstm(
                &xs,
                store.get(f.w_input),
                store.get(f.w_hidden),
                store.get(f.bias),
                2,
            );
            let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let mut bwd_states = scalar_lstm(
                &rev,
                store.get(bwd.w_input),
                store.get(bwd.w_hidden),
                store.get(bwd.bias),
                2,
            );
            bwd_states.reverse();
            for l in 0..steps {
                let row = g.value(out[l]).row(s);
                let expect: Vec<f64> = fwd_states[l].iter().chain(&bwd_states[l]).copied().collect();
                for (a, b) in row.iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-10, "step {l}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn single_step_bidirectional_concatenates_same_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "dec", 2, 3, true, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(1, 2, vec![0.3, -0.4]).unwrap());
        let out = lstm_forward(&mut g, &store, &[x], &layer).unwrap();
        assert_eq!(out.len(), 1);
        let uni = LstmLayer {
            forward: layer.forward.clone(),
            backward: None,
        };
        let rev = LstmLayer {
            forward: layer.backward.clone().unwrap(),
            backward: None,
        };
        let f = lstm_forward(&mut g, &store, &[x], &uni).unwrap()[0];
        let b = lstm_forward(&mut g, &store, &[x], &rev).unwrap()[0];
        let both = g.value(out[0]).row(0).to_vec();
        let expect: Vec<f64> = g.value(f).row(0).iter().chain(g.value(b).row(0)).copied().collect();
        assert_eq!(both, expect);
    }

    #[test]
    fn zeroed_backward_direction_matches_unidirectional() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let layer = LstmLayer::new(&mut store, "dec", 3, 4, true, &mut rng);
        let bwd = layer.backward.clone().unwrap();
        for id in [bwd.w_input, bwd.w_hidden, bwd.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let seq: Vec<Var> = (0..5)
            .map(|k| g.constant(Tensor::filled(2, 3, 0.1 * k as f64)))
            .collect();
        let bi = lstm_forward(&mut g, &store, &seq, &layer).unwrap();
        let uni_layer = LstmLayer {
            forward: layer.forward.clone(),
            backward: None,
        };
        let uni = lstm_forward(&mut g, &store, &seq, &uni_layer).unwrap();
        for (b, u) in bi.iter().zip(&uni) {
            let bv = g.value(*b);
            for r in 0..2 {
                assert_eq!(&bv.row(r)[..4], g.value(*u).row(r));
                assert!(bv.row(r)[4..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn dropout_is_seeded_and_scaled() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(10, 10, 1.0));
        let a = dropout(&mut g, x, 0.2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = dropout(&mut g, x, 0.2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(g
            .value(a)
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let c = dropout(&mut g, x, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(c, x);
    }
}
