//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Parameters live in a [`ParamStore`] and enter a graph as leaves through
//! [`Graph::param`]; gradients are collected back per parameter with
//! [`Gradients::for_params`].

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, end: usize },
    Transpose(Var),
    Gather { src: Var, index: Vec<usize> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: Vec<(Var, ParamId)>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; its gradient is reported back per id.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.param_leaves.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a + bias` with a `[1, n]` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(format!(
                "row bias {:?} for {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| x + bv.data()[k % cols])
            .collect();
        let value = Tensor::new(av.rows(), cols, data)?;
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant of the same shape (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        same_shape(self.value(a), c, "mul_const")?;
        let value = zip_map(self.value(a), c, |x, y| x * y);
        Ok(self.push(value, Op::MulConst(a, c.data().to_vec())))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same var")
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat of nothing")),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat with differing row counts"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let sv = self.value(src);
        if start >= end || end > sv.cols() {
            return Err(Error::shape(format!(
                "slice {start}..{end} of {} columns",
                sv.cols()
            )));
        }
        let mut data = Vec::with_capacity(sv.rows() * (end - start));
        for r in 0..sv.rows() {
            data.extend_from_slice(&sv.row(r)[start..end]);
        }
        let value = Tensor::new(sv.rows(), end - start, data)?;
        Ok(self.push(value, Op::Slice { src, start, end }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Picks entries by flat row-major index into a `[k, 1]` column.
    pub fn gather(&mut self, src: Var, index: Vec<usize>) -> Result<Var> {
        let sv = self.value(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= sv.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of {} entries",
                sv.len()
            )));
        }
        let data: Vec<f64> = index.iter().map(|&i| sv.data()[i]).collect();
        let value = Tensor::new(data.len(), 1, data)?;
        Ok(self.push(value, Op::Gather { src, index }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Reverse pass from a `[1, 1]` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::domain(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let gt = Tensor::new(out.rows(), out.cols(), g.clone())?;
                    let ga = gt.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&gt)?;
                    accumulate(&mut grads, *a, ga.data());
                    accumulate(&mut grads, *b, gb.data());
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *a, &g);
                    let cols = out.cols();
                    let mut gb = vec![0.0; cols];
                    for (k, &x) in g.iter().enumerate() {
                        gb[k % cols] += x;
                    }
                    accumulate(&mut grads, *bias, &gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::MulConst(a, c) => {
                    let ga: Vec<f64> = g.iter().zip(c).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, &g),
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(out.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, &inp)| if inp > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(out.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Concat(parts) => {
                    let rows = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + pc]);
                        }
                        accumulate(&mut grads, p, &gp);
                        offset += pc;
                    }
                }
                Op::Slice { src, start, end } => {
                    let sv = self.value(*src);
                    let (rows, cols) = (sv.rows(), sv.cols());
                    let width = end - start;
                    let mut gs = vec![0.0; rows * cols];
                    for r in 0..rows {
                        gs[r * cols + start..r * cols + end]
                            .copy_from_slice(&g[r * width..(r + 1) * width]);
                    }
                    accumulate(&mut grads, *src, &gs);
                }
                Op::Transpose(a) => {
                    let gt = Tensor::new(out.rows(), out.cols(), g.clone())?.transpose();
                    accumulate(&mut grads, *a, gt.data());
                }
                Op::Gather { src, index } => {
                    let mut gs = vec![0.0; self.value(*src).len()];
                    for (&k, x) in index.iter().zip(&g) {
                        gs[k] += x;
                    }
                    accumulate(&mut grads, *src, &gs);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    accumulate(&mut grads, *a, &ga);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            param_leaves: self.param_leaves.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adjoints from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
    param_leaves: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Gradient of `v`, zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }

    /// One gradient per stored parameter, in store order; unused ones are zero.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.rows(), p.tensor.cols()))
            .collect();
        for &(v, id) in &self.param_leaves {
            if let Some(g) = &self.grads[v.0] {
                for (o, x) in out[id.0].data_mut().iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_has_unit_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let grads = g.backward(v).unwrap().for_params(&store);
        assert_eq!(grads[0].data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let unused = store.add("unused", Tensor::filled(2, 2, 7.0));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let sq = g.square(v);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap().for_params(&store);
        assert_eq!(grads[p.0].data(), &[2.0, -4.0, 1.0]);
        assert_eq!(grads[unused.0], Tensor::zeros(2, 2));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::zeros(2, 1));
        assert!(matches!(g.backward(v), Err(Error::Domain(_))));
    }

    #[test]
    fn repeated_param_leaves_accumulate() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(2.0));
        let mut g = Graph::new();
        let a = g.param(&store, p);
        let b = g.param(&store, p);
        let prod = g.mul(a, b).unwrap();
        let grads = g.backward(prod).unwrap().for_params(&store);
        assert_eq!(grads[0].data(), &[4.0]);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(Tensor::zeros(3, 2));
        assert!(g.add(a, c).is_err());
        assert!(g.slice(a, 2, 5).is_err());
        assert!(g.gather(a, vec![6]).is_err());
    }
}
