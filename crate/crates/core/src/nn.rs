//! Parameter storage, coordinate MLPs and the Adam optimizer.

use gsdyn_autodiff::{Gradients, Tape, Tensor, Var};

use crate::error::Result;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    lr: f64,
    trainable: bool,
}

/// Named learnable tensors with per-tensor learning rates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, lr: f64) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            lr,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn lr(&self, id: ParamId) -> f64 {
        self.params[id.0].lr
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.params[id.0].lr = lr;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Register every parameter on `tape`; trainable ones as leaves,
    /// frozen ones as constants.
    pub fn attach<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { tape, vars }
    }

    /// Register every parameter as a constant.
    pub fn attach_constants<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        Bound { tape, vars }
    }

    /// Bit-level equality of names and values.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a
                        .value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Tape handles for every parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradient per trainable parameter.
    pub fn collect(&self, store: &ParamStore, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        store
            .ids()
            .filter(|&id| store.is_trainable(id))
            .filter_map(|id| grads.get(self.vars[id.0]).map(|g| (id, g.clone())))
            .collect()
    }
}

/// Fully connected network with `tanh` hidden activations and a linear
/// output layer. Weights are stored `[fan_in, fan_out]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Uniform initialization in ±fan_in^{-1/2}; the last layer is further
    /// multiplied by `last_scale`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        lr: f64,
        last_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (fan_in as f64).powf(-0.5);
            let scale = if i + 2 == sizes.len() { last_scale } else { 1.0 };
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| scale * rng.gen_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..fan_out)
                .map(|_| scale * rng.gen_range(-bound..bound))
                .collect();
            let wid = store.add(
                format!("{name}.{i}.weight"),
                Tensor::new([fan_in, fan_out], w).expect("weight shape"),
                lr,
            );
            let bid = store.add(format!("{name}.{i}.bias"), Tensor::from_vec(b), lr);
            layers.push((wid, bid));
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn output_bias(&self) -> ParamId {
        self.layers.last().unwrap().1
    }

    pub fn output_weight(&self) -> ParamId {
        self.layers.last().unwrap().0
    }

    /// `x` is `[batch, fan_in]`.
    pub fn forward<'t>(&self, params: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(params.var(w))?.add(params.var(b))?;
            if i != last {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-15,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let lr = store.lr(*id);
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let value = store.get_mut(*id).data_mut();
            for i in 0..g.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mlp_shapes_and_init_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "f", &[4, 8, 2], 1e-3, 0.01, &mut rng);
        assert_eq!(store.len(), 4);
        let w0 = store.get(mlp.layers()[0].0);
        assert!(w0.data().iter().all(|v| v.abs() <= 0.5));
        let w1 = store.get(mlp.output_weight());
        assert!(w1.data().iter().all(|v| v.abs() <= 0.01 * 8f64.powf(-0.5)));

        let tape = Tape::new();
        let bound = store.attach(&tape);
        let x = tape.constant(Tensor::zeros([5, 4]));
        assert_eq!(mlp.forward(&bound, x).unwrap().shape(), vec![5, 2]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(vec![3.0, -2.0]), 0.1);
        let mut adam = Adam::new(0.9, 0.999);
        for _ in 0..300 {
            let tape = Tape::new();
            let b = store.attach(&tape);
            let loss = b.var(id).square().unwrap().sum().unwrap();
            let g = tape.backward(loss).unwrap();
            let grads = b.collect(&store, &g);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn frozen_parameters_are_constants() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0), 0.1);
        let b = store.add("b", Tensor::scalar(2.0), 0.1);
        store.set_trainable(b, false);
        let tape = Tape::new();
        let bound = store.attach(&tape);
        let loss = bound.var(a).mul(bound.var(b)).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads = bound.collect(&store, &g);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, a);
    }
}
