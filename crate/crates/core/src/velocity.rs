//! Latent physics codes and the rigid-basis velocity field.

use std::f64::consts::PI;
use std::rc::Rc;

use gsdyn_autodiff::{CustomOp, Tape, Tensor, Var};
use nalgebra::{SMatrix, Vector3};
use rand::Rng;

use crate::error::Result;
use crate::nn::{Bound, Mlp, ParamId, ParamStore};

/// `[raw, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]` per
/// coordinate, coordinates concatenated.
pub fn encode(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (2 * freqs + 1));
    for &v in x {
        out.push(v);
        for k in 0..freqs {
            let w = PI * (1u64 << k) as f64;
            out.push((w * v).sin());
            out.push((w * v).cos());
        }
    }
    out
}

pub fn encode_position(p: &Vector3<f64>, freqs: usize) -> Vec<f64> {
    encode(p.as_slice(), freqs)
}

pub fn encoded_dim(inputs: usize, freqs: usize) -> usize {
    inputs * (2 * freqs + 1)
}

/// Row-wise [`encode`] of a `[B, C]` tensor.
#[derive(Debug, Clone, Copy)]
pub struct Encode {
    pub freqs: usize,
}

impl CustomOp for Encode {
    fn name(&self) -> &'static str {
        "positional_encoding"
    }

    fn forward(&self, inputs: &[&Tensor]) -> gsdyn_autodiff::Result<Tensor> {
        let x = inputs[0];
        let (b, c) = (x.shape()[0], x.shape()[1]);
        Tensor::new([b, encoded_dim(c, self.freqs)], encode(x.data(), self.freqs))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> gsdyn_autodiff::Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let stride = 2 * self.freqs + 1;
        let g = grad.data();
        let dx = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let gi = &g[i * stride..(i + 1) * stride];
                let mut d = gi[0];
                for k in 0..self.freqs {
                    let w = PI * (1u64 << k) as f64;
                    d += w * ((w * v).cos() * gi[1 + 2 * k] - (w * v).sin() * gi[2 + 2 * k]);
                }
                d
            })
            .collect();
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), dx)?)])
    }
}

pub fn encode_var<'t>(x: Var<'t>, freqs: usize) -> Result<Var<'t>> {
    Ok(x.tape().custom(Rc::new(Encode { freqs }), &[x])?)
}

/// `B(p)`: identity rows for translation, cross-product rows for rotation,
/// so `V · B(p) = v_lin + ω × p`.
pub fn basis_matrix(p: &Vector3<f64>) -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, //
        0.0, -p.z, p.y, //
        p.z, 0.0, -p.x, //
        -p.y, p.x, 0.0,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityFieldConfig {
    /// Motion patterns `K`.
    pub patterns: usize,
    /// Code dimension `D`.
    pub code_dim: usize,
    pub pos_freqs: usize,
    pub time_freqs: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for VelocityFieldConfig {
    fn default() -> Self {
        Self {
            patterns: 16,
            code_dim: 32,
            pos_freqs: 6,
            time_freqs: 4,
            hidden: 64,
            hidden_layers: 3,
        }
    }
}

fn layer_sizes(input: usize, cfg: &VelocityFieldConfig, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(std::iter::repeat(cfg.hidden).take(cfg.hidden_layers));
    s.push(output);
    s
}

/// How per-particle physics codes are produced.
#[derive(Debug, Clone)]
pub enum CodeSource {
    /// `z = f_vel(γ(p))` from canonical positions.
    Network(Mlp),
    /// One free `[N, D]` code table.
    Free(ParamId),
}

/// `f_vel`, `f_neck` and `f_weight`.
#[derive(Debug, Clone)]
pub struct VelocityFieldNet {
    pub cfg: VelocityFieldConfig,
    pub codes: CodeSource,
    pub f_neck: Mlp,
    pub f_weight: Mlp,
}

impl VelocityFieldNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: VelocityFieldConfig,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let f_vel = Mlp::new(
            store,
            "f_vel",
            &layer_sizes(encoded_dim(3, cfg.pos_freqs), &cfg, cfg.code_dim),
            lr,
            1.0,
            rng,
        );
        Self::with_codes(store, cfg, CodeSource::Network(f_vel), lr, rng)
    }

    /// Free per-particle codes instead of `f_vel`.
    pub fn with_free_codes(
        store: &mut ParamStore,
        cfg: VelocityFieldConfig,
        particles: usize,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let data = (0..particles * cfg.code_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let id = store.add(
            "codes",
            Tensor::new([particles, cfg.code_dim], data).expect("code shape"),
            lr,
        );
        Self::with_codes(store, cfg, CodeSource::Free(id), lr, rng)
    }

    fn with_codes(
        store: &mut ParamStore,
        cfg: VelocityFieldConfig,
        codes: CodeSource,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let f_neck = Mlp::new(
            store,
            "f_neck",
            &layer_sizes(cfg.code_dim, &cfg, cfg.patterns),
            lr,
            0.01,
            rng,
        );
        let f_weight = Mlp::new(
            store,
            "f_weight",
            &layer_sizes(encoded_dim(1, cfg.time_freqs), &cfg, cfg.patterns * 6),
            lr,
            1.0,
            rng,
        );
        Self {
            cfg,
            codes,
            f_neck,
            f_weight,
        }
    }

    /// Physics codes `z` `[N, D]` for canonical `positions` `[N, 3]`.
    pub fn codes<'t>(&self, params: &Bound<'t>, positions: Var<'t>) -> Result<Var<'t>> {
        match &self.codes {
            CodeSource::Network(f_vel) => f_vel.forward(params, encode_var(positions, self.cfg.pos_freqs)?),
            CodeSource::Free(id) => Ok(params.var(*id)),
        }
    }

    /// Bottleneck `h = f_neck(z)`, `[N, K]`.
    pub fn bottleneck<'t>(&self, params: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.f_neck.forward(params, z)
    }

    /// `W_t = f_weight(γ(t))`, `[K, 6]`.
    pub fn time_weights<'t>(&self, params: &Bound<'t>, t: f64) -> Result<Var<'t>> {
        let tape = params.tape();
        let enc = tape.constant(Tensor::new([1, encoded_dim(1, self.cfg.time_freqs)], encode(&[t], self.cfg.time_freqs))?);
        Ok(self.f_weight.forward(params, enc)?.reshape([self.cfg.patterns, 6])?)
    }

    /// Make `V` equal `components` for every particle and time by zeroing
    /// both output layers and routing everything through the first
    /// motion pattern.
    pub fn set_constant(&self, store: &mut ParamStore, components: [f64; 6]) {
        let k = self.cfg.patterns;
        let zero = |store: &mut ParamStore, id| {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape));
        };
        zero(store, self.f_neck.output_weight());
        zero(store, self.f_weight.output_weight());
        let mut h = vec![0.0; k];
        h[0] = 1.0;
        store.set(self.f_neck.output_bias(), Tensor::from_vec(h));
        let mut w = vec![0.0; 6 * k];
        w[..6].copy_from_slice(&components);
        store.set(self.f_weight.output_bias(), Tensor::from_vec(w));
    }

    /// Velocity components `V = h W_t`, `[N, 6]`.
    pub fn components<'t>(&self, params: &Bound<'t>, h: Var<'t>, t: f64) -> Result<Var<'t>> {
        Ok(h.matmul(self.time_weights(params, t)?)?)
    }

    /// `v = V B(p)` for `positions` `[N, 3]`.
    pub fn velocity<'t>(&self, params: &Bound<'t>, h: Var<'t>, t: f64, positions: Var<'t>) -> Result<Var<'t>> {
        apply_basis(self.components(params, h, t)?, positions)
    }
}

/// `V[:, :3] + V[:, 3:] × p`.
pub fn apply_basis<'t>(components: Var<'t>, positions: Var<'t>) -> Result<Var<'t>> {
    let lin = components.slice_last(0, 3)?;
    let ang = components.slice_last(3, 6)?;
    Ok(lin.add(ang.cross(positions)?)?)
}

/// Unstructured baseline `v = MLP(γ(p), γ(t))`.
#[derive(Debug, Clone)]
pub struct PlainVelocityNet {
    pub pos_freqs: usize,
    pub time_freqs: usize,
    pub mlp: Mlp,
}

impl PlainVelocityNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &VelocityFieldConfig,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let input = encoded_dim(3, cfg.pos_freqs) + encoded_dim(1, cfg.time_freqs);
        let mlp = Mlp::new(store, "f_plain", &layer_sizes(input, cfg, 3), lr, 0.01, rng);
        Self {
            pos_freqs: cfg.pos_freqs,
            time_freqs: cfg.time_freqs,
            mlp,
        }
    }

    pub fn velocity<'t>(&self, params: &Bound<'t>, t: f64, positions: Var<'t>) -> Result<Var<'t>> {
        let n = positions.shape()[0];
        let tape = positions.tape();
        let te = encode(&[t], self.time_freqs);
        let rows: Vec<f64> = (0..n).flat_map(|_| te.iter().copied()).collect();
        let tvar = tape.constant(Tensor::new([n, te.len()], rows)?);
        let x = Var::concat_last(&[encode_var(positions, self.pos_freqs)?, tvar])?;
        self.mlp.forward(params, x)
    }
}

/// A velocity model ready for evaluation along a trajectory.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a, 't> {
    /// Structured field with precomputed bottleneck `h`.
    Structured { net: &'a VelocityFieldNet, h: Var<'t> },
    Plain { net: &'a PlainVelocityNet },
}

impl<'t> Field<'_, 't> {
    pub fn velocity(&self, params: &Bound<'t>, t: f64, positions: Var<'t>) -> Result<Var<'t>> {
        match self {
            Field::Structured { net, h } => net.velocity(params, *h, t, positions),
            Field::Plain { net } => net.velocity(params, t, positions),
        }
    }
}

/// Either velocity network, owning its parameters' ids.
#[derive(Debug, Clone)]
pub enum VelocityModel {
    Structured(VelocityFieldNet),
    Plain(PlainVelocityNet),
}

impl VelocityModel {
    /// Field for particles whose canonical positions are `canonical`.
    pub fn field<'a, 't>(&'a self, params: &Bound<'t>, canonical: Var<'t>) -> Result<Field<'a, 't>> {
        Ok(match self {
            VelocityModel::Structured(net) => {
                let h = net.bottleneck(params, net.codes(params, canonical)?)?;
                Field::Structured { net, h }
            }
            VelocityModel::Plain(net) => Field::Plain { net },
        })
    }

    /// Detached velocities at time `t` of particles sitting at their
    /// canonical `positions`.
    pub fn velocities_at(&self, store: &ParamStore, positions: &[Vector3<f64>], t: f64) -> Result<Vec<Vector3<f64>>> {
        let tape = Tape::new();
        let params = store.attach_constants(&tape);
        let p = tape.constant(Tensor::new(
            [positions.len(), 3],
            positions.iter().flat_map(|p| p.iter().copied()).collect(),
        )?);
        let v = self.field(&params, p)?.velocity(&params, t, p)?.value();
        Ok(v.data().chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
    }
}

/// Classic RK4 for `dp/dt = v(p, t)` over `[t0, t1]`.
pub fn integrate_positions<'t>(
    field: &Field<'_, 't>,
    params: &Bound<'t>,
    p0: Var<'t>,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Var<'t>> {
    assert!(n_steps >= 1, "integration needs at least one step");
    let dt = (t1 - t0) / n_steps as f64;
    let mut p = p0;
    for s in 0..n_steps {
        let t = t0 + s as f64 * dt;
        let k1 = field.velocity(params, t, p)?;
        let k2 = field.velocity(params, t + 0.5 * dt, p.add(k1.scale(0.5 * dt)?)?)?;
        let k3 = field.velocity(params, t + 0.5 * dt, p.add(k2.scale(0.5 * dt)?)?)?;
        let k4 = field.velocity(params, t + dt, p.add(k3.scale(dt)?)?)?;
        let incr = k1.add(k2.scale(2.0)?)?.add(k3.scale(2.0)?)?.add(k4)?;
        p = p.add(incr.scale(dt / 6.0)?)?;
    }
    Ok(p)
}

/// Detached evaluation of `v = f_neck(z) f_weight(γ(t)) B(p)` for one
/// particle code `z`.
pub fn velocity_at(
    net: &VelocityFieldNet,
    store: &ParamStore,
    z: &[f64],
    t: f64,
    p: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let tape = Tape::new();
    let params = store.attach_constants(&tape);
    let zv = tape.constant(Tensor::new([1, z.len()], z.to_vec())?);
    let h = net.bottleneck(&params, zv)?;
    let pv = tape.constant(Tensor::new([1, 3], p.as_slice().to_vec())?);
    let v = net.velocity(&params, h, t, pv)?.value();
    Ok(Vector3::new(v.data()[0], v.data()[1], v.data()[2]))
}
