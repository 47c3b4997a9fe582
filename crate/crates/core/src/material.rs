//! Material decoding and fixed-corotated elasticity.

use gsdyn_autodiff::linalg::polar_rotation;
use gsdyn_autodiff::{Tape, Tensor, Var};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, ParamId, ParamStore};
use crate::velocity::{encode_var, encoded_dim};

/// Young's modulus at zero raw output.
pub const E_REF: f64 = 1e4;
/// Half-width of the reachable `ln E` interval around `ln E_REF`.
pub const LOG_E_RANGE: f64 = 4.605_170_185_988_091; // ln 100
pub const NU_MAX: f64 = 0.45;
pub const NU_DEFAULT: f64 = 0.2;
pub const RHO_REF: f64 = 1000.0;
pub const LOG_RHO_RANGE: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            youngs_modulus: E_REF,
            poisson_ratio: NU_DEFAULT,
            density: RHO_REF,
        }
    }
}

impl MaterialParams {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Self {
            youngs_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(Error::Config(format!("Young's modulus {} must be positive", self.youngs_modulus)));
        }
        if !(0.0..=NU_MAX).contains(&self.poisson_ratio) {
            return Err(Error::Config(format!("Poisson ratio {} outside [0, {NU_MAX}]", self.poisson_ratio)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!("density {} must be positive", self.density)));
        }
        Ok(())
    }

    pub fn lame(&self) -> (f64, f64) {
        lame_from_material(self)
    }

    /// Raw decoder outputs that map to `self`.
    pub fn to_raw(&self) -> [f64; 3] {
        let atanh = |x: f64| 0.5 * ((1.0 + x) / (1.0 - x)).ln();
        let nu = self.poisson_ratio / NU_MAX;
        [
            LOG_E_RANGE * atanh((self.youngs_modulus / E_REF).ln() / LOG_E_RANGE),
            (nu / (1.0 - nu)).ln() - nu_offset(),
            LOG_RHO_RANGE * atanh((self.density / RHO_REF).ln() / LOG_RHO_RANGE),
        ]
    }
}

fn nu_offset() -> f64 {
    let r = NU_DEFAULT / NU_MAX;
    (r / (1.0 - r)).ln()
}

/// Bounded map `r ↦ ref · exp(range · tanh(r / range))`.
fn bounded_exp(r: f64, reference: f64, range: f64) -> f64 {
    reference * (range * (r / range).tanh()).exp()
}

/// Constrained parameters from raw decoder outputs `(E, ν, ρ)`.
pub fn map_raw(raw: [f64; 3]) -> MaterialParams {
    MaterialParams {
        youngs_modulus: bounded_exp(raw[0], E_REF, LOG_E_RANGE),
        poisson_ratio: NU_MAX * gsdyn_autodiff::sigmoid(raw[1] + nu_offset()),
        density: bounded_exp(raw[2], RHO_REF, LOG_RHO_RANGE),
    }
}

pub fn lame_from_material(m: &MaterialParams) -> (f64, f64) {
    let (e, nu) = (m.youngs_modulus, m.poisson_ratio);
    (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
}

fn check_det(f: &Matrix3<f64>) -> Result<f64> {
    let j = f.determinant();
    if j > 0.0 {
        Ok(j)
    } else {
        Err(gsdyn_autodiff::TensorError::InvertedElement {
            op: "first_pk_stress",
            det: j,
            index: 0,
        }
        .into())
    }
}

/// Fixed-corotated first Piola–Kirchhoff stress
/// `P = 2μ(F − R) + λ(J − 1) J F⁻ᵀ`.
pub fn first_pk_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<Matrix3<f64>> {
    let j = check_det(f)?;
    let r = polar_rotation(f).expect("positive determinant");
    let f_inv_t = f.try_inverse().expect("positive determinant").transpose();
    Ok(2.0 * mu * (f - r) + lambda * (j - 1.0) * j * f_inv_t)
}

/// `Ψ(F) = μ‖F − R‖² + (λ/2)(J − 1)²`.
pub fn energy_density(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Result<f64> {
    let j = check_det(f)?;
    let r = polar_rotation(f).expect("positive determinant");
    Ok(mu * (f - r).norm_squared() + 0.5 * lambda * (j - 1.0).powi(2))
}

#[derive(Debug, Clone)]
pub enum MaterialSource {
    /// `f_mat(γ(p))` per particle.
    Network(Mlp),
    /// One raw `[1, 3]` vector shared by all particles.
    Global(ParamId),
}

#[derive(Debug, Clone)]
pub struct MaterialDecoder {
    pub source: MaterialSource,
    pub pos_freqs: usize,
    /// When false, `ρ` stays at [`RHO_REF`] regardless of the raw output.
    pub learn_density: bool,
}

/// Decoded per-particle material on a tape, each `[N, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct MaterialVars<'t> {
    pub youngs_modulus: Var<'t>,
    pub poisson_ratio: Var<'t>,
    pub density: Var<'t>,
}

impl<'t> MaterialVars<'t> {
    /// `(μ, λ)`, each `[N, 1]`.
    pub fn lame(&self) -> Result<(Var<'t>, Var<'t>)> {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let one_nu = nu.offset(1.0)?;
        let mu = e.div(one_nu.scale(2.0)?)?;
        let lambda = e.mul(nu)?.div(one_nu.mul(nu.scale(-2.0)?.offset(1.0)?)?)?;
        Ok((mu, lambda))
    }
}

impl MaterialDecoder {
    pub fn network(
        store: &mut ParamStore,
        pos_freqs: usize,
        hidden: &[usize],
        lr: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sizes = vec![encoded_dim(3, pos_freqs)];
        sizes.extend_from_slice(hidden);
        sizes.push(3);
        let mlp = Mlp::new(store, "f_mat", &sizes, lr, 0.01, rng);
        Self {
            source: MaterialSource::Network(mlp),
            pos_freqs,
            learn_density: false,
        }
    }

    pub fn global(store: &mut ParamStore, lr: f64) -> Self {
        let id = store.add("material", Tensor::zeros([1, 3]), lr);
        Self {
            source: MaterialSource::Global(id),
            pos_freqs: 0,
            learn_density: false,
        }
    }

    /// Shift the output bias so that raw outputs start near `m`.
    pub fn bias_towards(&self, store: &mut ParamStore, m: &MaterialParams) {
        let raw = m.to_raw();
        let id = match &self.source {
            MaterialSource::Network(mlp) => mlp.output_bias(),
            MaterialSource::Global(id) => *id,
        };
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::new(shape, raw.to_vec()).expect("three raw outputs"));
    }

    /// Raw outputs `[N, 3]`.
    pub fn raw<'t>(&self, params: &Bound<'t>, positions: Var<'t>) -> Result<Var<'t>> {
        match &self.source {
            MaterialSource::Network(mlp) => mlp.forward(params, encode_var(positions, self.pos_freqs)?),
            MaterialSource::Global(id) => {
                let n = positions.shape()[0];
                let ones = params.tape().constant(Tensor::ones([n, 1]));
                Ok(ones.mul(params.var(*id))?)
            }
        }
    }

    pub fn decode<'t>(&self, params: &Bound<'t>, positions: Var<'t>) -> Result<MaterialVars<'t>> {
        let raw = self.raw(params, positions)?;
        let bounded = |r: Var<'t>, reference: f64, range: f64| -> Result<Var<'t>> {
            Ok(r.scale(1.0 / range)?.tanh()?.scale(range)?.exp()?.scale(reference)?)
        };
        let density = if self.learn_density {
            bounded(raw.slice_last(2, 3)?, RHO_REF, LOG_RHO_RANGE)?
        } else {
            params.tape().constant(Tensor::full([positions.shape()[0], 1], RHO_REF))
        };
        Ok(MaterialVars {
            youngs_modulus: bounded(raw.slice_last(0, 1)?, E_REF, LOG_E_RANGE)?,
            poisson_ratio: raw.slice_last(1, 2)?.offset(nu_offset())?.sigmoid()?.scale(NU_MAX)?,
            density,
        })
    }

    /// Detached decode at each of `positions`.
    pub fn decode_all(&self, store: &ParamStore, positions: &[Vector3<f64>]) -> Result<Vec<MaterialParams>> {
        let tape = Tape::new();
        let params = store.attach_constants(&tape);
        let p = tape.constant(Tensor::new(
            [positions.len(), 3],
            positions.iter().flat_map(|p| p.iter().copied()).collect(),
        )?);
        let m = self.decode(&params, p)?;
        let (e, nu, rho) = (m.youngs_modulus.value(), m.poisson_ratio.value(), m.density.value());
        Ok((0..positions.len())
            .map(|i| MaterialParams {
                youngs_modulus: e.data()[i],
                poisson_ratio: nu.data()[i],
                density: rho.data()[i],
            })
            .collect())
    }
}

/// Detached decode of a single position.
pub fn decode_material(decoder: &MaterialDecoder, store: &ParamStore, p: &Vector3<f64>) -> Result<MaterialParams> {
    Ok(decoder.decode_all(store, std::slice::from_ref(p))?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::SeedableRng;

    #[test]
    fn lame_examples() {
        let m = |e, nu| MaterialParams { youngs_modulus: e, poisson_ratio: nu, density: 1.0 };
        assert_eq!(lame_from_material(&m(1.0, 0.0)), (0.5, 0.0));
        let (mu, la) = lame_from_material(&m(1.0, 0.25));
        assert!((mu - 0.4).abs() < 1e-15 && (la - 0.4).abs() < 1e-15);
        let (mu10, la10) = lame_from_material(&m(10.0, 0.25));
        assert!((mu10 - 10.0 * mu).abs() < 1e-14 && (la10 - 10.0 * la).abs() < 1e-14);
    }

    #[test]
    fn stress_vanishes_at_rest_and_under_rotation() {
        assert_eq!(first_pk_stress(&Matrix3::identity(), 3.0, 2.0).unwrap(), Matrix3::zeros());
        let q = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, -0.5)), 0.8).into_inner();
        assert!(first_pk_stress(&q, 3.0, 2.0).unwrap().abs().max() < 1e-12);
    }

    #[test]
    fn small_stretch_matches_linearization() {
        let eps = 1e-4;
        let mu = 1.7;
        let f = Matrix3::from_diagonal(&Vector3::new(1.0 + eps, 1.0, 1.0));
        let p = first_pk_stress(&f, mu, 0.0).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(2.0 * mu * eps, 0.0, 0.0));
        assert!((p - expect).abs().max() < 10.0 * eps * eps);
    }

    #[test]
    fn inverted_element_is_rejected() {
        let f = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(first_pk_stress(&f, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_weights_give_declared_defaults() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let dec = MaterialDecoder::network(&mut store, 4, &[16, 16], 1e-3, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            let s = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(s));
        }
        let mut learned = dec.clone();
        learned.learn_density = true;
        for d in [&dec, &learned] {
            let m = decode_material(d, &store, &Vector3::new(0.3, 0.1, 0.9)).unwrap();
            assert!((m.youngs_modulus - 1e4).abs() < 1e-9);
            assert!((m.poisson_ratio - 0.2).abs() < 1e-15);
            assert!((m.density - 1000.0).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_round_trip() {
        let m = MaterialParams::new(3.3e4, 0.31, 640.0).unwrap();
        let back = map_raw(m.to_raw());
        assert!((back.youngs_modulus / m.youngs_modulus - 1.0).abs() < 1e-12);
        assert!((back.poisson_ratio - m.poisson_ratio).abs() < 1e-12);
        assert!((back.density / m.density - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_ratio_saturates() {
        let m = map_raw([1e6, 1e6, -1e6]);
        assert!(m.poisson_ratio <= NU_MAX && m.poisson_ratio > 0.449);
        assert!(m.youngs_modulus <= E_REF * 100.0 * (1.0 + 1e-12));
        m.validate().unwrap();
    }
}
