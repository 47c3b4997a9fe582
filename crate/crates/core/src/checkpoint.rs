//! Versioned binary checkpoints of a trained model.
//!
//! Layout (little endian): magic `GSDYNCKP`, `u32` version, the training
//! config as TOML text, the canonical scene, then every parameter with its
//! name, shape, learning rate, trainable flag and raw `f64` bits.

use std::path::Path;

use gsdyn_autodiff::Tensor;
use nalgebra::{Matrix3, Quaternion, Vector3};

use crate::error::{io_err, Error, Result};
use crate::nn::ParamStore;
use crate::scene::{Aabb, GaussianParticle, Scene};
use crate::train::{Model, TrainConfig};

pub const MAGIC: &[u8; 8] = b"GSDYNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub scene: Scene,
    pub params: ParamStore,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.f64(*v));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // Every counted item occupies at least one byte.
        if v as usize > self.buf.len() {
            return Err(Error::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Result<Self> {
        Ok(Self {
            config: model.config.clone(),
            scene: model.scene()?,
            params: model.store.clone(),
        })
    }

    pub fn into_model(self) -> Result<Model> {
        Model::restore(&self.config, &self.scene, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.bytes(self.config.to_toml().as_bytes());
        let s = &self.scene;
        w.u64(s.sh_degree as u64);
        w.f64s(s.bounds.min.as_slice());
        w.f64s(s.bounds.max.as_slice());
        w.u64(s.len() as u64);
        for p in &s.particles {
            w.f64s(p.position.as_slice());
            w.f64s(&[p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k]);
            w.f64s(p.log_scale.as_slice());
            w.f64(p.opacity_logit);
            w.u64(p.color.len() as u64);
            w.f64s(&p.color);
            w.f64(p.mass);
            w.f64(p.volume);
            w.f64s(p.velocity.as_slice());
            w.f64s(p.deformation.as_slice());
        }
        w.u64(self.params.len() as u64);
        for id in self.params.ids() {
            w.bytes(self.params.name(id).as_bytes());
            let t = self.params.get(id);
            w.u64(t.shape().len() as u64);
            t.shape().iter().for_each(|d| w.u64(*d as u64));
            w.f64s(t.data());
            w.f64(self.params.lr(id));
            w.0.push(self.params.is_trainable(id) as u8);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("four bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let config = TrainConfig::from_toml(&r.string()?)?;
        let sh_degree = r.u64()? as usize;
        let bounds = Aabb::new(Vector3::from(r.f64s::<3>()?), Vector3::from(r.f64s::<3>()?));
        let n = r.len()?;
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let position = Vector3::from(r.f64s::<3>()?);
            let q = r.f64s::<4>()?;
            let log_scale = Vector3::from(r.f64s::<3>()?);
            let opacity_logit = r.f64()?;
            let nc = r.len()?;
            let color = (0..nc).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let mass = r.f64()?;
            let volume = r.f64()?;
            let velocity = Vector3::from(r.f64s::<3>()?);
            let deformation = Matrix3::from_column_slice(&r.f64s::<9>()?);
            particles.push(GaussianParticle {
                position,
                rotation: Quaternion::new(q[0], q[1], q[2], q[3]),
                log_scale,
                opacity_logit,
                color,
                mass,
                volume,
                velocity,
                deformation,
            });
        }
        let scene = Scene {
            particles,
            bounds,
            sh_degree,
        };
        let count = r.len()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if numel.saturating_mul(8) > buf.len() {
                return Err(Error::Format(format!("parameter {name} is larger than the file")));
            }
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let lr = r.f64()?;
            let trainable = r.take(1)?[0] != 0;
            let id = params.add(name, Tensor::new(shape, data)?, lr);
            params.set_trainable(id, trainable);
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, scene, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }

    /// Bit-level equality of every stored value.
    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}
