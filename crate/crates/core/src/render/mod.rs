//! Differentiable Gaussian splatting.
//!
//! Pixel `(row, col)` samples the image-plane point `(col, row)`. Splats are
//! sorted once per image by camera-space depth (ties broken by particle
//! index) and composited front to back over a black background.

mod oracle;
mod raster;

use std::rc::Rc;

use gsdyn_autodiff::{CustomOp, Tape, Tensor, TensorError, Var};
use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::image::RenderedImage;
use crate::scene::{Camera, Scene, NEAR_PLANE, SH_C0, SH_C1};

pub use oracle::{render_bruteforce, render_bruteforce_with, render_labels};
pub use raster::{Rasterizer, CUTOFF, MAX_ALPHA, TILE};

/// Per-particle deformed state: position and deformation gradient.
pub type Deformation = (Vector3<f64>, Matrix3<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Render `F Σ Fᵀ` instead of `Σ` when a deformation is supplied.
    pub deform_covariance: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            deform_covariance: true,
        }
    }
}

/// Particle attributes recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SplatVars<'t> {
    /// `[N, 3]`
    pub positions: Var<'t>,
    /// `[N, 4]` quaternions `(w, x, y, z)`, normalized inside the op.
    pub rotations: Var<'t>,
    /// `[N, 3]`
    pub log_scales: Var<'t>,
    /// `[N]`
    pub opacity_logits: Var<'t>,
    /// `[N, 3 (d + 1)²]`
    pub colors: Var<'t>,
    /// `[N, 3, 3]`
    pub deformation: Option<Var<'t>>,
}

impl<'t> SplatVars<'t> {
    /// Every attribute of `scene` as a constant.
    pub fn constants(tape: &'t Tape, scene: &Scene) -> Result<Self> {
        let t = SceneTensors::from_scene(scene)?;
        Ok(Self {
            positions: tape.constant(t.positions),
            rotations: tape.constant(t.rotations),
            log_scales: tape.constant(t.log_scales),
            opacity_logits: tape.constant(t.opacity_logits),
            colors: tape.constant(t.colors),
            deformation: None,
        })
    }
}

/// Particle attributes as packed tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTensors {
    pub positions: Tensor,
    pub rotations: Tensor,
    pub log_scales: Tensor,
    pub opacity_logits: Tensor,
    pub colors: Tensor,
}

impl SceneTensors {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        let n = scene.len();
        let ps = &scene.particles;
        let nc = ps.first().map_or(3, |p| p.color.len());
        Ok(Self {
            positions: Tensor::new([n, 3], ps.iter().flat_map(|p| p.position.iter().copied()).collect())?,
            rotations: Tensor::new(
                [n, 4],
                ps.iter()
                    .flat_map(|p| [p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k])
                    .collect(),
            )?,
            log_scales: Tensor::new([n, 3], ps.iter().flat_map(|p| p.log_scale.iter().copied()).collect())?,
            opacity_logits: Tensor::new([n], ps.iter().map(|p| p.opacity_logit).collect())?,
            colors: Tensor::new([n, nc], ps.iter().flat_map(|p| p.color.iter().copied()).collect())?,
        })
    }

    /// Write the tensors back into `scene`, renormalizing quaternions.
    pub fn write_to(&self, scene: &mut Scene) -> Result<()> {
        let nc = self.colors.shape()[1];
        for (i, p) in scene.particles.iter_mut().enumerate() {
            let x = &self.positions.data()[3 * i..3 * i + 3];
            p.position = Vector3::new(x[0], x[1], x[2]);
            let q = &self.rotations.data()[4 * i..4 * i + 4];
            p.rotation = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
            p.normalize()?;
            let s = &self.log_scales.data()[3 * i..3 * i + 3];
            p.log_scale = Vector3::new(s[0], s[1], s[2]);
            p.opacity_logit = self.opacity_logits.data()[i];
            p.color = self.colors.data()[nc * i..nc * (i + 1)].to_vec();
        }
        scene.refresh_bounds();
        Ok(())
    }
}

/// Unit-quaternion `[N, 4]` to rotation matrix `[N, 3, 3]`.
#[derive(Debug)]
pub struct QuatToRotation;

fn unit_quat(q: &[f64], index: usize) -> gsdyn_autodiff::Result<([f64; 4], f64)> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(TensorError::Singular {
            op: "quat_to_rotation",
            index,
        });
    }
    Ok(([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n))
}

impl CustomOp for QuatToRotation {
    fn name(&self) -> &'static str {
        "quat_to_rotation"
    }

    fn forward(&self, inputs: &[&Tensor]) -> gsdyn_autodiff::Result<Tensor> {
        let q = inputs[0];
        let n = q.shape()[0];
        let mut out = Vec::with_capacity(9 * n);
        for i in 0..n {
            let ([w, x, y, z], _) = unit_quat(&q.data()[4 * i..4 * i + 4], i)?;
            out.extend_from_slice(&[
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ]);
        }
        Tensor::new([n, 3, 3], out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> gsdyn_autodiff::Result<Vec<Option<Tensor>>> {
        let q = inputs[0];
        let n = q.shape()[0];
        let mut dq = vec![0.0; 4 * n];
        for i in 0..n {
            let ([w, x, y, z], norm) = unit_quat(&q.data()[4 * i..4 * i + 4], i)?;
            let g = &grad.data()[9 * i..9 * i + 9];
            let dot = |m: [f64; 9]| m.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            let du = [
                dot([0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0]),
                dot([0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x]),
                dot([-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y]),
                dot([-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0]),
            ];
            // Project out the radial direction of the normalization.
            let u = [w, x, y, z];
            let radial: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
            for k in 0..4 {
                dq[4 * i + k] = (du[k] - u[k] * radial) / norm;
            }
        }
        Ok(vec![Some(Tensor::new([n, 4], dq)?)])
    }
}

/// Front-to-back order of the particles in front of the near plane.
pub fn depth_order(depths: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..depths.len()).filter(|&i| depths[i] > NEAR_PLANE).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
    order
}

/// Render `vars` through `camera`; the result is an `[H, W, 3]` variable.
pub fn render_vars<'t>(vars: &SplatVars<'t>, camera: &Camera, opts: &RenderOptions) -> Result<Var<'t>> {
    camera.validate()?;
    let tape = vars.positions.tape();
    let (w, h) = (camera.width, camera.height);
    let n = vars.positions.shape()[0];
    if n == 0 {
        return Ok(tape.constant(Tensor::zeros([h, w, 3])));
    }

    let rot = tape.custom(Rc::new(QuatToRotation), &[vars.rotations])?;
    let scaled = rot.mul(vars.log_scales.exp()?.reshape([n, 1, 3])?)?;
    let mut sigma = scaled.matmul(scaled.transpose()?)?;
    if let (Some(f), true) = (vars.deformation, opts.deform_covariance) {
        sigma = f.matmul(sigma)?.matmul(f.transpose()?)?;
    }

    let w_rot = camera.rotation();
    let w_data: Vec<f64> = (0..9).map(|k| w_rot[(k / 3, k % 3)]).collect();
    let w_var = tape.constant(Tensor::new([3, 3], w_data)?);
    let t = camera.translation();
    let cam = vars
        .positions
        .matmul(w_var.transpose()?)?
        .add(tape.constant(Tensor::from_vec(t.iter().copied().collect())))?;
    let depths: Vec<f64> = cam.value().data().chunks_exact(3).map(|c| c[2]).collect();

    let x = cam.slice_last(0, 1)?;
    let y = cam.slice_last(1, 2)?;
    let z = cam.slice_last(2, 3)?.clamp(NEAR_PLANE, f64::INFINITY)?;
    let iz = tape.scalar(1.0).div(z)?;
    let iz2 = iz.square()?;
    let u = x.mul(iz)?.scale(camera.fx)?.offset(camera.cx)?;
    let v = y.mul(iz)?.scale(camera.fy)?.offset(camera.cy)?;
    let means = Var::concat_last(&[u, v])?;

    let zero = tape.constant(Tensor::zeros([n, 1]));
    let jac = Var::concat_last(&[
        iz.scale(camera.fx)?,
        zero,
        x.mul(iz2)?.scale(-camera.fx)?,
        zero,
        iz.scale(camera.fy)?,
        y.mul(iz2)?.scale(-camera.fy)?,
    ])?
    .reshape([n, 2, 3])?;
    let tj = jac.matmul(w_var)?;
    let cov2 = tj.matmul(sigma)?.matmul(tj.transpose()?)?.reshape([n, 4])?;
    let a = cov2.slice_last(0, 1)?;
    let b = cov2.slice_last(1, 2)?;
    let c = cov2.slice_last(3, 4)?;
    let det = a.mul(c)?.sub(b.square()?)?;
    let conics = Var::concat_last(&[c.div(det)?, b.neg()?.div(det)?, a.div(det)?])?;

    let opacity = vars.opacity_logits.sigmoid()?;
    let colors = shade(vars, camera)?;

    let order = depth_order(&depths);
    let raster = Rasterizer::new(
        w,
        h,
        means.value().data(),
        conics.value().data(),
        opacity.value().data(),
        &order,
    );
    Ok(tape.custom(Rc::new(raster), &[means, conics, opacity, colors])?)
}

/// Clamped RGB per particle from its spherical-harmonic coefficients.
fn shade<'t>(vars: &SplatVars<'t>, camera: &Camera) -> Result<Var<'t>> {
    let tape = vars.positions.tape();
    let n = vars.positions.shape()[0];
    let nc = vars.colors.shape()[1];
    let mut rgb = vars.colors.slice_last(0, 3)?.scale(SH_C0)?.offset(0.5)?;
    if nc >= 12 {
        let eye = camera.eye();
        let d = vars
            .positions
            .sub(tape.constant(Tensor::from_vec(eye.iter().copied().collect())))?;
        let len = d.square()?.sum_axis(1)?.sqrt()?.reshape([n, 1])?;
        let dir = d.div(len)?;
        let basis = Var::concat_last(&[
            dir.slice_last(1, 2)?.scale(-SH_C1)?,
            dir.slice_last(2, 3)?.scale(SH_C1)?,
            dir.slice_last(0, 1)?.scale(-SH_C1)?,
        ])?
        .reshape([n, 1, 3])?;
        let sh1 = vars.colors.slice_last(3, 12)?.reshape([n, 3, 3])?;
        rgb = rgb.add(basis.matmul(sh1)?.reshape([n, 3])?)?;
    }
    Ok(rgb.clamp(0.0, 1.0)?)
}

/// Render `scene`, optionally replacing positions and deformation
/// gradients with `deformation`.
pub fn render(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
) -> Result<RenderedImage> {
    render_with(scene, camera, deformation, &RenderOptions::default())
}

pub fn render_with(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
    opts: &RenderOptions,
) -> Result<RenderedImage> {
    let tape = Tape::new();
    let mut vars = SplatVars::constants(&tape, scene)?;
    if let Some(def) = deformation {
        check_deformation(scene, def)?;
        let n = def.len();
        vars.positions = tape.constant(Tensor::new(
            [n, 3],
            def.iter().flat_map(|(p, _)| p.iter().copied()).collect(),
        )?);
        vars.deformation = Some(tape.constant(Tensor::new(
            [n, 3, 3],
            def.iter()
                .flat_map(|(_, f)| gsdyn_autodiff::linalg::mat3_to_row_major(f))
                .collect(),
        )?));
    }
    let img = render_vars(&vars, camera, opts)?;
    RenderedImage::from_tensor(&img.value())
}

pub(crate) fn check_deformation(scene: &Scene, def: &[Deformation]) -> Result<()> {
    if def.len() != scene.len() {
        return Err(crate::error::Error::Config(format!(
            "deformation has {} entries for {} particles",
            def.len(),
            scene.len()
        )));
    }
    Ok(())
}
