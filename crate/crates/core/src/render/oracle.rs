//! Per-pixel reference compositor over every particle.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{check_deformation, depth_order, Deformation, RenderOptions, MAX_ALPHA};
use crate::error::Result;
use crate::image::RenderedImage;
use crate::scene::{project_covariance, Camera, Scene};

struct Projected {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

fn project_all(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
    opts: &RenderOptions,
) -> Result<(Vec<usize>, Vec<Option<Projected>>)> {
    camera.validate()?;
    if let Some(d) = deformation {
        check_deformation(scene, d)?;
    }
    let eye = camera.eye();
    let mut depths = Vec::with_capacity(scene.len());
    let mut out = Vec::with_capacity(scene.len());
    for (i, g) in scene.particles.iter().enumerate() {
        let (pos, f) = match deformation {
            Some(d) => d[i],
            None => (g.position, Matrix3::identity()),
        };
        let mut sigma = g.covariance()?;
        if deformation.is_some() && opts.deform_covariance {
            sigma = f * sigma * f.transpose();
        }
        depths.push(camera.to_camera(&pos).z);
        let proj = project_covariance(&sigma, camera, &pos).and_then(|cov| {
            let conic = cov.try_inverse()?;
            let mean = camera.project(&pos)?;
            let mut moved = g.clone();
            moved.position = pos;
            let color = moved.raw_color(&eye).map(|c| c.clamp(0.0, 1.0));
            Some(Projected {
                mean,
                conic,
                opacity: g.opacity(),
                color,
            })
        });
        out.push(proj);
    }
    Ok((depth_order(&depths), out))
}

fn alpha(p: &Projected, px: f64, py: f64) -> f64 {
    let d = Vector2::new(px, py) - p.mean;
    let q = (d.transpose() * p.conic * d)[(0, 0)];
    (p.opacity * (-0.5 * q).exp()).min(MAX_ALPHA)
}

/// The compositing formula evaluated at every pixel over every particle.
pub fn render_bruteforce(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
) -> Result<RenderedImage> {
    render_bruteforce_with(scene, camera, deformation, &RenderOptions::default())
}

pub fn render_bruteforce_with(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
    opts: &RenderOptions,
) -> Result<RenderedImage> {
    let (order, proj) = project_all(scene, camera, deformation, opts)?;
    let mut img = RenderedImage::black(camera.width, camera.height);
    for r in 0..camera.height {
        for c in 0..camera.width {
            let mut t = 1.0;
            let mut acc = Vector3::zeros();
            for &i in &order {
                let Some(p) = &proj[i] else { continue };
                let a = alpha(p, c as f64, r as f64);
                acc += Vector3::from(p.color) * (a * t);
                t *= 1.0 - a;
            }
            img.rgb[3 * (r * camera.width + c)..][..3].copy_from_slice(acc.as_slice());
        }
    }
    Ok(img)
}

/// Per-pixel label of the particle with the largest blending weight;
/// pixels whose accumulated opacity stays below one half get
/// `background`.
pub fn render_labels(
    scene: &Scene,
    camera: &Camera,
    deformation: Option<&[Deformation]>,
    labels: &[u8],
    background: u8,
) -> Result<Vec<u8>> {
    let (order, proj) = project_all(scene, camera, deformation, &RenderOptions::default())?;
    let mut out = vec![background; camera.width * camera.height];
    for r in 0..camera.height {
        for c in 0..camera.width {
            let mut t = 1.0;
            let mut best = (0.0, background);
            for &i in &order {
                let Some(p) = &proj[i] else { continue };
                let a = alpha(p, c as f64, r as f64);
                if a * t > best.0 {
                    best = (a * t, labels[i]);
                }
                t *= 1.0 - a;
            }
            if t < 0.5 {
                out[r * camera.width + c] = best.1;
            }
        }
    }
    Ok(out)
}
