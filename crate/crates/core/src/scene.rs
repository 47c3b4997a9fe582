//! Gaussian particles, scenes and pinhole cameras.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Quaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Zeroth-order spherical-harmonic constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Camera-space depth below which a point is culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParticle {
    pub position: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: Quaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients, `3 · (degree + 1)²` reals laid out
    /// coefficient-major (`[k][rgb]`).
    pub color: Vec<f64>,
    pub mass: f64,
    pub volume: f64,
    pub velocity: Vector3<f64>,
    pub deformation: Matrix3<f64>,
}

impl GaussianParticle {
    /// An isotropic particle of constant color `rgb` at rest.
    pub fn new(position: Vector3<f64>, radius: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self {
            position,
            rotation: Quaternion::identity(),
            log_scale: Vector3::repeat(radius.ln()),
            opacity_logit: logit(opacity),
            color: rgb_to_sh(rgb).to_vec(),
            mass: 0.0,
            volume: 0.0,
            velocity: Vector3::zeros(),
            deformation: Matrix3::identity(),
        }
    }

    pub fn opacity(&self) -> f64 {
        gsdyn_autodiff::sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_from_rs(&self.rotation, &self.log_scale)
    }

    /// Renormalize the rotation quaternion.
    pub fn normalize(&mut self) -> Result<()> {
        let n = self.rotation.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        self.rotation /= n;
        Ok(())
    }

    /// RGB seen from `eye`, before clamping to `[0, 1]`.
    pub fn raw_color(&self, eye: &Vector3<f64>) -> [f64; 3] {
        let mut rgb = [0.5; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += SH_C0 * self.color[c];
        }
        if self.color.len() >= 12 {
            let d = (self.position - eye).normalize();
            let basis = [-SH_C1 * d.y, SH_C1 * d.z, -SH_C1 * d.x];
            for (k, b) in basis.iter().enumerate() {
                for (c, v) in rgb.iter_mut().enumerate() {
                    *v += b * self.color[3 * (k + 1) + c];
                }
            }
        }
        rgb
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Degree-0 coefficients that render as `rgb`.
pub fn rgb_to_sh(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

pub fn sh_coefficient_count(degree: usize) -> usize {
    3 * (degree + 1) * (degree + 1)
}

/// Rotation matrix of a quaternion after normalization.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(s))`.
pub fn covariance_from_rs(q: &Quaternion<f64>, log_scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let r = rotation_matrix(q)?;
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let sigma = m * m.transpose();
    Ok(0.5 * (sigma + sigma.transpose()))
}

/// Unnormalized Gaussian density `exp(−½ dᵀ Σ⁻¹ d)` of `g` at `x`.
pub fn evaluate_gaussian(g: &GaussianParticle, x: &Vector3<f64>) -> Result<f64> {
    let r = rotation_matrix(&g.rotation)?;
    // Σ⁻¹ = R S⁻² Rᵀ, so the quadratic form is |S⁻¹ Rᵀ d|².
    let local = r.transpose() * (x - g.position);
    let inv_scale = g.log_scale.map(|s| (-s).exp());
    Ok((-0.5 * local.component_mul(&inv_scale).norm_squared()).exp())
}

/// Pinhole camera looking down its local +z axis, with +x right and +y
/// down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// appears upward in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut w = Matrix4::identity();
        w.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let cam = Self {
            world_to_camera: w,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Evenly spaced cameras on a horizontal ring (world +y up) around
    /// `center`, all looking at it.
    pub fn ring(
        count: usize,
        center: Vector3<f64>,
        radius: f64,
        elevation: f64,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Vec<Self>> {
        (0..count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count as f64;
                let eye = center + Vector3::new(radius * a.cos(), elevation, radius * a.sin());
                Self::look_at(eye, center, Vector3::y(), focal, width, height)
            })
            .collect()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) {
            return Err(Error::InvalidCamera(format!(
                "rotation block is not orthonormal (error {err:e})"
            )));
        }
        let bottom = self.world_to_camera.row(3);
        if bottom[(0, 0)] != 0.0 || bottom[(0, 1)] != 0.0 || bottom[(0, 2)] != 0.0 || bottom[(0, 3)] != 1.0 {
            return Err(Error::InvalidCamera("last row must be (0, 0, 0, 1)".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("focal lengths and size must be positive".into()));
        }
        Ok(())
    }

    /// Perspective Jacobian of the image-plane map at camera-space `c`.
    pub fn jacobian(&self, c: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / c.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * c.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * c.y * iz * iz,
        )
    }

    /// Image-plane position of a world point, `None` behind the near plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let c = self.to_camera(p);
        (c.z > NEAR_PLANE).then(|| {
            Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy)
        })
    }
}

/// `J Wᵣ Σ Wᵣᵀ Jᵀ` for an explicit Jacobian.
pub fn project_covariance_with(
    sigma: &Matrix3<f64>,
    w_rot: &Matrix3<f64>,
    j: &Matrix2x3<f64>,
) -> Matrix2<f64> {
    let t = j * w_rot;
    let out = t * sigma * t.transpose();
    0.5 * (out + out.transpose())
}

/// Screen-space covariance of a Gaussian at `position`; `None` when the
/// point is behind the near plane.
pub fn project_covariance(
    sigma: &Matrix3<f64>,
    camera: &Camera,
    position: &Vector3<f64>,
) -> Option<Matrix2<f64>> {
    let c = camera.to_camera(position);
    if c.z <= NEAR_PLANE {
        return None;
    }
    Some(project_covariance_with(
        sigma,
        &camera.rotation(),
        &camera.jacobian(&c),
    ))
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        (self.max - self.min).product()
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn padded(&self, pad: f64) -> Self {
        Self::new(self.min.add_scalar(-pad), self.max.add_scalar(pad))
    }

    /// Tight box around `points`; `None` when empty.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| {
            Self::new(b.min.inf(p), b.max.sup(p))
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub particles: Vec<GaussianParticle>,
    pub bounds: Aabb,
    pub sh_degree: usize,
}

impl Scene {
    /// Scene whose bounds are the particle box padded by `pad`.
    pub fn new(particles: Vec<GaussianParticle>, pad: f64) -> Self {
        let bounds = Aabb::around(particles.iter().map(|p| &p.position))
            .map(|b| b.padded(pad))
            .unwrap_or(Aabb::new(Vector3::zeros(), Vector3::zeros()));
        let sh_degree = particles
            .first()
            .map(|p| if p.color.len() >= 12 { 1 } else { 0 })
            .unwrap_or(0);
        Self {
            particles,
            bounds,
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Grow `bounds` to cover every particle.
    pub fn refresh_bounds(&mut self) {
        for p in &self.particles {
            self.bounds = Aabb::new(self.bounds.min.inf(&p.position), self.bounds.max.sup(&p.position));
        }
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.particles.iter().map(|p| p.position).collect()
    }

    /// Give every particle the volume `bounds volume / count` and mass
    /// `density · volume`.
    pub fn assign_uniform_mass(&mut self, density: f64) {
        let v0 = self.bounds.volume() / self.len().max(1) as f64;
        for p in &mut self.particles {
            p.volume = v0;
            p.mass = density * v0;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.particles.iter().enumerate() {
            if !self.bounds.contains(&p.position) {
                return Err(Error::Config(format!("particle {i} lies outside the scene bounds")));
            }
            if (p.rotation.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("particle {i} has a non-unit quaternion")));
            }
            if p.color.len() != sh_coefficient_count(self.sh_degree) {
                return Err(Error::Config(format!("particle {i} has the wrong color length")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn quat(axis: Vector3<f64>, angle: f64) -> Quaternion<f64> {
        *UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).quaternion()
    }

    #[test]
    fn identity_covariance() {
        let s = covariance_from_rs(&Quaternion::identity(), &Vector3::zeros()).unwrap();
        assert!((s - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn scaled_covariance() {
        let s = covariance_from_rs(&Quaternion::identity(), &Vector3::new(LN_2, 0.0, 0.0)).unwrap();
        assert!((s - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn rotated_covariance_permutes_axes() {
        let q = quat(Vector3::z(), FRAC_PI_2);
        let s = covariance_from_rs(&q, &Vector3::new(LN_2, 0.0, 0.0)).unwrap();
        assert!((s - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn zero_quaternion_is_an_error() {
        let q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(covariance_from_rs(&q, &Vector3::zeros()), Err(Error::ZeroQuaternion)));
    }

    #[test]
    fn gaussian_values() {
        let g = GaussianParticle::new(Vector3::new(0.1, 0.2, 0.3), 1.0, 0.5, [1.0, 0.0, 0.0]);
        assert_eq!(evaluate_gaussian(&g, &g.position).unwrap(), 1.0);
        let x = g.position + Vector3::new(0.0, 1.0, 0.0);
        assert!((evaluate_gaussian(&g, &x).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let far = g.position + Vector3::new(10.0, 0.0, 0.0);
        let v = evaluate_gaussian(&g, &far).unwrap();
        assert!(v < 1e-21 && (v - (-50f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn orthographic_projection_drops_depth() {
        let sigma = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 5.0));
        let j = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let out = project_covariance_with(&sigma, &Matrix3::identity(), &j);
        assert_eq!(out, Matrix2::from_diagonal(&Vector2::new(2.0, 3.0)));
    }

    #[test]
    fn on_axis_projection_scales_by_focal_over_depth() {
        let cam = Camera {
            world_to_camera: Matrix4::identity(),
            fx: 50.0,
            fy: 50.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        let z = 4.0;
        let out = project_covariance(&Matrix3::identity(), &cam, &Vector3::new(0.0, 0.0, z)).unwrap();
        let k = (50.0 / z) * (50.0 / z);
        assert!((out - Matrix2::from_diagonal(&Vector2::new(k, k))).abs().max() < 1e-12);
        assert!(project_covariance(&Matrix3::identity(), &cam, &Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project_covariance(&Matrix3::identity(), &cam, &Vector3::new(0.0, 0.0, 0.005)).is_none());
    }

    #[test]
    fn look_at_centers_the_target() {
        let cam = Camera::look_at(
            Vector3::new(0.5, 0.8, -1.5),
            Vector3::new(0.5, 0.3, 0.5),
            Vector3::y(),
            60.0,
            64,
            48,
        )
        .unwrap();
        let uv = cam.project(&Vector3::new(0.5, 0.3, 0.5)).unwrap();
        assert!((uv - Vector2::new(32.0, 24.0)).norm() < 1e-12);
        // world up maps to image up (smaller row)
        let above = cam.project(&Vector3::new(0.5, 0.4, 0.5)).unwrap();
        assert!(above.y < 24.0);
        assert!((cam.eye() - Vector3::new(0.5, 0.8, -1.5)).norm() < 1e-12);
    }

    #[test]
    fn camera_rejects_skewed_rotation() {
        let mut cam = Camera::look_at(Vector3::new(0.0, 0.0, -2.0), Vector3::zeros(), Vector3::y(), 50.0, 8, 8).unwrap();
        cam.world_to_camera[(0, 1)] += 1e-6;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn uniform_mass_uses_bounds_volume() {
        let ps = (0..8)
            .map(|i| {
                let p = Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64) * 0.5 + Vector3::repeat(0.25);
                GaussianParticle::new(p, 0.1, 0.9, [0.5; 3])
            })
            .collect();
        let mut scene = Scene::new(ps, 0.25);
        scene.assign_uniform_mass(1000.0);
        assert!((scene.particles[0].volume - 1.0 / 8.0).abs() < 1e-15);
        assert!((scene.particles[3].mass - 125.0).abs() < 1e-12);
        scene.validate().unwrap();
    }

    #[test]
    fn sh_degree_zero_color_round_trip() {
        let g = GaussianParticle::new(Vector3::zeros(), 0.1, 0.5, [0.2, 0.7, 1.0]);
        let c = g.raw_color(&Vector3::new(0.0, 0.0, -3.0));
        for (a, b) in c.iter().zip([0.2, 0.7, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
