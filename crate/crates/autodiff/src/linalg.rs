//! Small fixed-size helpers for 3×3 blocks stored row-major inside tensors.

use nalgebra::{Matrix3, Vector3};

pub const POLAR_MAX_ITERS: usize = 20;
pub const POLAR_TOL: f64 = 1e-12;

pub fn mat3_from(slice: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(&slice[..9])
}

pub fn mat3_write(m: &Matrix3<f64>, out: &mut [f64]) {
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
}

pub fn mat3_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    mat3_write(m, &mut out);
    out
}

/// Matrix of cofactors, equal to `det(F) F⁻ᵀ` when `F` is invertible.
pub fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        f[(r0, c0)] * f[(r1, c1)] - f[(r0, c1)] * f[(r1, c0)]
    };
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(1, 2, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 1, 2),
        c(0, 2, 0, 2),
        -c(0, 2, 0, 1),
        c(0, 1, 1, 2),
        -c(0, 1, 0, 2),
        c(0, 1, 0, 1),
    )
}

/// Orthogonal factor of `F = R S` by the Newton iteration
/// `X ← ½(X + X⁻ᵀ)`. Requires `det(F) > 0`; returns `None` otherwise.
pub fn polar_rotation(f: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if !(f.determinant() > 0.0) {
        return None;
    }
    let mut x = *f;
    for _ in 0..POLAR_MAX_ITERS {
        let det = x.determinant();
        if det <= 0.0 || !det.is_finite() {
            return None;
        }
        let inv_t = cofactor(&x) / det;
        let next = (x + inv_t) * 0.5;
        let delta = (next - x).norm();
        x = next;
        if delta < POLAR_TOL {
            break;
        }
    }
    Some(x)
}

/// `(R, S)` with `S = sym(Rᵀ F)`.
pub fn polar_decompose(f: &Matrix3<f64>) -> Option<(Matrix3<f64>, Matrix3<f64>)> {
    let r = polar_rotation(f)?;
    let s = r.transpose() * f;
    let s = (s + s.transpose()) * 0.5;
    Some((r, s))
}

/// Adjoint of the rotation factor: given `∂L/∂R`, return `∂L/∂F`.
///
/// With `Ω = RᵀdR` skew and `SΩ + ΩS = RᵀdF − dFᵀR`, the adjoint is
/// `2 R [y]×` where `(tr(S) I − S) y = axial(skew(Rᵀ R̄))`.
pub fn polar_rotation_adjoint(
    f: &Matrix3<f64>,
    r: &Matrix3<f64>,
    r_bar: &Matrix3<f64>,
) -> Matrix3<f64> {
    let s = r.transpose() * f;
    let s = (s + s.transpose()) * 0.5;
    let m = r.transpose() * r_bar;
    let k = (m - m.transpose()) * 0.5;
    let c = axial(&k);
    let a = Matrix3::identity() * s.trace() - s;
    let y = a.lu().solve(&c).unwrap_or_else(Vector3::zeros);
    r * skew(&y) * 2.0
}

/// Vector `y` with `[y]× = k` for skew `k`.
pub fn axial(k: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(k[(2, 1)], k[(0, 2)], k[(1, 0)])
}

pub fn skew(y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn cofactor_matches_det_inverse_transpose() {
        let f = Matrix3::new(1.2, 0.1, -0.3, 0.0, 0.9, 0.2, 0.4, -0.1, 1.1);
        let expect = f.try_inverse().unwrap().transpose() * f.determinant();
        assert!((cofactor(&f) - expect).norm() < 1e-14);
    }

    #[test]
    fn skew_identity_for_symmetric_s() {
        let s = Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.7);
        let y = Vector3::new(0.3, -1.1, 0.4);
        let lhs = s * skew(&y) + skew(&y) * s;
        let rhs = skew(&((Matrix3::identity() * s.trace() - s) * y));
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn polar_of_rotation_times_stretch() {
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let stretch = Matrix3::new(1.5, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 1.1);
        let (r, s) = polar_decompose(&(rot * stretch)).unwrap();
        assert!((r - rot).norm() < 1e-10);
        assert!((s - stretch).norm() < 1e-10);
    }

    #[test]
    fn polar_rejects_inverted() {
        let f = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(polar_rotation(&f).is_none());
    }
}
