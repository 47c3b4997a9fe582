//! Tiled alpha compositing as a fused tape operation.

use gsdyn_autodiff::{CustomOp, Tensor};

/// Opacity contributions below this are dropped by tile binning.
pub const CUTOFF: f64 = 1e-13;
pub const MAX_ALPHA: f64 = 0.999;
pub const TILE: usize = 16;

/// Composites depth-ordered splats.
///
/// Inputs: means `[N, 2]` (column, row), conics `[N, 3]` (the upper
/// triangle `a, b, c` of the inverse screen covariance), opacities `[N]`
/// and colors `[N, 3]`. Output: image `[H, W, 3]`.
#[derive(Debug)]
pub struct Rasterizer {
    width: usize,
    height: usize,
    tiles_x: usize,
    /// Per tile, particle indices front to back.
    bins: Vec<Vec<usize>>,
}

struct Splat<'a> {
    means: &'a [f64],
    conics: &'a [f64],
    opacity: &'a [f64],
    colors: &'a [f64],
}

impl Splat<'_> {
    /// `(alpha, G, clamped)` of particle `i` at pixel `(px, py)`.
    #[inline]
    fn alpha(&self, i: usize, px: f64, py: f64) -> (f64, f64, bool) {
        let dx = px - self.means[2 * i];
        let dy = py - self.means[2 * i + 1];
        let (a, b, c) = (self.conics[3 * i], self.conics[3 * i + 1], self.conics[3 * i + 2]);
        let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        let g = (-0.5 * q).exp();
        let raw = self.opacity[i] * g;
        if raw > MAX_ALPHA {
            (MAX_ALPHA, g, true)
        } else {
            (raw, g, false)
        }
    }
}

impl Rasterizer {
    /// Bin particles in `order` (front to back) into tiles.
    pub fn new(
        width: usize,
        height: usize,
        means: &[f64],
        conics: &[f64],
        opacity: &[f64],
        order: &[usize],
    ) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for &i in order {
            let o = opacity[i];
            if !(o > CUTOFF) {
                continue;
            }
            let (a, b, c) = (conics[3 * i], conics[3 * i + 1], conics[3 * i + 2]);
            let det = a * c - b * b;
            if !(det > 0.0) {
                continue;
            }
            // Outside the box, o · exp(−q/2) < CUTOFF.
            let q_max = 2.0 * (o / CUTOFF).ln();
            let rx = (q_max * c / det).sqrt();
            let ry = (q_max * a / det).sqrt();
            let (u, v) = (means[2 * i], means[2 * i + 1]);
            let c0 = (u - rx).ceil().max(0.0);
            let c1 = (u + rx).floor().min(width as f64 - 1.0);
            let r0 = (v - ry).ceil().max(0.0);
            let r1 = (v + ry).floor().min(height as f64 - 1.0);
            if !(c0 <= c1 && r0 <= r1) {
                continue;
            }
            let (tx0, tx1) = (c0 as usize / TILE, c1 as usize / TILE);
            let (ty0, ty1) = (r0 as usize / TILE, r1 as usize / TILE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[ty * tiles_x + tx].push(i);
                }
            }
        }
        Self {
            width,
            height,
            tiles_x,
            bins,
        }
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize, &[usize])> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).map(move |c| {
                let bin = &self.bins[(r / TILE) * self.tiles_x + c / TILE];
                (r, c, bin.as_slice())
            })
        })
    }
}

fn splat<'a>(inputs: &[&'a Tensor]) -> Splat<'a> {
    Splat {
        means: inputs[0].data(),
        conics: inputs[1].data(),
        opacity: inputs[2].data(),
        colors: inputs[3].data(),
    }
}

impl CustomOp for Rasterizer {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn forward(&self, inputs: &[&Tensor]) -> gsdyn_autodiff::Result<Tensor> {
        let s = splat(inputs);
        let mut out = vec![0.0; self.width * self.height * 3];
        for (r, c, bin) in self.pixels() {
            let (px, py) = (c as f64, r as f64);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for &i in bin {
                let (alpha, _, _) = s.alpha(i, px, py);
                let w = alpha * t;
                for k in 0..3 {
                    acc[k] += s.colors[3 * i + k] * w;
                }
                t *= 1.0 - alpha;
            }
            out[3 * (r * self.width + c)..][..3].copy_from_slice(&acc);
        }
        Tensor::new([self.height, self.width, 3], out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> gsdyn_autodiff::Result<Vec<Option<Tensor>>> {
        let s = splat(inputs);
        let n = inputs[2].len();
        let mut d_means = vec![0.0; 2 * n];
        let mut d_conics = vec![0.0; 3 * n];
        let mut d_opacity = vec![0.0; n];
        let mut d_colors = vec![0.0; 3 * n];
        let g = grad.data();
        let mut stack: Vec<(usize, f64, f64, bool, f64)> = Vec::new();
        for (r, c, bin) in self.pixels() {
            let gp = &g[3 * (r * self.width + c)..][..3];
            if gp.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (px, py) = (c as f64, r as f64);
            stack.clear();
            let mut t = 1.0;
            for &i in bin {
                let (alpha, gauss, clamped) = s.alpha(i, px, py);
                stack.push((i, alpha, gauss, clamped, t));
                t *= 1.0 - alpha;
            }
            // Color accumulated behind the current splat.
            let mut behind = [0.0; 3];
            for &(i, alpha, gauss, clamped, t) in stack.iter().rev() {
                let ci = &s.colors[3 * i..3 * i + 3];
                let mut dot_c = 0.0;
                let mut dot_s = 0.0;
                for k in 0..3 {
                    d_colors[3 * i + k] += alpha * t * gp[k];
                    dot_c += ci[k] * gp[k];
                    dot_s += behind[k] * gp[k];
                }
                for k in 0..3 {
                    behind[k] += ci[k] * alpha * t;
                }
                if clamped {
                    continue;
                }
                let d_alpha = t * dot_c - dot_s / (1.0 - alpha);
                d_opacity[i] += d_alpha * gauss;
                let dg = d_alpha * s.opacity[i] * gauss;
                let dx = px - s.means[2 * i];
                let dy = py - s.means[2 * i + 1];
                let (a, b, cc) = (s.conics[3 * i], s.conics[3 * i + 1], s.conics[3 * i + 2]);
                // G = exp(−q/2); ∂G/∂u = G (a dx + b dy), ∂G/∂a = −G dx²/2.
                d_means[2 * i] += dg * (a * dx + b * dy);
                d_means[2 * i + 1] += dg * (b * dx + cc * dy);
                d_conics[3 * i] -= 0.5 * dg * dx * dx;
                d_conics[3 * i + 1] -= dg * dx * dy;
                d_conics[3 * i + 2] -= 0.5 * dg * dy * dy;
            }
        }
        Ok(vec![
            Some(Tensor::new(inputs[0].shape().to_vec(), d_means)?),
            Some(Tensor::new(inputs[1].shape().to_vec(), d_conics)?),
            Some(Tensor::new(inputs[2].shape().to_vec(), d_opacity)?),
            Some(Tensor::new(inputs[3].shape().to_vec(), d_colors)?),
        ])
    }
}
