//! Image quality, clustering and segmentation scores.

use std::path::Path;
use std::rc::Rc;

use gsdyn_autodiff::{CustomOp, Tape, Tensor, Var};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, Error, Result};
use crate::image::RenderedImage;
use crate::material::MaterialDecoder;
use crate::nn::ParamStore;
use crate::velocity::VelocityModel;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Luminance weights (Rec. 601).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const KMEANS_MAX_ITERATIONS: usize = 300;
/// Timestamps sampled per particle signature.
pub const SIGNATURE_TIMESTAMPS: usize = 10;

fn same_shape(a: &RenderedImage, b: &RenderedImage) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::ShapeMismatch(a.size(), b.size()));
    }
    Ok(())
}

pub fn mse(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.rgb.len().max(1) as f64)
}

/// Peak signal-to-noise ratio for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn check_window(w: usize, h: usize) -> Result<()> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Valid separable Gaussian filtering of a row-major `h × w` plane.
fn filter(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - k.len(), h + 1 - k.len());
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity of the luminance planes.
pub fn ssim(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    same_shape(a, b)?;
    check_window(a.width, a.height)?;
    let (w, h) = (a.width, a.height);
    let k = gaussian_window();
    let la = a.luminance();
    let lb = b.luminance();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter(&la, w, h, &k);
    let mu_b = filter(&lb, w, h, &k);
    let aa = filter(&prod(&la, &la), w, h, &k);
    let bb = filter(&prod(&lb, &lb), w, h, &k);
    let ab = filter(&prod(&la, &lb), w, h, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Elementwise absolute value.
#[derive(Debug)]
struct Abs;

impl CustomOp for Abs {
    fn name(&self) -> &str {
        "abs"
    }

    fn forward(&self, inputs: &[&Tensor]) -> gsdyn_autodiff::Result<Tensor> {
        Ok(inputs[0].map(f64::abs))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> gsdyn_autodiff::Result<Vec<Option<Tensor>>> {
        let g: Vec<f64> = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(x, g)| if *x > 0.0 { *g } else if *x < 0.0 { -*g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), g)?)])
    }
}

/// `[rows, rows + 1 - W]` valid-filter matrix, applied as `M x`.
fn filter_matrix(rows: usize) -> Tensor {
    let k = gaussian_window();
    let out = rows + 1 - k.len();
    let mut data = vec![0.0; out * rows];
    for r in 0..out {
        for (i, kv) in k.iter().enumerate() {
            data[r * rows + r + i] = *kv;
        }
    }
    Tensor::new([out, rows], data).expect("filter shape")
}

/// Differentiable SSIM of an `[H, W, 3]` variable against a fixed image.
pub fn ssim_var<'t>(pred: Var<'t>, gt: &RenderedImage) -> Result<Var<'t>> {
    let shape = pred.shape();
    let (h, w) = (shape[0], shape[1]);
    if (w, h) != gt.size() {
        return Err(Error::ShapeMismatch((w, h), gt.size()));
    }
    check_window(w, h)?;
    let tape = pred.tape();
    let luma = tape.constant(Tensor::new([3, 1], LUMA.to_vec())?);
    let la = pred.reshape([h * w, 3])?.matmul(luma)?.reshape([h, w])?;
    let lb = tape.constant(Tensor::new([h, w], gt.luminance())?);
    let kv = tape.constant(filter_matrix(h));
    let kh = tape.constant(filter_matrix(w)).transpose()?;
    let blur = |x: Var<'t>| -> Result<Var<'t>> { Ok(kv.matmul(x)?.matmul(kh)?) };
    let mu_a = blur(la)?;
    let mu_b = blur(lb)?;
    let ma2 = mu_a.square()?;
    let mb2 = mu_b.square()?;
    let mab = mu_a.mul(mu_b)?;
    let va = blur(la.square()?)?.sub(ma2)?;
    let vb = blur(lb.square()?)?.sub(mb2)?;
    let cov = blur(la.mul(lb)?)?.sub(mab)?;
    let num = mab.scale(2.0)?.offset(C1)?.mul(cov.scale(2.0)?.offset(C2)?)?;
    let den = ma2.add(mb2)?.offset(C1)?.mul(va.add(vb)?.offset(C2)?)?;
    Ok(num.div(den)?.mean()?)
}

/// `(1 − λ) L1 + λ (1 − SSIM)` on the tape.
pub fn rendering_loss_var<'t>(pred: Var<'t>, gt: &RenderedImage, lambda_ssim: f64) -> Result<Var<'t>> {
    let shape = pred.shape();
    if (shape[1], shape[0]) != gt.size() {
        return Err(Error::ShapeMismatch((shape[1], shape[0]), gt.size()));
    }
    let tape = pred.tape();
    let diff = pred.sub(tape.constant(gt.to_tensor()))?;
    let l1 = tape.custom(Rc::new(Abs), &[diff])?.mean()?;
    if lambda_ssim == 0.0 {
        return Ok(l1);
    }
    let d_ssim = ssim_var(pred, gt)?.scale(-1.0)?.offset(1.0)?;
    Ok(l1.scale(1.0 - lambda_ssim)?.add(d_ssim.scale(lambda_ssim)?)?)
}

/// `(1 − λ) L1 + λ (1 − SSIM)`.
pub fn rendering_loss(pred: &RenderedImage, gt: &RenderedImage, lambda_ssim: f64) -> Result<f64> {
    same_shape(pred, gt)?;
    let l1 = pred.rgb.iter().zip(&gt.rgb).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.rgb.len().max(1) as f64;
    if lambda_ssim == 0.0 {
        return Ok(l1);
    }
    Ok((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(pred, gt)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(features: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut centroids = vec![features[rng.gen_range(0..n)].clone()];
    let mut d: Vec<f64> = features.iter().map(|f| dist2(f, &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            centroids.len()
        };
        centroids.push(features[pick].clone());
        for (di, f) in d.iter_mut().zip(features) {
            *di = di.min(dist2(f, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(features: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = features
        .iter()
        .map(|f| {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, dist2(f, c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(features: &[Vec<f64>], c: usize, seed: u64) -> Result<KMeans> {
    let n = features.len();
    if c == 0 || c > n {
        return Err(Error::Config(format!("cannot form {c} clusters from {n} points")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Config("features differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(features, c, &mut rng);
    let (mut labels, first) = assign(features, &centroids);
    let mut inertia = vec![first];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; c];
        let mut counts = vec![0usize; c];
        for (f, &l) in features.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(f) {
                *s += v;
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&features[a], &centroids[labels[a]])
                            .total_cmp(&dist2(&features[b], &centroids[labels[b]]))
                    })
                    .expect("non-empty input");
                centroids[j] = features[far].clone();
                labels[far] = j;
            }
        }
        let (next, value) = assign(features, &centroids);
        let prev = *inertia.last().expect("seeded");
        assert!(
            value <= prev * (1.0 + 1e-12) + 1e-300,
            "k-means inertia increased from {prev} to {value}"
        );
        inertia.push(value);
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

/// Zero mean and unit variance per dimension; constant dimensions become zero.
pub fn standardize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = features.len().max(1) as f64;
    let dim = features.first().map_or(0, Vec::len);
    let mut out = features.to_vec();
    for d in 0..dim {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for f in &mut out {
            f[d] = if sd > 1e-12 * mean.abs().max(1.0) { (f[d] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// `count` evenly spaced times covering `[t0, t1]` inclusively.
pub fn sample_timestamps(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![t0],
        _ => (0..count)
            .map(|i| t0 + (t1 - t0) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Per-particle `[E, ν, ρ, v(t₁), …, v(t_m)]`, not standardized.
pub fn physics_signature(
    decoder: &MaterialDecoder,
    velocity: &VelocityModel,
    store: &ParamStore,
    positions: &[Vector3<f64>],
    timestamps: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let materials = decoder.decode_all(store, positions)?;
    let mut out: Vec<Vec<f64>> = materials
        .iter()
        .map(|m| vec![m.youngs_modulus, m.poisson_ratio, m.density])
        .collect();
    for &t in timestamps {
        let v = velocity.velocities_at(store, positions, t)?;
        for (row, vi) in out.iter_mut().zip(&v) {
            row.extend(vi.iter());
        }
    }
    Ok(out)
}

/// Minimum-cost assignment for a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationScores {
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores after matching predicted clusters to ground-truth classes so
/// that the summed IoU is maximal. Every score is a mean over gt classes;
/// an unmatched class scores zero.
pub fn segmentation_scores(pred: &[usize], gt: &[usize]) -> Result<SegmentationScores> {
    if pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "{} predicted labels for {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Config("no labels to score".into()));
    }
    let np = pred.iter().max().map_or(0, |m| m + 1);
    let ng = gt.iter().max().map_or(0, |m| m + 1);
    let mut conf = vec![vec![0usize; np]; ng];
    let mut gt_size = vec![0usize; ng];
    let mut pred_size = vec![0usize; np];
    for (&p, &g) in pred.iter().zip(gt) {
        conf[g][p] += 1;
        gt_size[g] += 1;
        pred_size[p] += 1;
    }
    let iou = |g: usize, p: usize| -> f64 {
        let inter = conf[g][p] as f64;
        let union = (gt_size[g] + pred_size[p]) as f64 - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    };
    let m = np.max(ng);
    let cost: Vec<Vec<f64>> = (0..m)
        .map(|g| (0..m).map(|p| if g < ng && p < np { -iou(g, p) } else { 0.0 }).collect())
        .collect();
    let assignment = hungarian(&cost);
    let (mut miou, mut pre, mut rec, mut f1) = (0.0, 0.0, 0.0, 0.0);
    for g in 0..ng {
        let p = assignment[g];
        if p >= np {
            continue;
        }
        let tp = conf[g][p] as f64;
        let precision = if pred_size[p] > 0 { tp / pred_size[p] as f64 } else { 0.0 };
        let recall = if gt_size[g] > 0 { tp / gt_size[g] as f64 } else { 0.0 };
        miou += iou(g, p);
        pre += precision;
        rec += recall;
        if precision + recall > 0.0 {
            f1 += 2.0 * precision * recall / (precision + recall);
        }
    }
    let k = ng as f64;
    Ok(SegmentationScores {
        miou: miou / k,
        precision: pre / k,
        recall: rec / k,
        f1: f1 / k,
    })
}

/// One row of a metrics table; absent values are written as empty cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub scene: String,
    pub task: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub miou: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub const METRICS_HEADER: &str = "scene,task,psnr,ssim,miou,f1,pre,rec";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scene,
            self.task,
            cell(self.psnr),
            cell(self.ssim),
            cell(self.miou),
            cell(self.f1),
            cell(self.precision),
            cell(self.recall)
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != 8 {
            return Err(Error::Format(format!("metrics row has {} cells", cells.len())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
            }
        };
        Ok(Self {
            scene: cells[0].into(),
            task: cells[1].into(),
            psnr: num(cells[2])?,
            ssim: num(cells[3])?,
            miou: num(cells[4])?,
            f1: num(cells[5])?,
            precision: num(cells[6])?,
            recall: num(cells[7])?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(MetricsRow::from_csv).collect()
}

/// One label per line.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}:{}: bad label {l:?}", path.display(), i + 1)))
        })
        .collect()
}

/// PSNR and SSIM of every `(pred, gt)` pair, averaged.
pub fn mean_image_scores<'a>(
    pairs: impl IntoIterator<Item = (&'a RenderedImage, &'a RenderedImage)>,
) -> Result<(f64, f64)> {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in pairs {
        p += psnr(a, b)?;
        s += ssim(a, b)?;
        n += 1;
    }
    let n = n.max(1) as f64;
    Ok((p / n, s / n))
}

/// Gradient of the rendering loss w.r.t. every pixel of `pred`.
pub fn rendering_loss_gradient(pred: &RenderedImage, gt: &RenderedImage, lambda_ssim: f64) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.leaf(pred.to_tensor());
    let loss = rendering_loss_var(x, gt, lambda_ssim)?;
    Ok(tape.backward(loss)?.wrt(x).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RenderedImage {
        let mut img = RenderedImage::black(w, h);
        for r in 0..h {
            for c in 0..w {
                for k in 0..3 {
                    img.rgb[(r * w + c) * 3 + k] = ((r * 7 + c * 3 + k * 5) % 17) as f64 / 16.0;
                }
            }
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = ramp(16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let mut b = a.clone();
        b.rgb.iter_mut().for_each(|v| *v = (*v + 0.1).min(1.0));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(matches!(psnr(&a, &ramp(16, 15)), Err(Error::ShapeMismatch(..))));
    }

    #[test]
    fn ssim_examples() {
        let a = ramp(20, 18);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut neg = a.clone();
        neg.rgb.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        let mut flat = RenderedImage::black(12, 12);
        flat.rgb.iter_mut().for_each(|v| *v = 0.5);
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(ssim(&ramp(10, 20), &ramp(10, 20)), Err(Error::ImageTooSmall { .. })));
        assert!((ssim(&a, &neg).unwrap() - ssim(&neg, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn taped_ssim_matches_plain() {
        let a = ramp(23, 17);
        let mut b = ramp(23, 17);
        b.rgb.iter_mut().enumerate().for_each(|(i, v)| *v = (*v * 0.8 + (i % 5) as f64 * 0.03).min(1.0));
        let tape = Tape::new();
        let x = tape.constant(a.to_tensor());
        let s = ssim_var(x, &b).unwrap().item();
        assert!((s - ssim(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let a = ramp(16, 16);
        assert_eq!(rendering_loss(&a, &a, 0.2).unwrap(), 0.0);
        let mut gt = RenderedImage::black(16, 16);
        gt.rgb.iter_mut().for_each(|v| *v = 0.3);
        let mut pred = gt.clone();
        pred.rgb.iter_mut().for_each(|v| *v += 0.1);
        assert!((rendering_loss(&pred, &gt, 0.0).unwrap() - 0.1).abs() < 1e-12);
        let tape = Tape::new();
        let x = tape.constant(pred.to_tensor());
        let l = rendering_loss_var(x, &gt, 0.2).unwrap().item();
        assert!((l - rendering_loss(&pred, &gt, 0.2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kmeans_examples() {
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|x| vec![*x]).collect();
        let km = kmeans(&pts, 2, 0).unwrap();
        assert_eq!(km.labels[0], km.labels[1]);
        assert_eq!(km.labels[2], km.labels[3]);
        assert_ne!(km.labels[0], km.labels[2]);
        let all = kmeans(&pts, 4, 1).unwrap();
        assert_eq!(*all.inertia.last().unwrap(), 0.0);
        assert!(kmeans(&pts, 5, 0).is_err());
    }

    #[test]
    fn hungarian_finds_minimum() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        assert_eq!(hungarian(&cost), vec![1, 0, 2]);
    }

    #[test]
    fn segmentation_examples() {
        let gt = [0, 0, 1, 1, 2, 2];
        let s = segmentation_scores(&gt, &gt).unwrap();
        assert_eq!((s.miou, s.precision, s.recall, s.f1), (1.0, 1.0, 1.0, 1.0));
        let perm = [2, 2, 0, 0, 1, 1];
        assert_eq!(segmentation_scores(&perm, &gt).unwrap(), s);
        // One class absorbed into the other: IoU 1/2 on the surviving pair.
        let bin = [0, 0, 1, 1];
        let s = segmentation_scores(&[0, 0, 0, 0], &bin).unwrap();
        assert!((s.miou - 0.25).abs() < 1e-15);
    }

    #[test]
    fn timestamps_are_uniform() {
        let t = sample_timestamps(0.0, 1.32, SIGNATURE_TIMESTAMPS);
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.0);
        assert!((t[9] - 1.32).abs() < 1e-15);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 1.32 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            scene: "cube".into(),
            task: "segment".into(),
            miou: Some(1.0),
            ..Default::default()
        };
        assert_eq!(MetricsRow::from_csv(&row.to_csv()).unwrap(), row);
    }
}
