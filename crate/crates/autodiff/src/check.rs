//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − b| / max(1, |a|, |b|)`: relative error with an absolute floor so
/// near-zero gradients are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Central differences of a scalar function of several tensors.
pub fn finite_difference<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].shape().to_vec());
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = f(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = f(&work)?;
            work[k].data_mut()[i] = x0;
            g.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub max_relative_error: f64,
}

/// Compare reverse-mode gradients of `build` against central differences.
///
/// `build` receives one leaf per input and returns a scalar loss; it is
/// re-run on fresh tapes for the perturbed evaluations.
pub fn gradcheck<F>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| grads.wrt(l).clone()).collect();

    let numeric = finite_difference(
        |xs| {
            let tape = Tape::new();
            let leaves: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
            Ok(build(&tape, &leaves)?.item())
        },
        inputs,
        h,
    )?;
    let mut max_relative_error: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            max_relative_error = max_relative_error.max(relative_error(x, y));
        }
    }
    Ok(GradCheck {
        analytic,
        numeric,
        max_relative_error,
    })
}

/// One primitive-operation gradient check: random inputs in the op's
/// domain and a randomly weighted sum of its output as the loss.
pub struct PrimitiveCase {
    pub name: &'static str,
    /// Input shapes.
    pub shapes: Vec<Vec<usize>>,
    /// Sampler for one input coordinate, given a uniform draw in [−1, 1]
    /// and the input position.
    pub domain: fn(f64, usize) -> f64,
    pub build: for<'t> fn(&[Var<'t>]) -> Result<Var<'t>>,
}

fn unit(x: f64, _: usize) -> f64 {
    x
}

fn positive(x: f64, _: usize) -> f64 {
    0.6 + 0.4 * x
}

fn denominator(x: f64, k: usize) -> f64 {
    if k == 1 {
        x.signum() * (0.5 + x.abs())
    } else {
        x
    }
}

fn near_identity(x: f64, _: usize) -> f64 {
    0.3 * x
}

fn eye_plus<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let shape = v.shape();
    let batch = shape[0];
    let mut eye = vec![0.0; batch * 9];
    for b in 0..batch {
        for i in 0..3 {
            eye[9 * b + 4 * i] = 1.0;
        }
    }
    let eye = v.tape().constant(Tensor::new(shape, eye)?);
    v.add(eye)
}

/// Every primitive operation with a representative input configuration.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    use crate::op::Op;
    use std::rc::Rc;
    fn s(v: &[&[usize]]) -> Vec<Vec<usize>> {
        v.iter().map(|x| x.to_vec()).collect()
    }
    vec![
        PrimitiveCase { name: "add", shapes: s(&[&[2, 3], &[3]]), domain: unit, build: |x| x[0].add(x[1]) },
        PrimitiveCase { name: "sub", shapes: s(&[&[3, 1], &[1, 4]]), domain: unit, build: |x| x[0].sub(x[1]) },
        PrimitiveCase { name: "mul", shapes: s(&[&[2, 3], &[2, 1]]), domain: unit, build: |x| x[0].mul(x[1]) },
        PrimitiveCase { name: "div", shapes: s(&[&[4], &[4]]), domain: denominator, build: |x| x[0].div(x[1]) },
        PrimitiveCase { name: "neg", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].neg() },
        PrimitiveCase { name: "exp", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].exp() },
        PrimitiveCase { name: "ln", shapes: s(&[&[5]]), domain: positive, build: |x| x[0].ln() },
        PrimitiveCase { name: "sqrt", shapes: s(&[&[5]]), domain: positive, build: |x| x[0].sqrt() },
        PrimitiveCase { name: "tanh", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].tanh() },
        PrimitiveCase { name: "sigmoid", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].sigmoid() },
        PrimitiveCase { name: "softplus", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].softplus() },
        PrimitiveCase { name: "sin", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].sin() },
        PrimitiveCase { name: "cos", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].cos() },
        PrimitiveCase { name: "square", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].square() },
        PrimitiveCase { name: "scale", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].scale(-2.5) },
        PrimitiveCase { name: "offset", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].offset(0.7) },
        PrimitiveCase { name: "clamp", shapes: s(&[&[5]]), domain: unit, build: |x| x[0].clamp(-0.5, 0.5) },
        PrimitiveCase { name: "matmul", shapes: s(&[&[3, 4], &[4, 2]]), domain: unit, build: |x| x[0].matmul(x[1]) },
        PrimitiveCase { name: "matmul_batched", shapes: s(&[&[4, 3, 3], &[4, 3, 2]]), domain: unit, build: |x| x[0].matmul(x[1]) },
        PrimitiveCase { name: "matmul_broadcast", shapes: s(&[&[2, 3], &[4, 3, 2]]), domain: unit, build: |x| x[0].matmul(x[1]) },
        PrimitiveCase { name: "transpose", shapes: s(&[&[2, 3, 4]]), domain: unit, build: |x| x[0].transpose() },
        PrimitiveCase { name: "reshape", shapes: s(&[&[2, 6]]), domain: unit, build: |x| x[0].reshape([3, 4]) },
        PrimitiveCase { name: "sum", shapes: s(&[&[2, 3]]), domain: unit, build: |x| x[0].sum() },
        PrimitiveCase { name: "mean", shapes: s(&[&[2, 3]]), domain: unit, build: |x| x[0].mean() },
        PrimitiveCase { name: "sum_axis", shapes: s(&[&[2, 3, 4]]), domain: unit, build: |x| x[0].sum_axis(1) },
        PrimitiveCase { name: "gather", shapes: s(&[&[5, 3]]), domain: unit, build: |x| x[0].gather(vec![4, 0, 4, 2]) },
        PrimitiveCase {
            name: "scatter_add",
            shapes: s(&[&[5, 2], &[3, 2]]),
            domain: unit,
            build: |x| x[0].tape().apply(Op::ScatterAdd(Rc::from(vec![1, 1, 4])), &[x[0], x[1]]),
        },
        PrimitiveCase { name: "slice_last", shapes: s(&[&[3, 5]]), domain: unit, build: |x| x[0].slice_last(1, 4) },
        PrimitiveCase { name: "concat_last", shapes: s(&[&[3, 2], &[3, 1]]), domain: unit, build: |x| Var::concat_last(&[x[0], x[1]]) },
        PrimitiveCase { name: "cross", shapes: s(&[&[4, 3], &[4, 3]]), domain: unit, build: |x| x[0].cross(x[1]) },
        PrimitiveCase { name: "det3", shapes: s(&[&[3, 3, 3]]), domain: unit, build: |x| x[0].det3() },
        PrimitiveCase { name: "inv3", shapes: s(&[&[3, 3, 3]]), domain: near_identity, build: |x| eye_plus(x[0])?.inv3() },
        PrimitiveCase {
            name: "polar_rotation",
            shapes: s(&[&[3, 3, 3]]),
            domain: near_identity,
            build: |x| eye_plus(x[0])?.polar_rotation(),
        },
    ]
}

/// Run `trials` random gradient checks of `case`; returns the worst
/// relative error seen.
pub fn run_case(case: &PrimitiveCase, trials: usize, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inputs: Vec<Tensor> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(k, shape)| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| (case.domain)(rng.gen_range(-1.0..1.0), k)).collect();
                Tensor::new(shape.clone(), data)
            })
            .collect::<Result<_>>()?;
        let probe = {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            (case.build)(&vars)?.shape()
        };
        let n: usize = probe.iter().product();
        let weights = Tensor::new(probe, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let build = case.build;
        let report = gradcheck(
            |tape, vars| {
                let y = build(vars)?;
                y.mul(tape.constant(weights.clone()))?.sum()
            },
            &inputs,
            DEFAULT_STEP,
        )?;
        worst = worst.max(report.max_relative_error);
    }
    Ok(worst)
}
