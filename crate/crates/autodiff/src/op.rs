//! Primitive operations: forward kernels and their vector-Jacobian products.

use std::fmt;
use std::rc::Rc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, TensorError};
use crate::linalg;
use crate::tensor::{
    broadcast_shape, broadcast_strides, for_each_index, numel, reduce_to_shape, Tensor,
};

/// A fused operation with a hand-written backward rule.
///
/// Implementors must make `backward` the exact adjoint of `forward`;
/// the tape treats both as opaque.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Gradients with respect to each input, `None` for inputs that
    /// receive no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Debug)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    Sin,
    Cos,
    Square,
    Scale(f64),
    Offset(f64),
    Clamp { lo: f64, hi: f64 },
    /// Matrix product over the last two axes; rank-3 operands carry a
    /// batch axis that broadcasts when its size is one or absent.
    MatMul,
    /// Swap of the last two axes.
    Transpose,
    Reshape(Vec<usize>),
    Sum,
    Mean,
    SumAxis(usize),
    /// Rows of the input along axis 0.
    Gather(Rc<[usize]>),
    /// `base` with `src[i]` added into row `index[i]`.
    ScatterAdd(Rc<[usize]>),
    SliceLast { start: usize, end: usize },
    ConcatLast,
    /// Cross product over a trailing axis of size 3.
    Cross,
    Det3,
    Inv3,
    /// Rotation factor of the polar decomposition of each 3×3 block.
    PolarRotation,
    Custom(Rc<dyn CustomOp>),
}

impl Op {
    pub fn name(&self) -> &str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Square => "square",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Clamp { .. } => "clamp",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis(_) => "sum_axis",
            Op::Gather(_) => "gather",
            Op::ScatterAdd(_) => "scatter_add",
            Op::SliceLast { .. } => "slice_last",
            Op::ConcatLast => "concat_last",
            Op::Cross => "cross",
            Op::Det3 => "det3",
            Op::Inv3 => "inv3",
            Op::PolarRotation => "polar_rotation",
            Op::Custom(c) => c.name(),
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul | Op::Cross | Op::ScatterAdd(_) => {
                Some(2)
            }
            Op::ConcatLast | Op::Custom(_) => None,
            _ => Some(1),
        }
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        match self.arity() {
            Some(k) if k != n => Err(TensorError::Arity {
                op: static_name(self),
                expected: k,
                got: n,
            }),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_arity(inputs.len())?;
        let x = inputs.first().copied();
        let unary = |f: fn(f64) -> f64| Ok(x.unwrap().map(f));
        match self {
            Op::Add => binary("add", inputs[0], inputs[1], |a, b| a + b),
            Op::Sub => binary("sub", inputs[0], inputs[1], |a, b| a - b),
            Op::Mul => binary("mul", inputs[0], inputs[1], |a, b| a * b),
            Op::Div => binary("div", inputs[0], inputs[1], |a, b| a / b),
            Op::Neg => unary(|v| -v),
            Op::Exp => unary(f64::exp),
            Op::Ln => unary(f64::ln),
            Op::Sqrt => unary(f64::sqrt),
            Op::Tanh => unary(f64::tanh),
            Op::Sigmoid => unary(sigmoid),
            Op::Softplus => unary(softplus),
            Op::Sin => unary(f64::sin),
            Op::Cos => unary(f64::cos),
            Op::Square => unary(|v| v * v),
            Op::Scale(c) => Ok(x.unwrap().map(|v| v * c)),
            Op::Offset(c) => Ok(x.unwrap().map(|v| v + c)),
            Op::Clamp { lo, hi } => Ok(x.unwrap().map(|v| v.clamp(*lo, *hi))),
            Op::MatMul => matmul(inputs[0], inputs[1]),
            Op::Transpose => transpose(inputs[0]),
            Op::Reshape(shape) => inputs[0].reshape(shape.clone()),
            Op::Sum => Ok(Tensor::scalar(inputs[0].sum())),
            Op::Mean => {
                let t = inputs[0];
                Ok(Tensor::scalar(t.sum() / t.len().max(1) as f64))
            }
            Op::SumAxis(axis) => sum_axis(inputs[0], *axis),
            Op::Gather(index) => gather(inputs[0], index),
            Op::ScatterAdd(index) => scatter_add(inputs[0], inputs[1], index),
            Op::SliceLast { start, end } => slice_last(inputs[0], *start, *end),
            Op::ConcatLast => concat_last(inputs),
            Op::Cross => cross(inputs[0], inputs[1]),
            Op::Det3 => det3(inputs[0]),
            Op::Inv3 => inv3(inputs[0]),
            Op::PolarRotation => polar_rotation(inputs[0]),
            Op::Custom(c) => c.forward(inputs),
        }
    }

    /// Vector-Jacobian product: given `grad = ∂L/∂output`, the gradient
    /// with respect to each input.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let unary = |f: &dyn Fn(f64, f64, f64) -> f64| -> Result<Vec<Option<Tensor>>> {
            let x = inputs[0];
            let data = x
                .data()
                .iter()
                .zip(output.data())
                .zip(grad.data())
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect();
            Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
        };
        match self {
            Op::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                Ok(vec![
                    Some(reduce_to_shape(grad, a.shape())),
                    Some(reduce_to_shape(grad, b.shape())),
                ])
            }
            Op::Sub => {
                let (a, b) = (inputs[0], inputs[1]);
                Ok(vec![
                    Some(reduce_to_shape(grad, a.shape())),
                    Some(reduce_to_shape(&grad.map(|g| -g), b.shape())),
                ])
            }
            Op::Mul => binary_grads(inputs[0], inputs[1], grad, |_, b, g| g * b, |a, _, g| g * a),
            Op::Div => binary_grads(
                inputs[0],
                inputs[1],
                grad,
                |_, b, g| g / b,
                |a, b, g| -g * a / (b * b),
            ),
            Op::Neg => unary(&|_, _, g| -g),
            Op::Exp => unary(&|_, y, g| g * y),
            Op::Ln => unary(&|x, _, g| g / x),
            Op::Sqrt => unary(&|_, y, g| g * 0.5 / y),
            Op::Tanh => unary(&|_, y, g| g * (1.0 - y * y)),
            Op::Sigmoid => unary(&|_, y, g| g * y * (1.0 - y)),
            Op::Softplus => unary(&|x, _, g| g * sigmoid(x)),
            Op::Sin => unary(&|x, _, g| g * x.cos()),
            Op::Cos => unary(&|x, _, g| -g * x.sin()),
            Op::Square => unary(&|x, _, g| 2.0 * g * x),
            Op::Scale(c) => unary(&|_, _, g| g * c),
            Op::Offset(_) => unary(&|_, _, g| g),
            Op::Clamp { lo, hi } => unary(&|x, _, g| if x > *lo && x < *hi { g } else { 0.0 }),
            Op::MatMul => matmul_backward(inputs[0], inputs[1], grad),
            Op::Transpose => Ok(vec![Some(transpose(grad)?)]),
            Op::Reshape(_) => Ok(vec![Some(grad.reshape(inputs[0].shape().to_vec())?)]),
            Op::Sum => Ok(vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()))]),
            Op::Mean => {
                let n = inputs[0].len().max(1) as f64;
                Ok(vec![Some(Tensor::full(
                    inputs[0].shape().to_vec(),
                    grad.item() / n,
                ))])
            }
            Op::SumAxis(axis) => Ok(vec![Some(expand_axis(grad, inputs[0].shape(), *axis))]),
            Op::Gather(index) => {
                let x = inputs[0];
                let base = Tensor::zeros(x.shape().to_vec());
                Ok(vec![Some(scatter_add(&base, grad, index)?)])
            }
            Op::ScatterAdd(index) => Ok(vec![Some(grad.clone()), Some(gather(grad, index)?)]),
            Op::SliceLast { start, end } => {
                let x = inputs[0];
                let n = *x.shape().last().unwrap();
                let w = end - start;
                let rows = x.len() / n.max(1);
                let mut data = vec![0.0; x.len()];
                for r in 0..rows {
                    data[r * n + start..r * n + end]
                        .copy_from_slice(&grad.data()[r * w..(r + 1) * w]);
                }
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            Op::ConcatLast => {
                let mut out = Vec::with_capacity(inputs.len());
                let mut start = 0;
                for x in inputs {
                    let w = *x.shape().last().unwrap();
                    out.push(Some(slice_last(grad, start, start + w)?));
                    start += w;
                }
                Ok(out)
            }
            Op::Cross => {
                // d(a×b) = da×b + a×db
                let (a, b) = (inputs[0], inputs[1]);
                Ok(vec![Some(cross(b, grad)?), Some(cross(grad, a)?)])
            }
            Op::Det3 => {
                let x = inputs[0];
                let mut data = vec![0.0; x.len()];
                for (i, block) in x.data().chunks(9).enumerate() {
                    let cof = linalg::cofactor(&linalg::mat3_from(block));
                    let g = grad.data()[i];
                    linalg::mat3_write(&(cof * g), &mut data[9 * i..9 * i + 9]);
                }
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            Op::Inv3 => {
                let x = inputs[0];
                let mut data = vec![0.0; x.len()];
                for (i, block) in output.data().chunks(9).enumerate() {
                    let inv_t = linalg::mat3_from(block).transpose();
                    let g = linalg::mat3_from(&grad.data()[9 * i..]);
                    linalg::mat3_write(&(-(inv_t * g * inv_t)), &mut data[9 * i..9 * i + 9]);
                }
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            Op::PolarRotation => {
                let x = inputs[0];
                let mut data = vec![0.0; x.len()];
                for (i, block) in x.data().chunks(9).enumerate() {
                    let f = linalg::mat3_from(block);
                    let r = linalg::mat3_from(&output.data()[9 * i..]);
                    let g = linalg::mat3_from(&grad.data()[9 * i..]);
                    let fb = linalg::polar_rotation_adjoint(&f, &r, &g);
                    linalg::mat3_write(&fb, &mut data[9 * i..9 * i + 9]);
                }
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            Op::Custom(c) => c.backward(inputs, output, grad),
        }
    }
}

fn static_name(op: &Op) -> &'static str {
    match op {
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Div => "div",
        Op::MatMul => "matmul",
        Op::Cross => "cross",
        Op::ScatterAdd(_) => "scatter_add",
        _ => "unary",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; numel(&out)];
    for_each_index(&out, |flat, idx| {
        let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        data[flat] = f(a.data()[ia], b.data()[ib]);
    });
    Tensor::new(out, data)
}

fn binary_grads(
    a: &Tensor,
    b: &Tensor,
    grad: &Tensor,
    da: impl Fn(f64, f64, f64) -> f64,
    db: impl Fn(f64, f64, f64) -> f64,
) -> Result<Vec<Option<Tensor>>> {
    if a.shape() == b.shape() {
        let mut ga = Vec::with_capacity(a.len());
        let mut gb = Vec::with_capacity(a.len());
        for ((&x, &y), &g) in a.data().iter().zip(b.data()).zip(grad.data()) {
            ga.push(da(x, y, g));
            gb.push(db(x, y, g));
        }
        return Ok(vec![
            Some(Tensor::new(a.shape().to_vec(), ga)?),
            Some(Tensor::new(b.shape().to_vec(), gb)?),
        ]);
    }
    let out = grad.shape().to_vec();
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for_each_index(&out, |flat, idx| {
        let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        let (x, y, g) = (a.data()[ia], b.data()[ib], grad.data()[flat]);
        ga[ia] += da(x, y, g);
        gb[ib] += db(x, y, g);
    });
    Ok(vec![
        Some(Tensor::new(a.shape().to_vec(), ga)?),
        Some(Tensor::new(b.shape().to_vec(), gb)?),
    ])
}

struct MatMulDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<MatMulDims> {
    let err = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let split = |s: &[usize]| -> Option<(usize, usize, usize, bool)> {
        match *s {
            [r, c] => Some((1, r, c, false)),
            [bt, r, c] => Some((bt, r, c, true)),
            _ => None,
        }
    };
    let (ba, m, k, a3) = split(a.shape()).ok_or_else(err)?;
    let (bb, k2, n, b3) = split(b.shape()).ok_or_else(err)?;
    if k != k2 || (ba != bb && ba != 1 && bb != 1) {
        return Err(err());
    }
    let batch = ba.max(bb);
    let out_shape = if a3 || b3 { vec![batch, m, n] } else { vec![m, n] };
    Ok(MatMulDims {
        batch,
        a_batched: ba > 1 || (ba == batch && a3),
        b_batched: bb > 1 || (bb == batch && b3),
        m,
        k,
        n,
        out_shape,
    })
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a, b)?;
    let (m, k, n) = (d.m, d.k, d.n);
    let mut out = vec![0.0; d.batch * m * n];
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * m * k } else { 0 };
        let bo = if d.b_batched { bi * k * n } else { 0 };
        let ad = &a.data()[ao..ao + m * k];
        let bd = &b.data()[bo..bo + k * n];
        let od = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let row = &bd[p * n..(p + 1) * n];
                for (o, &bv) in od[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::new(d.out_shape, out)
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let d = matmul_dims(a, b)?;
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for bi in 0..d.batch {
        let ao = if d.a_batched { bi * m * k } else { 0 };
        let bo = if d.b_batched { bi * k * n } else { 0 };
        let g = &grad.data()[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for p in 0..k {
                let mut acc_a = 0.0;
                for j in 0..n {
                    acc_a += g[i * n + j] * b.data()[bo + p * n + j];
                    gb[bo + p * n + j] += a.data()[ao + i * k + p] * g[i * n + j];
                }
                ga[ao + i * k + p] += acc_a;
            }
        }
    }
    Ok(vec![
        Some(Tensor::new(a.shape().to_vec(), ga)?),
        Some(Tensor::new(b.shape().to_vec(), gb)?),
    ])
}

fn transpose(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(TensorError::InvalidShape {
            op: "transpose",
            shape: s.to_vec(),
            reason: "rank must be at least 2",
        });
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.len() / (r * c).max(1);
    let mut data = vec![0.0; x.len()];
    for bi in 0..batch {
        let o = bi * r * c;
        for i in 0..r {
            for j in 0..c {
                data[o + j * r + i] = x.data()[o + i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let l = shape.len();
    shape.swap(l - 1, l - 2);
    Tensor::new(shape, data)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::InvalidShape {
            op: "sum_axis",
            shape: x.shape().to_vec(),
            reason: "axis out of range",
        });
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..n {
            for j in 0..inner {
                data[o * inner + j] += x.data()[(o * n + i) * inner + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::new(shape, data)
}

fn expand_axis(grad: &Tensor, shape: &[usize], axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut data = vec![0.0; numel(shape)];
    for o in 0..outer {
        for i in 0..n {
            for j in 0..inner {
                data[(o * n + i) * inner + j] = grad.data()[o * inner + j];
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("expand_axis shape")
}

fn row_len(x: &Tensor, op: &'static str) -> Result<usize> {
    if x.rank() == 0 {
        return Err(TensorError::InvalidShape {
            op,
            shape: vec![],
            reason: "rank must be at least 1",
        });
    }
    Ok(numel(&x.shape()[1..]))
}

fn gather(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    let inner = row_len(x, "gather")?;
    let rows = x.shape()[0];
    let mut data = Vec::with_capacity(index.len() * inner);
    for &i in index {
        if i >= rows {
            return Err(TensorError::IndexOutOfRange {
                op: "gather",
                index: i,
                size: rows,
            });
        }
        data.extend_from_slice(&x.data()[i * inner..(i + 1) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = index.len();
    Tensor::new(shape, data)
}

fn scatter_add(base: &Tensor, src: &Tensor, index: &[usize]) -> Result<Tensor> {
    let inner = row_len(base, "scatter_add")?;
    if src.rank() == 0 || src.shape()[0] != index.len() || src.shape()[1..] != base.shape()[1..] {
        return Err(TensorError::ShapeMismatch {
            op: "scatter_add",
            lhs: base.shape().to_vec(),
            rhs: src.shape().to_vec(),
        });
    }
    let rows = base.shape()[0];
    let mut out = base.clone();
    let data = out.data_mut();
    for (k, &i) in index.iter().enumerate() {
        if i >= rows {
            return Err(TensorError::IndexOutOfRange {
                op: "scatter_add",
                index: i,
                size: rows,
            });
        }
        for j in 0..inner {
            data[i * inner + j] += src.data()[k * inner + j];
        }
    }
    Ok(out)
}

fn slice_last(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let n = *x.shape().last().ok_or(TensorError::InvalidShape {
        op: "slice_last",
        shape: vec![],
        reason: "rank must be at least 1",
    })?;
    if start > end || end > n {
        return Err(TensorError::InvalidShape {
            op: "slice_last",
            shape: x.shape().to_vec(),
            reason: "slice bounds exceed last axis",
        });
    }
    let rows = x.len() / n.max(1);
    let w = end - start;
    let mut data = Vec::with_capacity(rows * w);
    for r in 0..rows {
        data.extend_from_slice(&x.data()[r * n + start..r * n + end]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = w;
    Tensor::new(shape, data)
}

fn concat_last(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs.first().ok_or(TensorError::Arity {
        op: "concat_last",
        expected: 1,
        got: 0,
    })?;
    let lead = &first.shape()[..first.rank().saturating_sub(1)];
    for x in inputs {
        if x.rank() == 0 || &x.shape()[..x.rank() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
    }
    let rows = numel(lead);
    let widths: Vec<usize> = inputs.iter().map(|x| *x.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (x, &w) in inputs.iter().zip(&widths) {
            data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape().last() != Some(&3) {
        return Err(TensorError::ShapeMismatch {
            op: "cross",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = vec![0.0; a.len()];
    for ((o, x), y) in data
        .chunks_mut(3)
        .zip(a.data().chunks(3))
        .zip(b.data().chunks(3))
    {
        let c = Vector3::new(x[0], x[1], x[2]).cross(&Vector3::new(y[0], y[1], y[2]));
        o.copy_from_slice(c.as_slice());
    }
    Tensor::new(a.shape().to_vec(), data)
}

fn check_mat3(op: &'static str, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.len() < 2 || s[s.len() - 1] != 3 || s[s.len() - 2] != 3 {
        return Err(TensorError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "trailing axes must be 3×3",
        });
    }
    Ok(())
}

fn det3(x: &Tensor) -> Result<Tensor> {
    check_mat3("det3", x)?;
    let data = x
        .data()
        .chunks(9)
        .map(|b| linalg::mat3_from(b).determinant())
        .collect();
    Tensor::new(x.shape()[..x.rank() - 2].to_vec(), data)
}

fn inv3(x: &Tensor) -> Result<Tensor> {
    check_mat3("inv3", x)?;
    let mut data = vec![0.0; x.len()];
    for (i, b) in x.data().chunks(9).enumerate() {
        let m: Matrix3<f64> = linalg::mat3_from(b);
        let inv = m
            .try_inverse()
            .ok_or(TensorError::Singular { op: "inv3", index: i })?;
        linalg::mat3_write(&inv, &mut data[9 * i..9 * i + 9]);
    }
    Tensor::new(x.shape().to_vec(), data)
}

fn polar_rotation(x: &Tensor) -> Result<Tensor> {
    check_mat3("polar_rotation", x)?;
    let mut data = vec![0.0; x.len()];
    for (i, b) in x.data().chunks(9).enumerate() {
        let f = linalg::mat3_from(b);
        let r = linalg::polar_rotation(&f).ok_or(TensorError::InvertedElement {
            op: "polar_rotation",
            det: f.determinant(),
            index: i,
        })?;
        linalg::mat3_write(&r, &mut data[9 * i..9 * i + 9]);
    }
    Tensor::new(x.shape().to_vec(), data)
}
