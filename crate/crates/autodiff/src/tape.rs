use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::op::{CustomOp, Op};
use crate::tensor::Tensor;

#[derive(Debug)]
enum NodeKind {
    Leaf,
    Constant,
    Apply { op: Op, parents: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    kind: NodeKind,
    requires_grad: bool,
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended as operations are applied, so every node's parents
/// precede it and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input; `backward` reports a gradient for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            kind: NodeKind::Leaf,
            requires_grad: true,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            kind: NodeKind::Constant,
            requires_grad: false,
        })
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Apply `op` to `inputs` and record the result.
    pub fn apply<'t>(&'t self, op: Op, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = op.forward(&refs)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(Node {
            value: Rc::new(out),
            kind: NodeKind::Apply {
                op,
                parents: inputs.iter().map(|v| v.id).collect(),
            },
            requires_grad,
        }))
    }

    pub fn custom<'t>(&'t self, op: Rc<dyn CustomOp>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        self.apply(Op::Custom(op), inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape().to_vec(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let NodeKind::Apply { op, parents } = &node.kind else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let parent_grads = op.backward(&inputs, &node.value, &g)?;
            for (&p, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.accumulate(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let mut leaves = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.kind, NodeKind::Leaf) {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                leaves.push((id, g));
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradients of a loss with respect to every leaf on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(usize, Tensor)>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` if it was not created with
    /// [`Tape::leaf`].
    pub fn get(&self, leaf: Var<'_>) -> Option<&Tensor> {
        self.leaves
            .binary_search_by_key(&leaf.id, |(id, _)| *id)
            .ok()
            .map(|i| &self.leaves[i].1)
    }

    pub fn wrt(&self, leaf: Var<'_>) -> &Tensor {
        self.get(leaf).expect("gradient requested for a non-leaf variable")
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

macro_rules! unary_methods {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(
            pub fn $name(self) -> Result<Var<'t>> {
                self.tape.apply($op, &[self])
            }
        )*
    };
}

macro_rules! binary_methods {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(
            pub fn $name(self, other: Var<'t>) -> Result<Var<'t>> {
                self.tape.apply($op, &[self, other])
            }
        )*
    };
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    unary_methods! {
        neg => Op::Neg,
        exp => Op::Exp,
        ln => Op::Ln,
        sqrt => Op::Sqrt,
        tanh => Op::Tanh,
        sigmoid => Op::Sigmoid,
        softplus => Op::Softplus,
        sin => Op::Sin,
        cos => Op::Cos,
        square => Op::Square,
        transpose => Op::Transpose,
        sum => Op::Sum,
        mean => Op::Mean,
        det3 => Op::Det3,
        inv3 => Op::Inv3,
        polar_rotation => Op::PolarRotation,
    }

    binary_methods! {
        add => Op::Add,
        sub => Op::Sub,
        mul => Op::Mul,
        div => Op::Div,
        matmul => Op::MatMul,
        cross => Op::Cross,
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.tape.apply(Op::Scale(c), &[self])
    }

    pub fn offset(self, c: f64) -> Result<Var<'t>> {
        self.tape.apply(Op::Offset(c), &[self])
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.tape.apply(Op::Clamp { lo, hi }, &[self])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        self.tape.apply(Op::Reshape(shape.into()), &[self])
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.tape.apply(Op::SumAxis(axis), &[self])
    }

    pub fn gather(self, index: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        self.tape.apply(Op::Gather(index.into()), &[self])
    }

    /// `self` with `src[i]` added into row `index[i]`.
    pub fn scatter_add(self, src: Var<'t>, index: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        self.tape.apply(Op::ScatterAdd(index.into()), &[self, src])
    }

    pub fn slice_last(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.tape.apply(Op::SliceLast { start, end }, &[self])
    }

    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or(TensorError::Arity {
                op: "concat_last",
                expected: 1,
                got: 0,
            })?
            .tape;
        tape.apply(Op::ConcatLast, parts)
    }

    /// `(R, S)` with `F = R S`, `R` orthogonal, `S` symmetric, applied to
    /// every trailing 3×3 block.
    pub fn polar_decompose(self) -> Result<(Var<'t>, Var<'t>)> {
        let r = self.polar_rotation()?;
        let s = r.transpose()?.matmul(self)?;
        Ok((r, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.scalar(5.0);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn exp_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let g = tape.backward(x.exp().unwrap()).unwrap();
        assert_eq!(g.wrt(x).item(), 1.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x * x + x, dy/dx = 2x + 1
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 4.0);
    }

    #[test]
    fn untouched_leaf_gets_zeros_of_its_shape() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::ones([2, 3]));
        let g = tape.backward(x.square().unwrap()).unwrap();
        assert_eq!(g.wrt(unused).shape(), &[2, 3]);
        assert!(g.wrt(unused).data().iter().all(|&v| v == 0.0));
    }
}
