//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node that owns its output and records the
//! operands its backward rule needs. Nodes are appended in topological
//! order, so the backward pass is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{
    self, batchnorm2d_backward, batchnorm2d_with, conv2d, conv2d_backward, invert_perm,
    l1_loss, l1_loss_backward, mul_broadcast, mul_broadcast_backward, permute, pixel_shuffle,
    pixel_unshuffle, reduce_pool_backward, reduce_pool_indexed, ConvSpec, Pointwise,
    PoolIndices, PoolKind, RunningStats, Scalar, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a node computed, plus the operands its backward rule reads.
#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Pointwise {
        x: Var,
        kind: Pointwise,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        indices: PoolIndices,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    PixelShuffle {
        x: Var,
        scale: usize,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    MulBroadcast {
        x: Var,
        w: Var,
    },
    Mean(Vec<Var>),
    L1 {
        pred: Var,
        target: Var,
    },
    Project {
        x: Var,
        weights: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm node.
#[derive(Clone, Debug)]
pub struct BatchStats<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient will be reported.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv2d(
            self.value(x),
            &spec,
            self.value(w),
            b.map(|b| self.value(b)),
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv { x, w, b, spec }, rg, "conv2d")
    }

    pub fn pointwise(&mut self, x: Var, kind: Pointwise) -> Result<Var> {
        let out = tensor::pointwise(self.value(x), kind);
        let rg = self.rg(x);
        self.push(out, Op::Pointwise { x, kind }, rg, "pointwise")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::Sigmoid)
    }

    /// Batch norm; `running = None` normalizes with batch statistics,
    /// which are returned so the caller can update its running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<&RunningStats<T>>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let fwd = batchnorm2d_with(self.value(x), self.value(gamma), self.value(beta), eps, running)?;
        let batch_stats = running.is_none();
        let stats = batch_stats.then(|| BatchStats {
            mean: fwd.mean.clone(),
            var: fwd.var.clone(),
        });
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: fwd.mean,
                inv_std: fwd.inv_std,
                batch_stats,
            },
            rg,
            "batchnorm2d",
        )?;
        Ok((v, stats))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (out, indices) = reduce_pool_indexed(self.value(x), kind)?;
        let rg = self.rg(x);
        self.push(out, Op::Pool { x, kind, indices }, rg, "reduce_pool")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = permute(self.value(x), perm)?;
        let rg = self.rg(x);
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
            "permute",
        )
    }

    pub fn pixel_shuffle(&mut self, x: Var, scale: usize) -> Result<Var> {
        let out = pixel_shuffle(self.value(x), scale)?;
        let rg = self.rg(x);
        self.push(out, Op::PixelShuffle { x, scale }, rg, "pixel_shuffle")
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = tensor::concat_channels(&vals)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(out, Op::Concat(xs.to_vec()), rg, "concat")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn mul_broadcast(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = mul_broadcast(self.value(x), self.value(w))?;
        let rg = self.rg(x) || self.rg(w);
        self.push(out, Op::MulBroadcast { x, w }, rg, "mul_broadcast")
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = tensor::mean_of(&vals)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(out, Op::Mean(xs.to_vec()), rg, "mean")
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = l1_loss(self.value(pred), self.value(target))?;
        let rg = self.rg(pred) || self.rg(target);
        self.push(Tensor::scalar(loss), Op::L1 { pred, target }, rg, "l1_loss")
    }

    /// Scalar `sum(x * weights)`, used to reduce non-scalar outputs.
    pub fn project(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("project", "weight count differs from input"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::zero(), |a, (&v, &w)| a + v * w);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Project { x, weights }, rg, "project")
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward", "output must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.accumulate(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                }
                Op::Conv { x, w, b, spec } => {
                    let g = conv2d_backward(
                        self.value(*x),
                        spec,
                        self.value(*w),
                        &dy,
                        self.rg(*x),
                        self.rg(*w),
                        b.is_some_and(|b| self.rg(b)),
                    )?;
                    if let Some(gx) = g.input {
                        acc(&mut grads, *x, gx);
                    }
                    if let Some(gw) = g.weight {
                        acc(&mut grads, *w, gw);
                    }
                    if let (Some(b), Some(gb)) = (b, g.bias) {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Pointwise { x, kind } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(dy.data())
                        .map(|((&xi, &yi), &g)| g * kind.derivative(xi, yi))
                        .collect();
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), data)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let (gx, gg, gb) = batchnorm2d_backward(
                        self.value(*x),
                        self.value(*gamma),
                        mean,
                        inv_std,
                        &dy,
                        *batch_stats,
                    )?;
                    if self.rg(*x) {
                        acc(&mut grads, *x, gx);
                    }
                    if self.rg(*gamma) {
                        acc(&mut grads, *gamma, gg);
                    }
                    if self.rg(*beta) {
                        acc(&mut grads, *beta, gb);
                    }
                }
                Op::Pool { x, kind, indices } => {
                    let gx = reduce_pool_backward(self.value(*x), *kind, indices, &dy)?;
                    acc(&mut grads, *x, gx);
                }
                Op::Permute { x, perm } => {
                    let gx = permute(&dy, &invert_perm(perm))?;
                    acc(&mut grads, *x, gx);
                }
                Op::PixelShuffle { x, scale } => {
                    let gx = pixel_unshuffle(&dy, *scale)?.reshape(self.value(*x).shape())?;
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(xs) => {
                    let [n, total, h, w] = dy.dims4()?;
                    let plane = h * w;
                    let mut offset = 0;
                    for &x in xs {
                        let xv = self.value(x);
                        let c = xv.dims4()?[1];
                        if self.rg(x) {
                            let mut buf = Vec::with_capacity(xv.len());
                            for ni in 0..n {
                                let start = (ni * total + offset) * plane;
                                buf.extend_from_slice(&dy.data()[start..start + c * plane]);
                            }
                            acc(&mut grads, x, Tensor::from_vec(xv.shape(), buf)?);
                        }
                        offset += c;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, dy.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, dy);
                    }
                }
                Op::MulBroadcast { x, w } => {
                    let (gx, gw) = mul_broadcast_backward(self.value(*x), self.value(*w), &dy)?;
                    if self.rg(*x) {
                        acc(&mut grads, *x, gx);
                    }
                    if self.rg(*w) {
                        acc(&mut grads, *w, gw);
                    }
                }
                Op::Mean(xs) => {
                    let k = T::of(xs.len() as f64);
                    let g = dy.map(|v| v / k);
                    for &x in xs {
                        if self.rg(x) {
                            acc(&mut grads, x, g.clone());
                        }
                    }
                }
                Op::L1 { pred, target } => {
                    let up = dy.data()[0];
                    let gp = l1_loss_backward(self.value(*pred), self.value(*target), up);
                    if self.rg(*target) {
                        acc(&mut grads, *target, gp.map(|v| -v));
                    }
                    if self.rg(*pred) {
                        acc(&mut grads, *pred, gp);
                    }
                }
                Op::Project { x, weights } => {
                    let up = dy.data()[0];
                    let gx = weights.map(|w| w * up).reshape(self.value(*x).shape())?;
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_operand_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(&[1, 1, 1], vec![3.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let out = tape.project(y, Tensor::scalar(1.0)).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 2]));
        let w = tape.param(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.conv2d(x, w, None, ConvSpec::new(1, 1, 1)).unwrap();
        let out = tape.project(y, Tensor::ones(&[4])).unwrap();
        let g = tape.backward(out).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(tape.backward(x).is_err());
    }
}
