//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every intermediate tensor. Leaves are either
//! parameters (gradients requested) or constants. [`Graph::backward`] walks
//! the tape once in reverse.

use crate::conv;
use crate::error::{Error, Result};
use crate::moment::MomentBasis;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Concat1(Vec<Var>),
    Narrow1 { src: Var, start: usize },
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Moments(Var, MomentBasis),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient, or zeros of `shape` when no path reached `v`.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn concat_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!("concat needs rank >= 2, got {:?}", shape)));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as data.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copy of the value as a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ct = T::from_f64(c);
        let value = self.value(a).map(|x| x * ct);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let ct = T::from_f64(c);
        let value = self.value(a).map(|x| x + ct);
        self.push(value, Op::Offset(a), &[a])
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.offset(n, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a), &[a])
    }

    /// `x · σ(x)`, smooth everywhere.
    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        self.push(value, Op::Silu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::from_f64(t.len().max(1) as f64);
        let value = Tensor::scalar(t.sum() / n);
        self.push(value, Op::Mean(a), &[a])
    }

    /// Concatenate along axis 1 (channels for NCHW).
    pub fn concat1(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (outer, _, inner) = concat_dims(self.shape(first))?;
        let rest = self.shape(first)[2..].to_vec();
        let mut total = 0;
        for &p in parts {
            let (o, c, i) = concat_dims(self.shape(p))?;
            if o != outer || i != inner || self.shape(p)[2..] != rest[..] {
                return Err(Error::shape(format!(
                    "concat {:?} with {:?}",
                    self.shape(first),
                    self.shape(p)
                )));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = vec![outer, total];
        shape.extend(rest);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat1(parts.to_vec()), parts))
    }

    /// Channels `start..start+len` along axis 1.
    pub fn narrow1(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (outer, c, inner) = concat_dims(self.shape(src))?;
        if start + len > c {
            return Err(Error::shape(format!(
                "narrow {}..{} of {} channels",
                start,
                start + len,
                c
            )));
        }
        let x = self.value(src).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * c + start) * inner..(o * c + start + len) * inner]);
        }
        let mut shape = self.shape(src).to_vec();
        shape[1] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Narrow1 { src, start }, &[src]))
    }

    /// Split axis 1 into `n` equal chunks.
    pub fn chunk1(&mut self, src: Var, n: usize) -> Result<Vec<Var>> {
        let c = self.shape(src)[1];
        if n == 0 || c % n != 0 {
            return Err(Error::shape(format!("cannot split {} channels into {}", c, n)));
        }
        let len = c / n;
        (0..n).map(|i| self.narrow1(src, i * len, len)).collect()
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = conv::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, &parents))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = conv::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            value,
            Op::ConvTranspose2d { x, w, b, stride, pad },
            &parents,
        ))
    }

    /// Moment matrices of a stack of `k×k` filters (`[..., k, k]`).
    pub fn moments(&mut self, filters: Var, basis: &MomentBasis) -> Result<Var> {
        let value = basis.apply(self.value(filters))?;
        Ok(self.push(value, Op::Moments(filters, basis.clone()), &[filters]))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let contributions = self.local_grads(node, &dy)?;
            grads[idx] = Some(dy);
            for (parent, g) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Grads { grads })
    }

    fn local_grads(&self, node: &Node<T>, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, dy.zip_map(val(*b), |g, y| g * y)?),
                (*b, dy.zip_map(val(*a), |g, x| g * x)?),
            ],
            Op::Scale(a, c) => {
                let c = T::from_f64(*c);
                vec![(*a, dy.map(|g| g * c))]
            }
            Op::Offset(a) => vec![(*a, dy.clone())],
            Op::Sigmoid(a) => vec![(*a, dy.zip_map(&node.value, |g, s| g * s * (T::one() - s))?)],
            Op::Tanh(a) => vec![(*a, dy.zip_map(&node.value, |g, t| g * (T::one() - t * t))?)],
            Op::Silu(a) => vec![(
                *a,
                dy.zip_map(val(*a), |g, x| {
                    let s = sigmoid(x);
                    g * (s + x * s * (T::one() - s))
                })?,
            )],
            Op::Square(a) => {
                let two = T::from_f64(2.0);
                vec![(*a, dy.zip_map(val(*a), |g, x| g * two * x)?)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.shape(*a).to_vec(), dy.data()[0]))],
            Op::Mean(a) => {
                let n = T::from_f64(val(*a).len().max(1) as f64);
                vec![(*a, Tensor::full(self.shape(*a).to_vec(), dy.data()[0] / n))]
            }
            Op::Concat1(parts) => {
                let (outer, total, inner) = concat_dims(dy.shape())?;
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.shape(p)[1];
                    let mut data = Vec::with_capacity(outer * c * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&dy.data()[base..base + c * inner]);
                    }
                    out.push((p, Tensor::new(self.shape(p).to_vec(), data)?));
                    offset += c;
                }
                out
            }
            Op::Narrow1 { src, start } => {
                let (outer, c, inner) = concat_dims(self.shape(*src))?;
                let len = dy.shape()[1];
                let mut g = Tensor::zeros(self.shape(*src).to_vec());
                for o in 0..outer {
                    let dst = (o * c + start) * inner;
                    g.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*src, g)]
            }
            Op::Reshape(a) => vec![(*a, dy.clone().reshape(self.shape(*a).to_vec())?)],
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) =
                    conv::conv2d_backward(val(*x), val(*w), b.is_some(), *stride, *pad, dy)?;
                let mut out = vec![(*x, dx), (*w, dw)];
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((*b, db));
                }
                out
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    val(*x),
                    val(*w),
                    b.is_some(),
                    *stride,
                    *pad,
                    dy,
                )?;
                let mut out = vec![(*x, dx), (*w, dw)];
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((*b, db));
                }
                out
            }
            Op::Moments(a, basis) => vec![(*a, basis.apply_transpose(dy)?)],
        };
        Ok(out)
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_through_elementwise_ops() {
        // f(x) = sum(sigmoid(x) * tanh(x)^2)
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64_slice([3], &[-0.7, 0.1, 1.3]).unwrap());
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        let t2 = g.square(t);
        let p = g.mul(s, t2).unwrap();
        let f = g.sum(p);
        let grads = g.backward(f).unwrap();
        let dx = grads.get(x).unwrap();
        for (i, &xv) in [-0.7f64, 0.1, 1.3].iter().enumerate() {
            let sg = 1.0 / (1.0 + (-xv).exp());
            let th = xv.tanh();
            let expected = sg * (1.0 - sg) * th * th + sg * 2.0 * th * (1.0 - th * th);
            assert!((dx.data()[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full([2], 2.0));
        let b = g.param(Tensor::full([2], 3.0));
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn concat_and_narrow_route_gradients() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_fn([2, 1, 2], |i| i as f64));
        let b = g.param(Tensor::from_fn([2, 2, 2], |i| 10.0 + i as f64));
        let c = g.concat1(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        let mid = g.narrow1(c, 1, 1).unwrap();
        assert_eq!(g.value(mid).data(), &[10.0, 11.0, 14.0, 15.0]);
        let s = g.sum(mid);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get_or_zeros(a, &[2, 1, 2]).data(), &[0.0; 4]);
        assert_eq!(
            grads.get(b).unwrap().data(),
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::zeros([2]));
        assert!(g.backward(a).is_err());
    }
}
