//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its operands. [`Tape::backward`] walks the nodes in exact reverse
//! creation order, so an operand's adjoint is complete before it is
//! propagated further. Leaves used several times accumulate the sum of
//! their contributions.

use super::conv::{conv2d_same, conv2d_same_backward};
use super::Tensor;
use crate::error::{shape_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x * scale + shift`
    Affine { x: Var, scale: f64 },
    /// `w [m, n] · flatten(x)`
    MatVec { w: Var, x: Var },
    Reshape(Var),
    Stack(Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    trainable: Vec<bool>,
}

impl Gradients {
    /// Gradient of the loss with respect to leaf `v`, or `None` if the loss
    /// does not depend on it. Intermediate adjoints are not retained.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros shaped like `like` when
    /// the node received no gradient.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Iterates `(var, gradient)` over trainable leaves that received one.
    pub fn trainable(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter(|(i, _)| self.trainable[*i])
            .filter_map(|(i, g)| g.as_ref().map(|g| (Var(i), g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; its gradient is reported by [`Gradients::trainable`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Fresh constant holding the current value of `x`; gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let y = conv2d_same(self.value(input), self.value(kernel))?;
        Ok(self.push(y, Op::Conv2d(input, kernel)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    /// Elementwise `x * scale + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| v * scale + shift);
        self.push(y, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// `w · flatten(x)` for a `[m, n]` matrix `w` and any `x` with `n`
    /// elements; the result has shape `[m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(w), self.value(x));
        let &[m, n] = wv.shape() else {
            return Err(shape_err(format!("matvec weight must be 2-D, got {:?}", wv.shape())));
        };
        if xv.numel() != n {
            return Err(shape_err(format!(
                "matvec weight expects {n} inputs, operand has {}",
                xv.numel()
            )));
        }
        let out: Vec<f64> = wv
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xv.data()).map(|(a, b)| a * b).sum())
            .collect();
        debug_assert_eq!(out.len(), m);
        Ok(self.push(Tensor::from_vec(out), Op::MatVec { w, x }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Concatenates the flattened values of `parts` into one 1-D tensor.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.value(*p).data().iter().copied())
            .collect();
        self.push(Tensor::from_vec(data), Op::Stack(parts.to_vec()))
    }

    /// Inner product of two equally shaped tensors; rank-0 result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.expect_same_shape(bv)?;
        let s = av.data().iter().zip(bv.data()).map(|(p, q)| p * q).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square(x))
    }

    /// Elementwise clamp; the gradient is passed only where `lo < x < hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(y, Op::Clamp { x, lo, hi })
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d(x, k) => {
                    let (dx, dk) =
                        conv2d_same_backward(self.value(*x), self.value(*k), &g)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                }
                Op::Sigmoid(x) => {
                    let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    accumulate(&mut grads, *x, d);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |gv, q| gv * q)?;
                    let db = g.zip_map(self.value(*a), |gv, p| gv * p)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    accumulate(&mut grads, *x, g.map(|v| v * s));
                }
                Op::MatVec { w, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let n = xv.numel();
                    let mut dw = vec![0.0; wv.numel()];
                    let mut dx = vec![0.0; n];
                    for (i, gi) in g.data().iter().enumerate() {
                        let row = &wv.data()[i * n..(i + 1) * n];
                        let drow = &mut dw[i * n..(i + 1) * n];
                        for j in 0..n {
                            drow[j] = gi * xv.data()[j];
                            dx[j] += gi * row[j];
                        }
                    }
                    accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Stack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.numel();
                        let slice = g.data()[offset..offset + n].to_vec();
                        accumulate(&mut grads, *p, Tensor::new(pv.shape().to_vec(), slice)?);
                        offset += n;
                    }
                }
                Op::Dot(a, b) => {
                    let gv = g.item()?;
                    let da = self.value(*b).map(|q| gv * q);
                    let db = self.value(*a).map(|p| gv * p);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sum(x) => {
                    let gv = g.item()?;
                    accumulate(&mut grads, *x, Tensor::filled(self.value(*x).shape(), gv));
                }
                Op::Square(x) => {
                    let d = g.zip_map(self.value(*x), |gv, v| 2.0 * v * gv)?;
                    accumulate(&mut grads, *x, d);
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let d = g.zip_map(self.value(*x), |gv, v| {
                        if v > lo && v < hi {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *x, d);
                }
            }
        }

        Ok(Gradients {
            grads,
            trainable: self.nodes.iter().map(|n| n.trainable).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let sg = t.sigmoid(z);
        assert_eq!(t.scalar(sg).unwrap(), 0.5);
        let th = t.tanh(z);
        assert_eq!(t.scalar(th).unwrap(), 0.0);
        let a = t.constant(Tensor::from_vec(vec![2.0, 3.0]));
        let b = t.constant(Tensor::from_vec(vec![4.0, 5.0]));
        let h = t.mul(a, b).unwrap();
        assert_eq!(t.value(h).data(), &[8.0, 15.0]);
        let c = t.constant(Tensor::from_vec(vec![1.0]));
        assert!(t.mul(a, c).is_err());
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let w = t.param(Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let s = t.sum(w);
        let g = t.backward(s).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(g.get(w).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn zero_scaled_loss_gives_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(vec![0.3, -0.7]));
        let th = t.tanh(w);
        let sq = t.square(th);
        let s = t.sum(sq);
        let z = t.scale(s, 0.0);
        let g = t.backward(z).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn reused_leaf_accumulates() {
        // f = sum(w * w) → 2w
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(vec![1.5, -2.0]));
        let p = t.mul(w, w).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(vec![2.0]));
        let d = t.detach(w);
        let p = t.mul(w, d).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0]);
    }

    #[test]
    fn clamp_passes_gradient_inside_only() {
        let mut t = Tape::new();
        let w = t.param(Tensor::from_vec(vec![0.5, 1.5, -2.0]));
        let c = t.clamp(w, -1.0, 1.0);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    /// conv → tanh → matvec composite with every op type the model uses.
    fn composite(params: &[f64]) -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let x = t.constant(
            Tensor::new(
                vec![3, 3, 2],
                (0..18).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect(),
            )
            .unwrap(),
        );
        let k = t.param(Tensor::new(vec![3, 3, 2, 2], params[..36].to_vec()).unwrap());
        let w = t.param(Tensor::new(vec![2, 18], params[36..72].to_vec()).unwrap());
        let y = t.conv2d(x, k).unwrap();
        let z = t.sigmoid(y);
        let h = t.tanh(y);
        let zh = t.mul(z, h).unwrap();
        let one_minus = t.affine(z, -1.0, 1.0);
        let mix = t.mul(one_minus, zh).unwrap();
        let v = t.matvec(w, mix).unwrap();
        let sq = t.square(v);
        let st = t.stack(&[sq, v]);
        let r = t.reshape(st, &[2, 2]).unwrap();
        let r2 = t.sub(r, r).unwrap();
        let r3 = t.add(r2, r).unwrap();
        let c = t.clamp(r3, -10.0, 10.0);
        let loss = t.sum(c);
        let g = t.backward(loss).unwrap();
        let mut grad = g.get(k).unwrap().data().to_vec();
        grad.extend_from_slice(g.get(w).unwrap().data());
        (t.scalar(loss).unwrap(), grad)
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut s = 17u64;
        let params: Vec<f64> = (0..72)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        let (_, analytic) = composite(&params);
        let err = finite_diff_check(|p| composite(p).0, &params, &analytic, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let params: Vec<f64> = (0..72).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = composite(&params);
        let b = composite(&params);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
