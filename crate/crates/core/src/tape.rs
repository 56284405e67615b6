//! Reverse-mode differentiation over a recorded list of operations.
//!
//! Every operation appends a node holding its output value; `backward` walks
//! the list in reverse. Leaf gradients accumulate into the leaf tensor's grad
//! slot, so two backward passes without [`GradTape::zero_grad`] add up.

use crate::dynfilter::{dynamic_filter, dynamic_filter_backward, reshape_channels_to_kernels};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Add(Var, Var),
    Upsample2(Var),
    ReflectPad(Var),
    Crop {
        input: Var,
        y0: usize,
        x0: usize,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    DynamicFilter {
        image: Var,
        kernels: Var,
        k: usize,
    },
    KernelSoftmax(Var),
    L1Loss {
        pred: Var,
        target: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<f64>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct GradTape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias).data(),
            stride,
            padding,
        )?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = ops::upsample_nearest2(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Upsample2(x), rg)
    }

    /// Reflect-pads bottom/right edges.
    pub fn reflect_pad(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Var {
        if pad_h == 0 && pad_w == 0 {
            return x;
        }
        let out = ops::reflect_pad(self.value(x), pad_h, pad_w);
        let rg = self.rg(&[x]);
        self.push(out, Op::ReflectPad(x), rg)
    }

    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let src = self.value(x);
        if y0 == 0 && x0 == 0 && src.h() == h && src.w() == w {
            return Ok(x);
        }
        let out = src.crop(y0, x0, h, w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Crop { input: x, y0, x0 }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceChannels { input: x, start }, rg))
    }

    /// Filters `image` with the per-pixel kernels held in the `k²` channels of `kernels`.
    pub fn dynamic_filter(&mut self, image: Var, kernels: Var, k: usize) -> Result<Var> {
        let field = reshape_channels_to_kernels(self.value(kernels).clone(), k)?;
        let out = dynamic_filter(self.value(image), &field)?;
        let rg = self.rg(&[image, kernels]);
        Ok(self.push(out, Op::DynamicFilter { image, kernels, k }, rg))
    }

    /// Softmax across the channel axis at every pixel.
    pub fn kernel_softmax(&mut self, x: Var) -> Var {
        let out = channel_softmax(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::KernelSoftmax(x), rg)
    }

    /// Mean absolute error as a 1-element tensor.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::l1_loss(self.value(pred), self.value(target))?;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::full([1, 1, 1, 1], loss), Op::L1Loss { pred, target }, rg))
    }

    /// `Σ weights ⊙ x` as a 1-element tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<f64>) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != weights.shape() {
            return Err(Error::dim("weighted_sum", "len", v.len(), weights.len()));
        }
        let s = v
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + a * T::from_f64(b));
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::full([1, 1, 1, 1], s),
            Op::WeightedSum {
                input: x,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ones = Tensor::full(self.value(x).shape(), 1.0);
        self.weighted_sum(x, &ones)
    }

    /// Back-propagates from a 1-element `loss`, accumulating into every leaf
    /// that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", "len", 1, self.value(loss).len()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => self.nodes[id].value.accumulate_grad(g.data())?,
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let need_input = self.nodes[input.0].requires_grad;
                    let cg = ops::conv2d_backward(
                        &g,
                        self.value(input),
                        self.value(weight),
                        stride,
                        padding,
                        need_input,
                    )?;
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads, input, gi)?;
                    }
                    accumulate(&mut grads, weight, cg.weight)?;
                    let bshape = self.value(bias).shape();
                    accumulate(&mut grads, bias, Tensor::from_vec(bshape, cg.bias)?)?;
                }
                Op::Relu(x) => {
                    let gi = ops::relu_backward(&g, self.value(x))?;
                    accumulate(&mut grads, x, gi)?;
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, b, g.clone())?;
                    }
                    accumulate(&mut grads, a, g)?;
                }
                Op::Upsample2(x) => accumulate(&mut grads, x, ops::upsample_nearest2_backward(&g))?,
                Op::ReflectPad(x) => {
                    let [_, _, h, w] = self.value(x).shape();
                    accumulate(&mut grads, x, ops::reflect_pad_backward(&g, h, w))?;
                }
                Op::Crop { input, y0, x0 } => {
                    let mut gi = Tensor::zeros(self.value(input).shape());
                    let [n, c, h, w] = g.shape();
                    for b in 0..n {
                        for ch in 0..c {
                            for y in 0..h {
                                let src = g.index(b, ch, y, 0);
                                let dst = gi.index(b, ch, y + y0, x0);
                                gi.data_mut()[dst..dst + w].copy_from_slice(&g.data()[src..src + w]);
                            }
                        }
                    }
                    accumulate(&mut grads, input, gi)?;
                }
                Op::SliceChannels { input, start } => {
                    let mut gi = Tensor::zeros(self.value(input).shape());
                    let [n, len, h, w] = g.shape();
                    let hw = h * w;
                    for b in 0..n {
                        let dst = gi.index(b, start, 0, 0);
                        gi.data_mut()[dst..dst + len * hw].copy_from_slice(g.item(b));
                    }
                    accumulate(&mut grads, input, gi)?;
                }
                Op::DynamicFilter { image, kernels, k } => {
                    let field = reshape_channels_to_kernels(self.value(kernels).clone(), k)?;
                    let (gi, gk) = dynamic_filter_backward(&g, self.value(image), &field)?;
                    if self.nodes[image.0].requires_grad {
                        accumulate(&mut grads, image, gi)?;
                    }
                    accumulate(&mut grads, kernels, gk)?;
                }
                Op::KernelSoftmax(x) => {
                    let gi = channel_softmax_backward(&g, &self.nodes[id].value);
                    accumulate(&mut grads, x, gi)?;
                }
                Op::L1Loss { pred, target } => {
                    let scale = g.data()[0];
                    let base = ops::l1_loss_backward(self.value(pred), self.value(target))?;
                    if self.nodes[target.0].requires_grad {
                        accumulate(&mut grads, target, base.scale(-scale))?;
                    }
                    accumulate(&mut grads, pred, base.scale(scale))?;
                }
                Op::WeightedSum { input, weights } => {
                    let scale = g.data()[0];
                    let gi = weights.cast::<T>().scale(scale);
                    accumulate(&mut grads, input, gi)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        slot @ None => *slot = Some(g),
        Some(existing) => {
            existing.expect_same_shape(&g, "backward accumulate")?;
            for (e, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + x;
            }
        }
    }
    Ok(())
}

pub(crate) fn channel_softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        let src = x.item(b);
        let dst = out.item_mut(b);
        for p in 0..hw {
            let max = (0..c).fold(T::neg_infinity(), |m, ch| m.max(src[ch * hw + p]));
            let mut total = T::zero();
            for ch in 0..c {
                let e = (src[ch * hw + p] - max).exp();
                dst[ch * hw + p] = e;
                total = total + e;
            }
            for ch in 0..c {
                dst[ch * hw + p] = dst[ch * hw + p] / total;
            }
        }
    }
    out
}

fn channel_softmax_backward<T: Scalar>(g: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(y.shape());
    for b in 0..n {
        let (gy, yy) = (g.item(b), y.item(b));
        let dst = out.item_mut(b);
        for p in 0..hw {
            let dot = (0..c).fold(T::zero(), |acc, ch| acc + gy[ch * hw + p] * yy[ch * hw + p]);
            for ch in 0..c {
                dst[ch * hw + p] = yy[ch * hw + p] * (gy[ch * hw + p] - dot);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_twice_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::uniform([1, 2, 5, 5], -1.0, 1.0, &mut rng), true);
        let w = tape.leaf(Tensor::uniform([3, 2, 3, 3], -1.0, 1.0, &mut rng), true);
        let b = tape.leaf(Tensor::zeros([3, 1, 1, 1]), true);
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let r = tape.relu(y);
        let loss = tape.sum(r).unwrap();
        tape.backward(loss).unwrap();
        let once: Vec<f64> = tape.grad(w).unwrap().to_vec();
        tape.backward(loss).unwrap();
        let twice = tape.grad(w).unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let p = tape.leaf(Tensor::full([1, 1, 2, 2], 2.0), true);
        let s = tape.add(x, p).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(p).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = GradTape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 1, 2, 2]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform([1, 9, 2, 3], -3.0, 3.0, &mut rng);
        let y = channel_softmax(&x);
        for p in 0..6 {
            let s: f64 = (0..9).map(|c| y.item(0)[c * 6 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
