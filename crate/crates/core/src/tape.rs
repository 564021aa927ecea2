//! Reverse-mode differentiation by operation recording.
//!
//! Every differentiable call on a [`Tape`] computes its forward value
//! immediately and appends a node holding that value plus whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse
//! execution order and accumulates gradients into the leaves' `grad` buffers.
//!
//! Gradients accumulate: calling `backward` twice without
//! [`Tape::zero_grad`] doubles every leaf gradient.

use crate::error::{Error, Result};
use crate::kernels::{activation, batchnorm, conv, layout, resample, ChannelStats};
use crate::tensor::{Real, Shape, Tensor4};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxChannels(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Concat(Var, Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    PadReflect(Var),
    Crop(Var),
    Mul(Var, Var),
    Sub(Var, Var),
    AddScalar(Var),
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    for (dim, x, y) in [
        ("batch", a.n, b.n),
        ("channels", a.c, b.c),
        ("height", a.h, b.h),
        ("width", a.w, b.w),
    ] {
        if x != y {
            return Err(Error::ShapeMismatch {
                op,
                dim,
                expected: x,
                actual: y,
            });
        }
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and the activations saved with it.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = None;
        }
    }

    /// Records a leaf that receives gradients (a parameter or an input under test).
    pub fn leaf(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = conv::conv2d(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv2d { input, weight, bias }, rg))
    }

    /// Batch norm using the batch's own statistics, which are returned so the
    /// caller can fold them into running averages.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, ChannelStats<T>)> {
        let (out, stats) = batchnorm::batch_norm_train(self.value(input), self.value(gamma), self.value(beta))?;
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            mean: stats.mean.clone(),
            inv_std: batchnorm::inv_std(&stats.var),
            batch_stats: true,
        };
        Ok((self.push(out, op, rg), stats))
    }

    /// Batch norm with fixed statistics (eval mode).
    pub fn batch_norm_eval(&mut self, input: Var, gamma: Var, beta: Var, mean: &[T], var: &[T]) -> Result<Var> {
        let out = batchnorm::batch_norm_eval(self.value(input), self.value(gamma), self.value(beta), mean, var)?;
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            mean: mean.to_vec(),
            inv_std: batchnorm::inv_std(var),
            batch_stats: false,
        };
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = activation::relu(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = activation::sigmoid(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Sigmoid(input), rg)
    }

    pub fn softmax_channels(&mut self, input: Var) -> Var {
        let out = activation::softmax_channels(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::SoftmaxChannels(input), rg)
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = resample::maxpool2x2(self.value(input))?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Var {
        let out = resample::upsample_nearest2x(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Upsample(input), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = layout::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = layout::slice_channels(self.value(input), start, len)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::SliceChannels { input, start }, rg))
    }

    pub fn pad_reflect(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let out = layout::pad_reflect(self.value(input), h, w)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::PadReflect(input), rg))
    }

    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let out = layout::crop(self.value(input), h, w)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Crop(input), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor4::from_vec(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor4::from_vec(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn add_scalar(&mut self, input: Var, value: T) -> Var {
        let out = self.value(input).map(|v| v + value);
        let rg = self.needs(input);
        self.push(out, Op::AddScalar(input), rg)
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let out = Tensor4::full(Shape::new(1, 1, 1, 1), total);
        let rg = self.needs(input);
        self.push(out, Op::Sum(input), rg)
    }

    /// Mean squared error as a `(1, 1, 1, 1)` tensor.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse_loss", self.shape(a), self.shape(b))?;
        let n = self.value(a).numel().max(1);
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum();
        let out = Tensor4::full(Shape::new(1, 1, 1, 1), T::of(total / n as f64));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    /// Back-propagates from the scalar `loss`, accumulating into every leaf
    /// created with [`Tape::leaf`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let slot = &mut self.nodes[i].value.grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, d: Vec<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Conv2d { input, weight, bias } => {
                let grads = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                if let Some(d) = grads.input {
                    send(*input, d);
                }
                if let Some(d) = grads.weight {
                    send(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    send(*b, d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) = batchnorm::batch_norm_backward(
                    self.value(*input),
                    self.value(*gamma),
                    mean,
                    inv_std,
                    g,
                    *batch_stats,
                );
                send(*input, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Relu(x) => send(*x, activation::relu_backward(self.value(*x), g)),
            Op::Sigmoid(x) => send(*x, activation::sigmoid_backward(out, g)),
            Op::SoftmaxChannels(x) => send(*x, activation::softmax_channels_backward(out, g)),
            Op::MaxPool { input, argmax } => send(*input, resample::maxpool2x2_backward(self.shape(*input), argmax, g)),
            Op::Upsample(x) => send(*x, resample::upsample_nearest2x_backward(self.shape(*x), g)),
            Op::Concat(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                let mut da = Vec::with_capacity(sa.numel());
                let mut db = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let base = n * (la + lb);
                    da.extend_from_slice(&g[base..base + la]);
                    db.extend_from_slice(&g[base + la..base + la + lb]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::SliceChannels { input, start } => {
                send(*input, layout::slice_channels_backward(self.shape(*input), *start, g))
            }
            Op::PadReflect(x) => {
                let s = out.shape();
                send(*x, layout::pad_reflect_backward(self.shape(*x), s.h, s.w, g))
            }
            Op::Crop(x) => {
                let s = out.shape();
                send(*x, layout::crop_backward(self.shape(*x), s.h, s.w, g))
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    send(*a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                if self.needs(*b) {
                    send(*b, g.iter().map(|&d| -d).collect());
                }
            }
            Op::AddScalar(x) => send(*x, g.to_vec()),
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] * T::of(2.0 / va.len().max(1) as f64);
                let diff: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| scale * (x - y)).collect();
                if self.needs(*b) {
                    send(*b, diff.iter().map(|&d| -d).collect());
                }
                send(*a, diff);
            }
        }
    }
}
