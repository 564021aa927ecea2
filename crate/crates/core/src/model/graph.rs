//! The operation set the network is written against.
//!
//! [`Tape`] records for differentiation; [`Eager`] evaluates directly and
//! drops activations as soon as the network stops referencing them, which
//! keeps inference on large images within memory.

use std::rc::Rc;

use crate::error::Result;
use crate::kernels::{self, ChannelStats};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Shape, Tensor4};

pub trait Graph<T: Real> {
    type Node: Clone;

    /// Introduces a tensor; `trainable` inputs receive gradients where supported.
    fn input(&mut self, value: Tensor4<T>, trainable: bool) -> Self::Node;
    fn shape(&self, x: &Self::Node) -> Shape;
    fn conv2d(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>) -> Result<Self::Node>;
    /// `running == None` normalizes with batch statistics and returns them.
    fn batch_norm(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Self::Node, Option<ChannelStats<T>>)>;
    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn softmax_channels(&mut self, x: &Self::Node) -> Self::Node;
    fn maxpool2x2(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn upsample_nearest2x(&mut self, x: &Self::Node) -> Self::Node;
    fn concat_channels(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn pad_reflect(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    fn crop(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn add_scalar(&mut self, x: &Self::Node, value: T) -> Self::Node;
}

impl<T: Real> Graph<T> for Tape<T> {
    type Node = Var;

    fn input(&mut self, value: Tensor4<T>, trainable: bool) -> Var {
        if trainable {
            self.leaf(value)
        } else {
            self.constant(value)
        }
    }

    fn shape(&self, x: &Var) -> Shape {
        Tape::shape(self, *x)
    }
    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::conv2d(self, *x, *w, b.copied())
    }
    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, Option<ChannelStats<T>>)> {
        match running {
            Some((mean, var)) => Ok((self.batch_norm_eval(*x, *gamma, *beta, mean, var)?, None)),
            None => {
                let (y, stats) = self.batch_norm_train(*x, *gamma, *beta)?;
                Ok((y, Some(stats)))
            }
        }
    }
    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }
    fn sigmoid(&mut self, x: &Var) -> Var {
        Tape::sigmoid(self, *x)
    }
    fn softmax_channels(&mut self, x: &Var) -> Var {
        Tape::softmax_channels(self, *x)
    }
    fn maxpool2x2(&mut self, x: &Var) -> Result<Var> {
        Tape::maxpool2x2(self, *x)
    }
    fn upsample_nearest2x(&mut self, x: &Var) -> Var {
        Tape::upsample_nearest2x(self, *x)
    }
    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::concat_channels(self, *a, *b)
    }
    fn pad_reflect(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        Tape::pad_reflect(self, *x, h, w)
    }
    fn crop(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        Tape::crop(self, *x, h, w)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::mul(self, *a, *b)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::sub(self, *a, *b)
    }
    fn add_scalar(&mut self, x: &Var, value: T) -> Var {
        Tape::add_scalar(self, *x, value)
    }
}

/// Direct evaluation without recording.
#[derive(Debug, Default)]
pub struct Eager;

type Shared<T> = Rc<Tensor4<T>>;

fn zip_map<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(crate::Error::invalid(
            op,
            format!("shape mismatch {} vs {}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor4::from_vec(a.shape(), data)
}

impl<T: Real> Graph<T> for Eager {
    type Node = Shared<T>;

    fn input(&mut self, value: Tensor4<T>, _trainable: bool) -> Shared<T> {
        Rc::new(value)
    }

    fn shape(&self, x: &Shared<T>) -> Shape {
        x.shape()
    }
    fn conv2d(&mut self, x: &Shared<T>, w: &Shared<T>, b: Option<&Shared<T>>) -> Result<Shared<T>> {
        Ok(Rc::new(kernels::conv2d(x, w, b.map(|b| &**b))?))
    }
    fn batch_norm(
        &mut self,
        x: &Shared<T>,
        gamma: &Shared<T>,
        beta: &Shared<T>,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Shared<T>, Option<ChannelStats<T>>)> {
        match running {
            Some((mean, var)) => Ok((Rc::new(kernels::batch_norm_eval(x, gamma, beta, mean, var)?), None)),
            None => {
                let (y, stats) = kernels::batch_norm_train(x, gamma, beta)?;
                Ok((Rc::new(y), Some(stats)))
            }
        }
    }
    fn relu(&mut self, x: &Shared<T>) -> Shared<T> {
        Rc::new(kernels::relu(x))
    }
    fn sigmoid(&mut self, x: &Shared<T>) -> Shared<T> {
        Rc::new(kernels::sigmoid(x))
    }
    fn softmax_channels(&mut self, x: &Shared<T>) -> Shared<T> {
        Rc::new(kernels::softmax_channels(x))
    }
    fn maxpool2x2(&mut self, x: &Shared<T>) -> Result<Shared<T>> {
        Ok(Rc::new(kernels::maxpool2x2(x)?.0))
    }
    fn upsample_nearest2x(&mut self, x: &Shared<T>) -> Shared<T> {
        Rc::new(kernels::upsample_nearest2x(x))
    }
    fn concat_channels(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        Ok(Rc::new(kernels::concat_channels(a, b)?))
    }
    fn pad_reflect(&mut self, x: &Shared<T>, h: usize, w: usize) -> Result<Shared<T>> {
        Ok(Rc::new(kernels::pad_reflect(x, h, w)?))
    }
    fn crop(&mut self, x: &Shared<T>, h: usize, w: usize) -> Result<Shared<T>> {
        Ok(Rc::new(kernels::crop(x, h, w)?))
    }
    fn mul(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        Ok(Rc::new(zip_map(a, b, "mul", |x, y| x * y)?))
    }
    fn sub(&mut self, a: &Shared<T>, b: &Shared<T>) -> Result<Shared<T>> {
        Ok(Rc::new(zip_map(a, b, "sub", |x, y| x - y)?))
    }
    fn add_scalar(&mut self, x: &Shared<T>, value: T) -> Shared<T> {
        Rc::new(x.map(|v| v + value))
    }
}
