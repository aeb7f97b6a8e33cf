//! One forward description, two executors: the tape records gradients, the
//! eager executor only computes values.

use super::conv::{conv3d_forward, conv_transpose3d_forward, ConvGeometry};
use super::dropout::{channel_dropout, DropoutKey, DropoutSpec};
use super::norm::{group_norm_forward, GroupNormSpec};
use super::pool::max_pool3d_forward;
use super::upsample::upsample_nearest2;
use super::activation::{relu, sigmoid, softmax_channels};
use crate::engine::{Element, Tape, Tensor, Var};
use crate::error::Result;

pub trait Exec<T: Element> {
    type Value: Clone;

    /// Whether values carry gradients (train mode is only valid when true).
    fn records_gradients(&self) -> bool;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;
    fn input(&mut self, t: Tensor<T>) -> Self::Value;
    fn param(&mut self, t: Tensor<T>) -> Self::Value;

    fn conv3d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value, g: ConvGeometry) -> Result<Self::Value>;
    fn conv_transpose3d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value, g: ConvGeometry) -> Result<Self::Value>;
    fn group_norm(&mut self, x: &Self::Value, gamma: &Self::Value, beta: &Self::Value, spec: GroupNormSpec) -> Result<Self::Value>;
    fn max_pool3d(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn softmax_channels(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn channel_dropout(&mut self, x: &Self::Value, spec: DropoutSpec, key: DropoutKey) -> Result<Self::Value>;
    fn upsample_nearest2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, axis: usize, parts: &[&Self::Value]) -> Result<Self::Value>;
}

impl<T: Element> Exec<T> for Tape<T> {
    type Value = Var;

    fn records_gradients(&self) -> bool {
        true
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        Tape::value(self, *v)
    }
    fn input(&mut self, t: Tensor<T>) -> Var {
        self.constant(t)
    }
    fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t)
    }
    fn conv3d(&mut self, x: &Var, w: &Var, b: &Var, g: ConvGeometry) -> Result<Var> {
        Tape::conv3d(self, *x, *w, *b, g)
    }
    fn conv_transpose3d(&mut self, x: &Var, w: &Var, b: &Var, g: ConvGeometry) -> Result<Var> {
        Tape::conv_transpose3d(self, *x, *w, *b, g)
    }
    fn group_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, spec: GroupNormSpec) -> Result<Var> {
        Tape::group_norm(self, *x, *gamma, *beta, spec)
    }
    fn max_pool3d(&mut self, x: &Var) -> Result<Var> {
        Tape::max_pool3d(self, *x)
    }
    fn relu(&mut self, x: &Var) -> Result<Var> {
        Tape::relu(self, *x)
    }
    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        Tape::sigmoid(self, *x)
    }
    fn softmax_channels(&mut self, x: &Var) -> Result<Var> {
        Tape::softmax_channels(self, *x)
    }
    fn channel_dropout(&mut self, x: &Var, spec: DropoutSpec, key: DropoutKey) -> Result<Var> {
        Tape::channel_dropout(self, *x, spec, key)
    }
    fn upsample_nearest2(&mut self, x: &Var) -> Result<Var> {
        Tape::upsample_nearest2(self, *x)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::mul(self, *a, *b)
    }
    fn concat(&mut self, axis: usize, parts: &[&Var]) -> Result<Var> {
        let parts: Vec<Var> = parts.iter().map(|v| **v).collect();
        Tape::concat(self, axis, &parts)
    }
}

/// Plain evaluation without recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Element> Exec<T> for Eager {
    type Value = Tensor<T>;

    fn records_gradients(&self) -> bool {
        false
    }
    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }
    fn input(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn param(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn conv3d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: ConvGeometry) -> Result<Tensor<T>> {
        conv3d_forward(x, w, Some(b), g)
    }
    fn conv_transpose3d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: ConvGeometry) -> Result<Tensor<T>> {
        conv_transpose3d_forward(x, w, Some(b), g)
    }
    fn group_norm(&mut self, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, spec: GroupNormSpec) -> Result<Tensor<T>> {
        Ok(group_norm_forward(x, gamma, beta, spec)?.y)
    }
    fn max_pool3d(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(max_pool3d_forward(x)?.values)
    }
    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(x))
    }
    fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(sigmoid(x))
    }
    fn softmax_channels(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        softmax_channels(x)
    }
    fn channel_dropout(&mut self, x: &Tensor<T>, spec: DropoutSpec, key: DropoutKey) -> Result<Tensor<T>> {
        channel_dropout(x, spec, key)
    }
    fn upsample_nearest2(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        upsample_nearest2(x)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }
    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.mul(b)
    }
    fn concat(&mut self, axis: usize, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::concat(axis, parts)
    }
}
