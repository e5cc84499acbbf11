//! A small reverse-mode tape over the operation set the operator model needs.
//!
//! Nodes are appended in evaluation order, so parents always precede children
//! and `backward` is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops;
use crate::spectral::{self, ModeBasis, SavedSpectra, SpectralWeights};
use crate::tensor::{crop3, pad3, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Pad { x: Var, p: usize },
    Crop { x: Var, p: usize },
    Lift { x: Var, w: Var, b: Var },
    Gelu { x: Var, slope: Tensor },
    Spectral {
        z: Var,
        re: Var,
        im: Var,
        basis: Arc<ModeBasis>,
        saved: SavedSpectra,
    },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Merge { b: Var, c: Var },
    Reshape { x: Var },
    Sum { x: Var },
    SumSquares { x: Var },
    L2Relative { pred: Var, truth: Tensor },
    Mean { xs: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push(v);
        v
    }

    /// A leaf input (still differentiable, just not listed as a parameter).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Elements held by non-leaf values plus saved backward context.
    pub fn activation_elements(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::Leaf => 0,
                Op::Spectral { saved, .. } => n.value.len() + saved.len(),
                _ => n.value.len(),
            })
            .sum()
    }

    pub fn pad3(&mut self, x: Var, p: usize) -> Result<Var> {
        let v = pad3(self.value(x), p)?;
        Ok(self.push(v, Op::Pad { x, p }))
    }

    pub fn crop3(&mut self, x: Var, p: usize) -> Result<Var> {
        let v = crop3(self.value(x), p)?;
        Ok(self.push(v, Op::Crop { x, p }))
    }

    pub fn lift_channels(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = ops::lift_channels(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Lift { x, w, b }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (v, slope) = ops::gelu_with_slope(self.value(x));
        self.push(v, Op::Gelu { x, slope })
    }

    pub fn spectral_conv(&mut self, z: Var, re: Var, im: Var, basis: Arc<ModeBasis>) -> Result<Var> {
        let (v, saved) = spectral::spectral_conv_forward(
            self.value(z),
            &SpectralWeights {
                re: self.value(re),
                im: self.value(im),
            },
            &basis,
        )?;
        Ok(self.push(
            v,
            Op::Spectral {
                z,
                re,
                im,
                basis,
                saved,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn merge(&mut self, b: Var, c: Var) -> Result<Var> {
        let v = ops::merge(self.value(b), self.value(c))?;
        Ok(self.push(v, Op::Merge { b, c }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares { x })
    }

    pub fn l2_relative(&mut self, pred: Var, truth: Tensor) -> Result<Var> {
        let l = ops::l2_relative(self.value(pred), &truth)?;
        Ok(self.push(Tensor::scalar(l), Op::L2Relative { pred, truth }))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: Vec<Var>) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::contract("mean of zero scalars"));
        }
        let mut s = 0.0;
        for &x in &xs {
            if self.value(x).len() != 1 {
                return Err(Error::contract("mean expects scalar nodes"));
            }
            s += self.value(x).data()[0];
        }
        let v = s / xs.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mean { xs }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let params = self
            .params
            .iter()
            .map(|p| {
                grads[p.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*p).shape()))
            })
            .collect();
        Ok(Gradients { all: grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Pad { x, p } => accumulate(grads, *x, crop3(g, *p)?),
            Op::Crop { x, p } => accumulate(grads, *x, pad3(g, *p)?),
            Op::Lift { x, w, b } => {
                let (gx, gw, gb) = ops::lift_channels_backward(self.value(*x), self.value(*w), g);
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                accumulate(grads, *b, gb);
            }
            Op::Gelu { x, slope } => accumulate(grads, *x, g.zip_map(slope, |a, b| a * b)?),
            Op::Spectral {
                z,
                re,
                im,
                basis,
                saved,
            } => {
                let weights = SpectralWeights {
                    re: self.value(*re),
                    im: self.value(*im),
                };
                let (gz, gre, gim) = spectral::spectral_conv_backward(g, saved, &weights, basis)?;
                accumulate(grads, *z, gz);
                accumulate(grads, *re, gre);
                accumulate(grads, *im, gim);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Merge { b, c } => {
                let (gb, gc) = ops::merge_backward(self.value(*b), self.value(*c), g);
                accumulate(grads, *b, gb);
                accumulate(grads, *c, gc);
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::Sum { x } => {
                accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), g.data()[0]));
            }
            Op::SumSquares { x } => {
                accumulate(grads, *x, self.value(*x).scale(2.0 * g.data()[0]));
            }
            Op::L2Relative { pred, truth } => {
                let d = ops::l2_relative_backward(self.value(*pred), truth);
                accumulate(grads, *pred, d.scale(g.data()[0]));
            }
            Op::Mean { xs } => {
                let s = g.data()[0] / xs.len() as f64;
                for &x in xs {
                    accumulate(grads, x, Tensor::scalar(s));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    all: Vec<Option<Tensor>>,
    /// Parameter gradients in registration order.
    pub params: Vec<Tensor>,
}

impl Gradients {
    /// Gradient of a non-parameter leaf (e.g. an input), if it was reached.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.all.get(v.0).and_then(|g| g.as_ref())
    }
}
