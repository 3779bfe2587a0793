//! Reverse-mode tape over the fixed primitive set in [`crate::tensor`].
//!
//! Each forward call appends a node holding its output and whatever the
//! primitive's backward needs. Nodes are appended in topological order, so
//! [`Tape::backward`] is a single reverse sweep; gradients reaching a node
//! from several consumers are summed.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::{self, Activation, BatchNormCache, ConvSpec, PoolSpec, RunningStats, Scalar, Tensor, UpsampleKind};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BnTrain {
        gamma: Var,
        beta: Var,
        x: Var,
        cache: BatchNormCache<T>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<T>,
        eps: f64,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Pool {
        x: Var,
        spec: PoolSpec,
        argmax: Option<Vec<u32>>,
    },
    Upsample {
        x: Var,
        kind: UpsampleKind,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        xs: Vec<Var>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

/// Recorded forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], kept for leaves and for any
/// nodes explicitly retained.
pub struct Gradients<T> {
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, param: Option<usize>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(Error::BackwardBeforeForward(v.0))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Trainable leaf tagged with an external parameter index.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, Some(index))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = tensor::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(y, Op::Conv { x, w, b, spec }, rg, None))
    }

    /// Train-mode batch norm. Returns the batch cache's statistics alongside
    /// the output so the caller can update running stats.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, &BatchNormCache<T>)> {
        let (y, cache) = tensor::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(y, Op::BnTrain { x, gamma, beta, cache }, rg, None);
        match &self.nodes[v.0].op {
            Op::BnTrain { cache, .. } => Ok((v, cache)),
            _ => unreachable!(),
        }
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<T>,
        eps: f64,
    ) -> Result<Var> {
        let y = tensor::batch_norm_eval(self.value(x), self.value(gamma), self.value(beta), &running, eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            y,
            Op::BnEval {
                x,
                gamma,
                beta,
                running,
                eps,
            },
            rg,
            None,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = tensor::activation(self.value(x), kind);
        let rg = self.rg(&[x]);
        self.push(y, Op::Act { x, kind }, rg, None)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn pool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let out = tensor::pool2d(self.value(x), spec)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out.output,
            Op::Pool {
                x,
                spec,
                argmax: out.argmax,
            },
            rg,
            None,
        ))
    }

    pub fn upsample2(&mut self, x: Var, kind: UpsampleKind) -> Var {
        let y = tensor::upsample2(self.value(x), kind);
        let rg = self.rg(&[x]);
        self.push(y, Op::Upsample { x, kind }, rg, None)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let y = {
            let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
            tensor::concat_channels(&vals)?
        };
        let rg = self.rg(xs);
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }, rg, None))
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let y = {
            let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
            tensor::add(&vals)?
        };
        let rg = self.rg(xs);
        Ok(self.push(y, Op::Add { xs: xs.to_vec() }, rg, None))
    }

    /// Parameter index of each tagged leaf, paired with its handle.
    pub fn params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, Var(i))))
    }

    pub fn backward(&self, output: Var, upstream: Tensor<T>) -> Result<Gradients<T>> {
        self.backward_retaining(output, upstream, &[])
    }

    /// Reverse sweep from `output`. Gradients are kept for leaves and for
    /// every var in `retain`; intermediate gradients are dropped as soon as
    /// they have been propagated.
    pub fn backward_retaining(&self, output: Var, upstream: Tensor<T>, retain: &[Var]) -> Result<Gradients<T>> {
        let out_node = self.node(output)?;
        tensor::check_same(out_node.value.shape(), upstream.shape(), "backward")?;
        let retain: HashSet<usize> = retain.iter().map(|v| v.0).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(upstream);

        let mut kept: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, spec } => {
                    let need_x = self.nodes[x.0].requires_grad;
                    let cg = tensor::conv2d_backward(self.value(*x), self.value(*w), spec, &g, need_x)?;
                    if let Some(gx) = cg.input {
                        self.accumulate(&mut grads, *x, gx)?;
                    }
                    self.accumulate(&mut grads, *w, cg.weight)?;
                    if let Some(b) = b {
                        let gb = cg.bias.reshape(self.value(*b).shape())?;
                        self.accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::BnTrain { x, gamma, beta, cache } => {
                    let bg = tensor::batch_norm_train_backward(self.value(*gamma), cache, &g)?;
                    self.accumulate(&mut grads, *x, bg.input)?;
                    self.accumulate(&mut grads, *gamma, bg.gamma.reshape(self.value(*gamma).shape())?)?;
                    self.accumulate(&mut grads, *beta, bg.beta.reshape(self.value(*beta).shape())?)?;
                }
                Op::BnEval {
                    x,
                    gamma,
                    beta,
                    running,
                    eps,
                } => {
                    let bg = tensor::batch_norm_eval_backward(self.value(*x), self.value(*gamma), running, *eps, &g)?;
                    self.accumulate(&mut grads, *x, bg.input)?;
                    self.accumulate(&mut grads, *gamma, bg.gamma.reshape(self.value(*gamma).shape())?)?;
                    self.accumulate(&mut grads, *beta, bg.beta.reshape(self.value(*beta).shape())?)?;
                }
                Op::Act { x, kind } => {
                    let gx = tensor::activation_backward(*kind, self.value(*x), &node.value, &g)?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Pool { x, spec, argmax } => {
                    let gx = tensor::pool2d_backward(self.value(*x).shape(), *spec, argmax.as_deref(), &g)?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Upsample { x, kind } => {
                    let gx = tensor::upsample2_backward(self.value(*x).shape(), *kind, &g)?;
                    self.accumulate(&mut grads, *x, gx)?;
                }
                Op::Concat { xs } => {
                    let shapes: Vec<_> = xs.iter().map(|v| self.value(*v).shape()).collect();
                    for (v, gx) in xs.iter().zip(tensor::concat_channels_backward(&shapes, &g)?) {
                        self.accumulate(&mut grads, *v, gx)?;
                    }
                }
                Op::Add { xs } => {
                    for (v, gx) in xs.iter().zip(tensor::add_backward(xs.len(), &g)) {
                        self.accumulate(&mut grads, *v, gx)?;
                    }
                }
            }
            if matches!(node.op, Op::Leaf) || retain.contains(&i) {
                kept[i] = Some(g);
            }
        }
        Ok(Gradients { grads: kept })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }
}
