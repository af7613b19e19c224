//! Reverse-mode automatic differentiation over the fixed operation set the
//! pipeline needs.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] walks it once in reverse.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dDims, PoolDims};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients of a scalar objective keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        dims: Conv2dDims,
    },
    ChannelBias {
        input: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    AffineChannel {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Sigmoid(NodeId),
    Clamp {
        input: NodeId,
        lo: f64,
        hi: f64,
    },
    Log(NodeId),
    SortDesc {
        input: NodeId,
        perm: Vec<usize>,
    },
    Gather {
        input: NodeId,
        indices: Vec<usize>,
    },
    /// `scale * x + shift`, elementwise.
    Affine {
        input: NodeId,
        scale: f64,
    },
    Sum(NodeId),
    L1(NodeId),
    L2Sq(NodeId),
    AddScalars(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A constant leaf. Gradients are still computed for it but it is not
    /// reported in the [`GradMap`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// A trainable leaf, reported under `name` by [`Gradients::params`].
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push(value, Op::Param(String::from(name)))
    }

    /// Cross-correlation of an NCHW input with an OIKhKw kernel.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let dims = Conv2dDims::new(self.value(input).shape(), self.value(kernel).shape(), stride, padding)?;
        let out = kernels::conv2d_forward(&dims, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(dims.out_shape().to_vec(), out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, dims }))
    }

    /// Adds `bias[c]` to every element of channel `c` of an NCHW tensor.
    pub fn channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let b = self.value(bias);
        if x.rank() != 4 || b.len() != x.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "channel_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let plane = x.shape()[2] * x.shape()[3];
        let c = x.shape()[1];
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let bv = b.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ChannelBias { input, bias }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = map(self.value(input), |v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(input))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let dims = PoolDims::new(self.value(input).shape(), window, stride)?;
        let (out, argmax) = kernels::maxpool_forward(&dims, self.value(input).data());
        let value = Tensor::new(dims.out_shape().to_vec(), out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// `out[n, y, x] = sum_c weight[c] * input[n, c, y, x] + bias`, with the
    /// same weights at every position.
    pub fn affine_channel(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.rank() != 4 || w.len() != x.shape()[1] || b.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "affine_channel",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let plane = h * wd;
        let bias_v = b.item();
        let mut out = vec![bias_v; n * plane];
        for s in 0..n {
            let dst = &mut out[s * plane..][..plane];
            for ch in 0..c {
                let wv = w.data()[ch];
                let src = &x.data()[(s * c + ch) * plane..][..plane];
                for (o, v) in dst.iter_mut().zip(src) {
                    *o += wv * v;
                }
            }
        }
        let value = Tensor::new(vec![n, h, wd], out)?;
        Ok(self.push(value, Op::AffineChannel { input, weight, bias }))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = map(self.value(input), math::sigmoid);
        self.push(value, Op::Sigmoid(input))
    }

    /// Clamps into `[lo, hi]`. The gradient is passed through only where the
    /// input is strictly inside the interval.
    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = map(self.value(input), |v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { input, lo, hi })
    }

    pub fn log(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveLog { index, value });
        }
        let value = map(x, math::ln);
        Ok(self.push(value, Op::Log(input)))
    }

    /// Sorts a 1-D tensor in descending order. Ties keep the smaller
    /// original index first. Returns the node and the permutation, with
    /// `sorted[j] = input[perm[j]]`.
    pub fn sort_descending(&mut self, input: NodeId) -> Result<(NodeId, Vec<usize>)> {
        let x = self.value(input);
        if x.rank() != 1 {
            return Err(Error::InvalidShape {
                op: "sort_descending",
                detail: format!("expected a vector, got {:?}", x.shape()),
            });
        }
        if x.is_empty() {
            return Err(Error::Empty { op: "sort_descending" });
        }
        let perm = sort_permutation(x.data());
        let data = perm.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::vector(data);
        let id = self.push(
            value,
            Op::SortDesc {
                input,
                perm: perm.clone(),
            },
        );
        Ok((id, perm))
    }

    /// Picks flat elements by index into a new vector.
    pub fn gather(&mut self, input: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let x = self.value(input);
        if indices.is_empty() {
            return Err(Error::Empty { op: "gather" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::InvalidShape {
                op: "gather",
                detail: format!("index {bad} out of range for {} elements", x.len()),
            });
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::vector(data);
        Ok(self.push(value, Op::Gather { input, indices }))
    }

    pub fn affine(&mut self, input: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = map(self.value(input), |v| scale * v + shift);
        self.push(value, Op::Affine { input, scale })
    }

    pub fn scale(&mut self, input: NodeId, scale: f64) -> NodeId {
        self.affine(input, scale, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, input: NodeId) -> NodeId {
        self.affine(input, -1.0, 1.0)
    }

    pub fn reduce_sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn l1_norm(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).data().iter().map(|v| math::abs(*v)).sum();
        self.push(Tensor::scalar(s), Op::L1(input))
    }

    pub fn l2_norm_sq(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum_sq();
        self.push(Tensor::scalar(s), Op::L2Sq(input))
    }

    /// Sum of one-element tensors, in the given order.
    pub fn add_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(Error::Empty { op: "add_scalars" });
        }
        let mut s = 0.0;
        for &t in terms {
            let v = self.value(t);
            if v.len() != 1 {
                return Err(Error::InvalidShape {
                    op: "add_scalars",
                    detail: format!("term has shape {:?}", v.shape()),
                });
            }
            s += v.item();
        }
        Ok(self.push(Tensor::scalar(s), Op::AddScalars(terms.to_vec())))
    }

    /// Fingerprint of every non-differentiable decision taken in the forward
    /// pass: ReLU signs, pooling argmaxes, sort orders and clamp activity.
    /// Finite differences are only meaningful when this is unchanged between
    /// the perturbed evaluations.
    pub fn kink_signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        mix((*v > 0.0) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                Op::SortDesc { perm, .. } => perm.iter().for_each(|&i| mix(i as u64)),
                Op::Clamp { input, lo, hi } => {
                    for v in self.value(*input).data() {
                        mix((*v > *lo && *v < *hi) as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Back-propagates from a one-element `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<'_>> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("root must be a scalar, got {:?}", root_val.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernel, dims } => {
                    let (gi, gk) = kernels::conv2d_backward(
                        dims,
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &g,
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *kernel, gk);
                }
                Op::ChannelBias { input, bias } => {
                    let x = self.value(*input);
                    let c = x.shape()[1];
                    let plane = x.shape()[2] * x.shape()[3];
                    let mut gb = vec![0.0; c];
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().sum::<f64>();
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *input, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let gi = g
                        .iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, gi);
                }
                Op::MaxPool { input, argmax } => {
                    let gi = kernels::maxpool_backward(self.value(*input).len(), argmax, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::AffineChannel { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight).data();
                    let (n, c) = (x.shape()[0], x.shape()[1]);
                    let plane = x.shape()[2] * x.shape()[3];
                    let mut gx = vec![0.0; x.len()];
                    let mut gw = vec![0.0; c];
                    for s in 0..n {
                        let gs = &g[s * plane..][..plane];
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            let src = &x.data()[off..][..plane];
                            let mut acc = 0.0;
                            for ((gxv, gv), xv) in gx[off..off + plane].iter_mut().zip(gs).zip(src) {
                                *gxv = w[ch] * gv;
                                acc += gv * xv;
                            }
                            gw[ch] += acc;
                        }
                    }
                    let gb = g.iter().sum();
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, vec![gb]);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gi = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *x, gi);
                }
                Op::Clamp { input, lo, hi } => {
                    let xv = self.value(*input).data();
                    let gi = g
                        .iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v > *lo && *v < *hi { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Log(x) => {
                    let xv = self.value(*x).data();
                    let gi = g.iter().zip(xv).map(|(gv, v)| gv / v).collect();
                    accumulate(&mut grads, *x, gi);
                }
                Op::SortDesc { input, perm } => {
                    let mut gi = vec![0.0; perm.len()];
                    for (j, &p) in perm.iter().enumerate() {
                        gi[p] = g[j];
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Gather { input, indices } => {
                    let mut gi = vec![0.0; self.value(*input).len()];
                    for (gv, &i) in g.iter().zip(indices) {
                        gi[i] += gv;
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Affine { input, scale } => {
                    let gi = g.iter().map(|gv| gv * scale).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sum(x) => {
                    let gi = vec![g[0]; self.value(*x).len()];
                    accumulate(&mut grads, *x, gi);
                }
                Op::L1(x) => {
                    // subgradient 0 at 0
                    let gi = self
                        .value(*x)
                        .data()
                        .iter()
                        .map(|v| {
                            if *v > 0.0 {
                                g[0]
                            } else if *v < 0.0 {
                                -g[0]
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, gi);
                }
                Op::L2Sq(x) => {
                    let gi = self.value(*x).data().iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut grads, *x, gi);
                }
                Op::AddScalars(terms) => {
                    for t in terms {
                        accumulate(&mut grads, *t, vec![g[0]]);
                    }
                }
            }
        }
        Ok(Gradients { graph: self, grads })
    }
}

/// Descending order with ties broken by the smaller index.
pub fn sort_permutation(values: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..values.len()).collect();
    perm.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    perm
}

/// Result of [`Graph::backward`]: adjoints of the leaves.
pub struct Gradients<'g> {
    graph: &'g Graph,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients<'_> {
    /// Gradient of a leaf node, or zeros when the root does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        let shape = self.graph.value(id).shape().to_vec();
        match self.grads.get(id.0).and_then(|g| g.clone()) {
            Some(data) => Tensor::new(shape, data).expect("gradient shape mirrors value"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn params(&self) -> GradMap {
        let mut out = GradMap::new();
        for (idx, node) in self.graph.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                out.insert(name.clone(), self.get(NodeId(idx)));
            }
        }
        out
    }
}
