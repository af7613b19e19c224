//! Backbone CNN, shared logistic response layer and ranking layer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{sort_permutation, Graph, NodeId};
use crate::error::{Error, Result};
use crate::image::{batch_tensor, BoxF, GrayImage};
use crate::kernels::window_out;
use crate::math;
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

/// Responses are clamped into `[RESPONSE_MIN, RESPONSE_MAX]` before any log.
pub const RESPONSE_MIN: f64 = 1e-7;
pub const RESPONSE_MAX: f64 = 1.0 - 1e-7;

pub const RESPONSE_WEIGHT: &str = "response.weight";
pub const RESPONSE_BIAS: &str = "response.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Pool {
        window: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    /// Side of the square single-channel input.
    pub input_size: usize,
    pub layers: Vec<Layer>,
}

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
    Layer::Conv {
        out_channels,
        kernel,
        stride,
        padding,
    }
}

fn pool(window: usize, stride: usize) -> Layer {
    Layer::Pool { window, stride }
}

impl BackboneSpec {
    /// AlexNet convolutional stack on one input channel: 224x224 -> 256x6x6.
    pub fn paper() -> Self {
        use Layer::Relu;
        BackboneSpec {
            input_size: 224,
            layers: vec![
                conv(64, 11, 4, 2),
                Relu,
                pool(3, 2),
                conv(192, 5, 1, 2),
                Relu,
                pool(3, 2),
                conv(384, 3, 1, 1),
                Relu,
                conv(256, 3, 1, 1),
                Relu,
                conv(256, 3, 1, 1),
                Relu,
                pool(3, 2),
            ],
        }
    }

    /// Three conv/pool blocks: 64x64 -> 32x4x4.
    pub fn desk() -> Self {
        use Layer::Relu;
        BackboneSpec {
            input_size: 64,
            layers: vec![
                conv(8, 3, 2, 1),
                Relu,
                pool(2, 2),
                conv(16, 3, 1, 1),
                Relu,
                pool(2, 2),
                conv(32, 3, 1, 1),
                Relu,
                pool(2, 2),
            ],
        }
    }

    /// Two conv/pool blocks: 16x16 -> 8x4x4. Meant for fast tests.
    pub fn tiny() -> Self {
        use Layer::Relu;
        BackboneSpec {
            input_size: 16,
            layers: vec![conv(4, 3, 1, 1), Relu, pool(2, 2), conv(8, 3, 1, 1), Relu, pool(2, 2)],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset `{other}` (paper, desk, tiny)"))),
        }
    }

    /// `(channels, height, width)` of the feature map.
    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (1usize, self.input_size, self.input_size);
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 {
                        return Err(Error::Config(format!("layer {i}: zero output channels")));
                    }
                    h = window_out(h, kernel, stride, padding)
                        .ok_or_else(|| Error::Config(format!("layer {i}: conv does not fit {h}x{w}")))?;
                    w = window_out(w, kernel, stride, padding).unwrap_or(0);
                    c = out_channels;
                }
                Layer::Pool { window, stride } => {
                    h = window_out(h, window, stride, 0)
                        .ok_or_else(|| Error::Config(format!("layer {i}: pool does not fit {h}x{w}")))?;
                    w = window_out(w, window, stride, 0).unwrap_or(0);
                }
                Layer::Relu => {}
            }
        }
        Ok((c, h, w))
    }

    /// Number of instances (feature-map cells) per bag.
    pub fn instances(&self) -> Result<usize> {
        let (_, h, w) = self.output_shape()?;
        Ok(h * w)
    }

    /// Comma-separated layer list, e.g. `conv:8:3:2:1,relu,pool:2:2`.
    pub fn layers_string(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| match *l {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => format!("conv:{out_channels}:{kernel}:{stride}:{padding}"),
                Layer::Relu => "relu".to_string(),
                Layer::Pool { window, stride } => format!("pool:{window}:{stride}"),
            })
            .collect();
        parts.join(",")
    }

    pub fn parse_layers(text: &str) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let mut fields = item.split(':');
            let kind = fields.next().unwrap_or("");
            let nums: Vec<usize> = fields
                .map(|f| f.trim().parse::<usize>())
                .collect::<core::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad layer `{item}`")))?;
            let layer = match (kind, nums.as_slice()) {
                ("conv", &[o, k, s, p]) if s > 0 && k > 0 => conv(o, k, s, p),
                ("relu", &[]) => Layer::Relu,
                ("pool", &[wnd, s]) if s > 0 && wnd > 0 => pool(wnd, s),
                _ => return Err(Error::Config(format!("bad layer `{item}`"))),
            };
            layers.push(layer);
        }
        if layers.is_empty() {
            return Err(Error::Config("empty layer list".into()));
        }
        Ok(layers)
    }
}

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<(String, Tensor)>,
}

impl ModelParams {
    pub fn from_named(tensors: Vec<(String, Tensor)>) -> Self {
        ModelParams { tensors }
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` kernels, zero biases.
    pub fn init(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Purpose::Init, 0, 0);
        let mut tensors = Vec::new();
        for (name, shape) in expected_shapes(spec)? {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                // conv kernels are O x I x k x k; the response weight is a
                // 1x1 map from C channels to one output
                let (fan_in, fan_out) = if shape.len() == 4 {
                    let area = shape[2] * shape[3];
                    (shape[1] * area, shape[0] * area)
                } else {
                    (shape[0], 1)
                };
                let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(shape, data)?
            };
            tensors.push((name, t));
        }
        Ok(ModelParams { tensors })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks names and shapes against what `spec` expects.
    pub fn check_against(&self, spec: &BackboneSpec) -> Result<()> {
        let expected = expected_shapes(spec)?;
        if expected.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.len()
            )));
        }
        for ((rn, rs), (n, t)) in expected.iter().zip(self.iter()) {
            if rn != n || rs.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{n}` {:?} does not match expected `{rn}` {rs:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameter names and shapes implied by a backbone, in storage order.
pub fn expected_shapes(spec: &BackboneSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let (c, _, _) = spec.output_shape()?;
    let mut out = Vec::new();
    let mut in_c = 1usize;
    let mut idx = 0;
    for layer in &spec.layers {
        if let Layer::Conv {
            out_channels, kernel, ..
        } = *layer
        {
            out.push((format!("conv{idx}.weight"), vec![out_channels, in_c, kernel, kernel]));
            out.push((format!("conv{idx}.bias"), vec![out_channels]));
            in_c = out_channels;
            idx += 1;
        }
    }
    out.push((RESPONSE_WEIGHT.to_string(), vec![c]));
    out.push((RESPONSE_BIAS.to_string(), vec![1]));
    Ok(out)
}

/// A forward pass recorded on a graph.
pub struct Forward {
    pub graph: Graph,
    /// Parameter leaves in [`ModelParams`] order.
    pub params: Vec<NodeId>,
    /// Feature map, `N x C x h x w`.
    pub features: NodeId,
    /// Clamped responses, `N x h x w`.
    pub responses: NodeId,
    pub grid: (usize, usize),
}

impl Forward {
    pub fn batch(&self) -> usize {
        self.graph.value(self.responses).shape()[0]
    }

    pub fn instances(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Flat indices of bag `n` inside the response tensor.
    pub fn bag_indices(&self, n: usize) -> Vec<usize> {
        let m = self.instances();
        (n * m..(n + 1) * m).collect()
    }

    pub fn response_maps(&self) -> Vec<ResponseMap> {
        let m = self.instances();
        self.graph
            .value(self.responses)
            .data()
            .chunks(m)
            .map(|c| ResponseMap {
                values: c.to_vec(),
                grid_h: self.grid.0,
                grid_w: self.grid.1,
            })
            .collect()
    }
}

/// Runs the backbone and the response layer on an `N x 1 x S x S` input.
pub fn forward(spec: &BackboneSpec, params: &ModelParams, input: Tensor) -> Result<Forward> {
    let s = spec.input_size;
    if input.rank() != 4 || input.shape()[1] != 1 || input.shape()[2] != s || input.shape()[3] != s {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: input.shape().to_vec(),
            right: vec![input.shape().first().copied().unwrap_or(0), 1, s, s],
        });
    }
    params.check_against(spec)?;
    let mut graph = Graph::new();
    let x = graph.input(input);
    let ids: Vec<NodeId> = params.iter().map(|(n, t)| graph.param(n, t.clone())).collect();
    let mut cur = x;
    let mut next_param = 0;
    for layer in &spec.layers {
        cur = match *layer {
            Layer::Conv { stride, padding, .. } => {
                let y = graph.conv2d(cur, ids[next_param], stride, padding)?;
                let y = graph.channel_bias(y, ids[next_param + 1])?;
                next_param += 2;
                y
            }
            Layer::Relu => graph.relu(cur),
            Layer::Pool { window, stride } => graph.maxpool2d(cur, window, stride)?,
        };
    }
    let features = cur;
    let shape = graph.value(features).shape().to_vec();
    let z = graph.affine_channel(features, ids[next_param], ids[next_param + 1])?;
    let r = graph.sigmoid(z);
    let responses = graph.clamp(r, RESPONSE_MIN, RESPONSE_MAX);
    Ok(Forward {
        graph,
        params: ids,
        features,
        responses,
        grid: (shape[2], shape[3]),
    })
}

pub fn forward_images(spec: &BackboneSpec, params: &ModelParams, images: &[&GrayImage]) -> Result<Forward> {
    forward(spec, params, batch_tensor(images)?)
}

/// Feature map only, `N x C x h x w`.
pub fn forward_backbone(spec: &BackboneSpec, params: &ModelParams, input: Tensor) -> Result<Tensor> {
    let f = forward(spec, params, input)?;
    Ok(f.graph.value(f.features).clone())
}

/// Per-patch probabilities of one bag, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub values: Vec<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ResponseMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major index of the largest response (first on ties).
    pub fn argmax(&self) -> usize {
        sort_permutation(&self.values)[0]
    }

    /// Region of a `width x height` input covered by cell `index`, taking
    /// the grid as an even partition of the input.
    pub fn cell_box(&self, index: usize, width: usize, height: usize) -> BoxF {
        let (row, col) = (index / self.grid_w, index % self.grid_w);
        let cw = width as f64 / self.grid_w as f64;
        let ch = height as f64 / self.grid_h as f64;
        BoxF {
            x: col as f64 * cw,
            y: row as f64 * ch,
            w: cw,
            h: ch,
        }
    }
}

/// Responses in descending order together with the sorting permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResponses {
    pub sorted: Vec<f64>,
    pub perm: Vec<usize>,
}

pub fn rank_responses(r: &ResponseMap) -> Result<RankedResponses> {
    rank_values(&r.values)
}

pub fn rank_values(values: &[f64]) -> Result<RankedResponses> {
    if values.is_empty() {
        return Err(Error::Empty { op: "rank_responses" });
    }
    let perm = sort_permutation(values);
    Ok(RankedResponses {
        sorted: perm.iter().map(|&i| values[i]).collect(),
        perm,
    })
}

/// `sigmoid(a . F[n, :, i, j] + b)` for every position of a single-sample
/// feature map `1 x C x h x w`, clamped like the network output.
pub fn instance_responses(features: &Tensor, weight: &Tensor, bias: f64) -> Result<ResponseMap> {
    let mut g = Graph::new();
    let f = g.input(features.clone());
    let a = g.input(weight.clone());
    let b = g.input(Tensor::vector(vec![bias]));
    let z = g.affine_channel(f, a, b)?;
    let r = g.sigmoid(z);
    let r = g.clamp(r, RESPONSE_MIN, RESPONSE_MAX);
    let shape = features.shape();
    if shape[0] != 1 {
        return Err(Error::InvalidShape {
            op: "instance_responses",
            detail: format!("expected a single sample, got {shape:?}"),
        });
    }
    Ok(ResponseMap {
        values: g.value(r).data().to_vec(),
        grid_h: shape[2],
        grid_w: shape[3],
    })
}
