//! JSON graph description. See `docs/network-format.md` for the schema.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kernels::{Activation, Conv2dParams, SeWeights};
use crate::error::{Error, Result};

pub const INPUT_NODE: &str = "input";
pub const FORMAT_TAG: &str = "nnx-graph/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_eps() -> f32 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerOp {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_one")]
        groups: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// Depthwise convolution (`groups == channels`).
    Dwconv {
        channels: usize,
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Bn {
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f32,
    },
    Act {
        #[serde(rename = "fn")]
        func: Activation,
    },
    Se {
        channels: usize,
        reduction: usize,
    },
    GlobalAvgPool,
    Upsample2xBilinear,
    Add,
    Concat,
    SigmoidHead,
}

impl LayerOp {
    pub fn conv_params(&self) -> Option<(Conv2dParams, bool)> {
        match *self {
            LayerOp::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                groups,
                bias,
            } => Some((
                Conv2dParams {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    groups,
                },
                bias,
            )),
            LayerOp::Dwconv {
                channels,
                kernel,
                stride,
                padding,
                bias,
            } => Some((
                Conv2dParams {
                    in_ch: channels,
                    out_ch: channels,
                    kernel,
                    stride,
                    padding,
                    groups: channels,
                },
                bias,
            )),
            _ => None,
        }
    }

    /// Number of f32 weights this layer consumes from the blob.
    pub fn weight_count(&self) -> usize {
        if let Some((p, bias)) = self.conv_params() {
            return p.weight_len() + if bias { p.out_ch } else { 0 };
        }
        match *self {
            LayerOp::Bn { channels, .. } => 4 * channels,
            LayerOp::Se {
                channels,
                reduction,
            } => SeWeights::weight_len(channels, SeWeights::squeeze_for(channels, reduction)),
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Defaults to the previous layer (or the graph input for the first).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub op: LayerOp,
}

impl LayerSpec {
    pub fn new(op: LayerOp) -> Self {
        Self {
            name: None,
            inputs: Vec::new(),
            op,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn from(mut self, inputs: &[&str]) -> Self {
        self.inputs = inputs.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(default = "default_format")]
    pub format: String,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

fn default_format() -> String {
    FORMAT_TAG.to_string()
}

/// A layer with inputs resolved to node indices. Node 0 is the graph input;
/// layer `i` produces node `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedLayer {
    pub op: LayerOp,
    pub inputs: Vec<usize>,
    pub shape: (usize, usize, usize),
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GraphSpec = serde_json::from_str(text)
            .map_err(|e| Error::NetworkSpec(format!("invalid graph JSON: {e}")))?;
        if spec.format != FORMAT_TAG {
            return Err(Error::NetworkSpec(format!(
                "unsupported format tag {:?}",
                spec.format
            )));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.op.weight_count()).sum()
    }

    /// Resolves names, checks the graph is a DAG in listing order, and
    /// propagates `(channels, height, width)` through every node.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        let InputSpec {
            channels,
            height,
            width,
        } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::NetworkSpec("input dimensions must be positive".into()));
        }
        let mut names: HashMap<&str, usize> = HashMap::new();
        names.insert(INPUT_NODE, 0);
        let mut all_names: HashMap<&str, usize> = HashMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(n) = &l.name {
                if n == INPUT_NODE || all_names.insert(n.as_str(), i + 1).is_some() {
                    return Err(Error::NetworkSpec(format!("duplicate node name {n:?}")));
                }
            }
        }

        let mut shapes = vec![(channels, height, width)];
        let mut resolved = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let node = i + 1;
            let inputs: Vec<usize> = if layer.inputs.is_empty() {
                vec![node - 1]
            } else {
                layer
                    .inputs
                    .iter()
                    .map(|n| match names.get(n.as_str()) {
                        Some(&id) => Ok(id),
                        None if all_names.contains_key(n.as_str()) => Err(Error::NetworkSpec(
                            format!("layer {node} references later node {n:?}: graph is cyclic or out of order"),
                        )),
                        None => Err(Error::NetworkSpec(format!(
                            "layer {node} references unknown node {n:?}"
                        ))),
                    })
                    .collect::<Result<_>>()?
            };
            let in_shapes: Vec<_> = inputs.iter().map(|&id| shapes[id]).collect();
            let shape = infer_shape(&layer.op, &in_shapes)
                .map_err(|e| Error::NetworkSpec(format!("layer {node} ({}): {e}", describe(layer))))?;
            shapes.push(shape);
            if let Some(n) = &layer.name {
                names.insert(n.as_str(), node);
            }
            resolved.push(ResolvedLayer {
                op: layer.op.clone(),
                inputs,
                shape,
            });
        }

        let last = resolved
            .last()
            .ok_or_else(|| Error::NetworkSpec("graph has no layers".into()))?;
        if last.shape != (1, height, width) {
            return Err(Error::NetworkSpec(format!(
                "output node has shape {:?}, expected (1, {height}, {width})",
                last.shape
            )));
        }
        if !matches!(last.op, LayerOp::SigmoidHead) {
            return Err(Error::NetworkSpec("the final layer must be sigmoid_head".into()));
        }
        let mut used = vec![false; resolved.len() + 1];
        for l in &resolved {
            for &id in &l.inputs {
                used[id] = true;
            }
        }
        if let Some(dead) = (1..resolved.len()).find(|&id| !used[id]) {
            return Err(Error::NetworkSpec(format!(
                "node {dead} is never consumed; the graph must have a single output"
            )));
        }
        Ok(resolved)
    }
}

fn describe(layer: &LayerSpec) -> String {
    let kind = serde_json::to_value(&layer.op)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
        .unwrap_or_default();
    match &layer.name {
        Some(n) => format!("{kind} {n:?}"),
        None => kind,
    }
}

fn single(inputs: &[(usize, usize, usize)]) -> std::result::Result<(usize, usize, usize), String> {
    match inputs {
        [one] => Ok(*one),
        _ => Err(format!("expects exactly one input, got {}", inputs.len())),
    }
}

fn infer_shape(
    op: &LayerOp,
    inputs: &[(usize, usize, usize)],
) -> std::result::Result<(usize, usize, usize), String> {
    if let Some((p, _)) = op.conv_params() {
        let (c, h, w) = single(inputs)?;
        p.validate().map_err(|e| e.to_string())?;
        if c != p.in_ch {
            return Err(format!("channel mismatch: input has {c}, layer expects {}", p.in_ch));
        }
        return match (p.output_len(h), p.output_len(w)) {
            (Some(oh), Some(ow)) => Ok((p.out_ch, oh, ow)),
            _ => Err(format!("kernel {} does not fit {h}x{w}", p.kernel)),
        };
    }
    match *op {
        LayerOp::Bn { channels, .. } | LayerOp::Se { channels, .. } => {
            let s = single(inputs)?;
            if s.0 != channels {
                return Err(format!("channel mismatch: input has {}, layer expects {channels}", s.0));
            }
            if let LayerOp::Se { reduction, .. } = *op {
                if reduction == 0 {
                    return Err("reduction must be positive".into());
                }
            }
            Ok(s)
        }
        LayerOp::Act { .. } => single(inputs),
        LayerOp::GlobalAvgPool => single(inputs).map(|(c, _, _)| (c, 1, 1)),
        LayerOp::Upsample2xBilinear => single(inputs).map(|(c, h, w)| (c, 2 * h, 2 * w)),
        LayerOp::SigmoidHead => {
            let s = single(inputs)?;
            if s.0 != 1 {
                return Err(format!("sigmoid_head expects 1 channel, got {}", s.0));
            }
            Ok(s)
        }
        LayerOp::Add => {
            if inputs.len() < 2 {
                return Err("add needs at least two inputs".into());
            }
            if inputs.iter().any(|s| *s != inputs[0]) {
                return Err(format!("add input shapes differ: {inputs:?}"));
            }
            Ok(inputs[0])
        }
        LayerOp::Concat => {
            if inputs.len() < 2 {
                return Err("concat needs at least two inputs".into());
            }
            let (_, h, w) = inputs[0];
            if inputs.iter().any(|s| (s.1, s.2) != (h, w)) {
                return Err(format!("concat spatial dims differ: {inputs:?}"));
            }
            Ok((inputs.iter().map(|s| s.0).sum(), h, w))
        }
        LayerOp::Conv { .. } | LayerOp::Dwconv { .. } => unreachable!("handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(c: usize, h: usize, w: usize) -> InputSpec {
        InputSpec {
            channels: c,
            height: h,
            width: w,
        }
    }

    #[test]
    fn parses_layer_json() {
        let text = r#"{
            "input": {"channels": 1, "height": 4, "width": 4},
            "layers": [
                {"name": "c", "kind": "conv", "in_ch": 1, "out_ch": 1, "kernel": 1},
                {"kind": "act", "fn": "hswish"},
                {"kind": "sigmoid_head"}
            ]
        }"#;
        let g = GraphSpec::from_json(text).unwrap();
        assert_eq!(g.weight_count(), 2);
        let r = g.resolve().unwrap();
        assert_eq!(r[1].inputs, vec![1]);
        assert_eq!(r[2].shape, (1, 4, 4));
    }

    #[test]
    fn unknown_kind_rejected() {
        let text = r#"{"input": {"channels": 1, "height": 4, "width": 4},
            "layers": [{"kind": "maxpool"}]}"#;
        assert!(matches!(GraphSpec::from_json(text), Err(Error::NetworkSpec(_))));
    }

    #[test]
    fn forward_reference_is_cyclic() {
        let g = GraphSpec {
            format: FORMAT_TAG.into(),
            input: input(1, 4, 4),
            layers: vec![
                LayerSpec::new(LayerOp::Add).named("a").from(&["input", "b"]),
                LayerSpec::new(LayerOp::Act {
                    func: Activation::Relu,
                })
                .named("b"),
                LayerSpec::new(LayerOp::SigmoidHead),
            ],
        };
        let err = g.resolve().unwrap_err().to_string();
        assert!(err.contains("cyclic"), "{err}");
    }

    #[test]
    fn channel_mismatch_rejected() {
        let g = GraphSpec {
            format: FORMAT_TAG.into(),
            input: input(1, 4, 4),
            layers: vec![
                LayerSpec::new(LayerOp::Conv {
                    in_ch: 2,
                    out_ch: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    groups: 1,
                    bias: true,
                }),
                LayerSpec::new(LayerOp::SigmoidHead),
            ],
        };
        assert!(g.resolve().unwrap_err().to_string().contains("channel mismatch"));
    }

    #[test]
    fn concat_channels_sum_and_dead_nodes() {
        let conv = |i, o| LayerOp::Conv {
            in_ch: i,
            out_ch: o,
            kernel: 1,
            stride: 1,
            padding: 0,
            groups: 1,
            bias: false,
        };
        let g = GraphSpec {
            format: FORMAT_TAG.into(),
            input: input(1, 4, 4),
            layers: vec![
                LayerSpec::new(conv(1, 3)).named("a"),
                LayerSpec::new(LayerOp::Concat).named("cat").from(&["a", "input"]),
                LayerSpec::new(conv(4, 1)),
                LayerSpec::new(LayerOp::SigmoidHead),
            ],
        };
        let r = g.resolve().unwrap();
        assert_eq!(r[1].shape, (4, 4, 4));

        let mut dead = g.clone();
        dead.layers.insert(1, LayerSpec::new(conv(3, 3)).named("unused").from(&["a"]));
        assert!(dead.resolve().unwrap_err().to_string().contains("never consumed"));
    }

    #[test]
    fn output_must_match_input_resolution() {
        let g = GraphSpec {
            format: FORMAT_TAG.into(),
            input: input(1, 4, 4),
            layers: vec![
                LayerSpec::new(LayerOp::Conv {
                    in_ch: 1,
                    out_ch: 1,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                    groups: 1,
                    bias: true,
                }),
                LayerSpec::new(LayerOp::SigmoidHead),
            ],
        };
        assert!(g.resolve().is_err());
    }
}
