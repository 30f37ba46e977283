use std::path::Path;

use super::kernels::{
    self, activation_inplace, affine_channels_inplace, batch_norm_coefficients, Activation,
    Conv2dParams, SeWeights,
};
use super::spec::{GraphSpec, InputSpec, LayerOp};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NNX1";
pub const WEIGHTS_HEADER_LEN: usize = 16;

#[derive(Clone, Debug)]
enum StepOp {
    Conv {
        params: Conv2dParams,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    },
    ChannelAffine {
        scale: Vec<f32>,
        shift: Vec<f32>,
    },
    Act(Activation),
    Se(SeWeights),
    GlobalAvgPool,
    Upsample,
    Add,
    Concat,
    Sigmoid,
    /// Pass-through left behind by batch-norm folding.
    Identity,
}

#[derive(Clone, Debug)]
struct Step {
    op: StepOp,
    inputs: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct NetworkOptions {
    /// Fold inference batch norm into a directly preceding convolution whose
    /// output feeds nothing else.
    pub fold_bn: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self { fold_bn: true }
    }
}

/// A validated, immutable network ready for concurrent forward passes.
#[derive(Clone, Debug)]
pub struct Network {
    spec: GraphSpec,
    steps: Vec<Step>,
    consumers: Vec<usize>,
    folded: usize,
}

impl Network {
    pub fn new(spec: GraphSpec, weights: &[f32], options: NetworkOptions) -> Result<Self> {
        let resolved = spec.resolve()?;
        let expected = spec.weight_count();
        if weights.len() != expected {
            return Err(Error::WeightCount {
                expected,
                found: weights.len(),
            });
        }

        let mut consumers = vec![0usize; resolved.len() + 1];
        for l in &resolved {
            for &id in &l.inputs {
                consumers[id] += 1;
            }
        }

        let mut offset = 0;
        let mut steps: Vec<Step> = Vec::with_capacity(resolved.len());
        let mut folded = 0;
        for layer in &resolved {
            let n = layer.op.weight_count();
            let w = &weights[offset..offset + n];
            offset += n;
            let op = if let Some((params, has_bias)) = layer.op.conv_params() {
                let wl = params.weight_len();
                StepOp::Conv {
                    params,
                    weights: w[..wl].to_vec(),
                    bias: has_bias.then(|| w[wl..].to_vec()),
                }
            } else {
                match layer.op {
                    LayerOp::Bn { channels, eps } => {
                        let (gamma, rest) = w.split_at(channels);
                        let (beta, rest) = rest.split_at(channels);
                        let (mean, var) = rest.split_at(channels);
                        if var.iter().any(|&v| v + eps <= 0.0) {
                            return Err(Error::NetworkSpec(
                                "batch norm variance + eps must be positive".into(),
                            ));
                        }
                        let (scale, shift) = batch_norm_coefficients(gamma, beta, mean, var, eps);
                        let src = layer.inputs[0];
                        if options.fold_bn && src > 0 && consumers[src] == 1 {
                            if let StepOp::Conv {
                                params,
                                weights: cw,
                                bias,
                            } = &mut steps[src - 1].op
                            {
                                fold_into_conv(params, cw, bias, &scale, &shift);
                                folded += 1;
                                steps.push(Step {
                                    op: StepOp::Identity,
                                    inputs: layer.inputs.clone(),
                                });
                                continue;
                            }
                        }
                        StepOp::ChannelAffine { scale, shift }
                    }
                    LayerOp::Act { func } => StepOp::Act(func),
                    LayerOp::Se {
                        channels,
                        reduction,
                    } => SeWeights::from_flat(
                        channels,
                        SeWeights::squeeze_for(channels, reduction),
                        w,
                    )
                    .map(StepOp::Se)?,
                    LayerOp::GlobalAvgPool => StepOp::GlobalAvgPool,
                    LayerOp::Upsample2xBilinear => StepOp::Upsample,
                    LayerOp::Add => StepOp::Add,
                    LayerOp::Concat => StepOp::Concat,
                    LayerOp::SigmoidHead => StepOp::Sigmoid,
                    LayerOp::Conv { .. } | LayerOp::Dwconv { .. } => unreachable!(),
                }
            };
            steps.push(Step {
                op,
                inputs: layer.inputs.clone(),
            });
        }

        Ok(Self {
            spec,
            steps,
            consumers,
            folded,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn input_spec(&self) -> InputSpec {
        self.spec.input
    }

    /// Number of batch-norm layers folded into convolutions at load time.
    pub fn folded_batch_norms(&self) -> usize {
        self.folded
    }

    /// Runs the graph on a single-channel grid at the network's input size.
    pub fn forward(&self, input: &Grid<f32>) -> Result<Grid<f32>> {
        let t = Tensor::from_vec(1, input.height(), input.width(), input.as_slice().to_vec())?;
        let out = self.forward_tensor(t)?;
        Grid::from_vec(out.width, out.height, out.data)
    }

    pub fn forward_tensor(&self, input: Tensor) -> Result<Tensor> {
        let InputSpec {
            channels,
            height,
            width,
        } = self.spec.input;
        if input.shape() != (channels, height, width) {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                (channels, height, width),
                input.shape()
            )));
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.steps.len() + 1];
        let mut remaining = self.consumers.clone();
        values[0] = Some(input);

        for (i, step) in self.steps.iter().enumerate() {
            let out = match &step.op {
                StepOp::Add | StepOp::Concat => {
                    let refs: Vec<&Tensor> = step
                        .inputs
                        .iter()
                        .map(|&id| values[id].as_ref().expect("node computed"))
                        .collect();
                    let out = if matches!(step.op, StepOp::Add) {
                        kernels::add(&refs)?
                    } else {
                        kernels::concat(&refs)?
                    };
                    for &id in &step.inputs {
                        release(&mut values, &mut remaining, id);
                    }
                    out
                }
                StepOp::Conv {
                    params,
                    weights,
                    bias,
                } => {
                    let id = step.inputs[0];
                    let out = kernels::conv2d(
                        values[id].as_ref().expect("node computed"),
                        weights,
                        bias.as_deref(),
                        params,
                    )?;
                    release(&mut values, &mut remaining, id);
                    out
                }
                StepOp::GlobalAvgPool | StepOp::Upsample => {
                    let id = step.inputs[0];
                    let src = values[id].as_ref().expect("node computed");
                    let out = if matches!(step.op, StepOp::Upsample) {
                        kernels::upsample2x_bilinear(src)
                    } else {
                        kernels::global_avg_pool(src)
                    };
                    release(&mut values, &mut remaining, id);
                    out
                }
                elementwise => {
                    let mut t = take_or_clone(&mut values, &mut remaining, step.inputs[0]);
                    match elementwise {
                        StepOp::ChannelAffine { scale, shift } => {
                            affine_channels_inplace(&mut t, scale, shift)
                        }
                        StepOp::Act(kind) => activation_inplace(&mut t, *kind),
                        StepOp::Se(w) => kernels::se_block_inplace(&mut t, w)?,
                        StepOp::Sigmoid => kernels::sigmoid_inplace(&mut t),
                        StepOp::Identity => {}
                        _ => unreachable!(),
                    }
                    t
                }
            };
            values[i + 1] = Some(out);
        }
        Ok(values
            .pop()
            .flatten()
            .expect("graph has at least one layer"))
    }
}

fn take_or_clone(values: &mut [Option<Tensor>], remaining: &mut [usize], id: usize) -> Tensor {
    remaining[id] -= 1;
    if remaining[id] == 0 {
        values[id].take().expect("node computed")
    } else {
        values[id].clone().expect("node computed")
    }
}

fn release(values: &mut [Option<Tensor>], remaining: &mut [usize], id: usize) {
    remaining[id] -= 1;
    if remaining[id] == 0 {
        values[id] = None;
    }
}

fn fold_into_conv(
    params: &Conv2dParams,
    weights: &mut [f32],
    bias: &mut Option<Vec<f32>>,
    scale: &[f32],
    shift: &[f32],
) {
    let per_oc = params.weight_len() / params.out_ch;
    for (oc, chunk) in weights.chunks_exact_mut(per_oc).enumerate() {
        for w in chunk {
            *w *= scale[oc];
        }
    }
    let b = bias.get_or_insert_with(|| vec![0.0; params.out_ch]);
    for ((b, &s), &t) in b.iter_mut().zip(scale).zip(shift) {
        *b = *b * s + t;
    }
}

/// Parses a weights blob: raw little-endian f32, optionally preceded by a
/// 16-byte header (`"NNX1"`, u64 LE count, 4 reserved bytes).
pub fn parse_weights(bytes: &[u8]) -> Result<Vec<f32>> {
    let (declared, body) = if bytes.len() >= WEIGHTS_HEADER_LEN && &bytes[..4] == WEIGHTS_MAGIC {
        let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        (Some(count), &bytes[WEIGHTS_HEADER_LEN..])
    } else {
        (None, bytes)
    };
    if body.len() % 4 != 0 {
        return Err(Error::NetworkSpec(format!(
            "weights blob length {} is not a multiple of 4",
            body.len()
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(count) = declared {
        if count != values.len() {
            return Err(Error::WeightCount {
                expected: count,
                found: values.len(),
            });
        }
    }
    Ok(values)
}

pub fn encode_weights(weights: &[f32], with_header: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(weights.len() * 4 + WEIGHTS_HEADER_LEN);
    if with_header {
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
    }
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Loads a JSON graph and its weights blob, folding batch norms.
pub fn load_network(spec_path: &Path, weights_path: &Path) -> Result<Network> {
    load_network_with(spec_path, weights_path, NetworkOptions::default())
}

pub fn load_network_with(
    spec_path: &Path,
    weights_path: &Path,
    options: NetworkOptions,
) -> Result<Network> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec = GraphSpec::from_json(&text)?;
    let bytes = std::fs::read(weights_path).map_err(|e| Error::io(weights_path, e))?;
    let weights = parse_weights(&bytes)?;
    Network::new(spec, &weights, options)
}

#[cfg(test)]
mod tests {
    use super::super::spec::{LayerSpec, FORMAT_TAG};
    use super::*;

    fn identity_spec(h: usize, w: usize) -> GraphSpec {
        GraphSpec {
            format: FORMAT_TAG.into(),
            input: InputSpec {
                channels: 1,
                height: h,
                width: w,
            },
            layers: vec![
                LayerSpec::new(LayerOp::Conv {
                    in_ch: 1,
                    out_ch: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    groups: 1,
                    bias: true,
                }),
                LayerSpec::new(LayerOp::SigmoidHead),
            ],
        }
    }

    #[test]
    fn weight_count_off_by_one() {
        let mut spec = identity_spec(4, 4);
        spec.layers.insert(
            1,
            LayerSpec::new(LayerOp::Conv {
                in_ch: 1,
                out_ch: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                groups: 1,
                bias: false,
            }),
        );
        let n = spec.weight_count();
        let err = Network::new(spec, &vec![0.5; n - 1], NetworkOptions::default()).unwrap_err();
        assert!(matches!(err, Error::WeightCount { expected, found } if expected == n && found == n - 1));
    }

    #[test]
    fn identity_network_is_sigmoid() {
        let net = Network::new(identity_spec(3, 5), &[1.0, 0.0], NetworkOptions::default()).unwrap();
        let g = Grid::from_fn(5, 3, |r, c| r as f32 - c as f32 * 0.5);
        let out = net.forward(&g).unwrap();
        for (o, i) in out.as_slice().iter().zip(g.as_slice()) {
            assert!((o - 1.0 / (1.0 + (-i).exp())).abs() < 1e-7);
        }
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = Network::new(identity_spec(3, 5), &[1.0, 0.0], NetworkOptions::default()).unwrap();
        assert!(net.forward(&Grid::new(4, 3, 0.0)).is_err());
    }

    #[test]
    fn weights_header_round_trip() {
        let w = vec![1.5f32, -2.0, 3.25];
        assert_eq!(parse_weights(&encode_weights(&w, true)).unwrap(), w);
        assert_eq!(parse_weights(&encode_weights(&w, false)).unwrap(), w);
        let mut bad = encode_weights(&w, true);
        bad.truncate(bad.len() - 4);
        assert!(matches!(parse_weights(&bad), Err(Error::WeightCount { .. })));
        assert!(parse_weights(&[0u8; 7]).is_err());
    }
}
