//! Forward kernels. Convolutions follow the cross-correlation convention with
//! zero padding; weights are laid out `[out_ch][in_ch / groups][k][k]`.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ingest::resize_plane_into;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dParams {
    pub fn weight_len(&self) -> usize {
        self.out_ch * (self.in_ch / self.groups) * self.kernel * self.kernel
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::Shape("kernel, stride and groups must be positive".into()));
        }
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::Shape("channel counts must be positive".into()));
        }
        if self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(Error::Shape(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        Ok(())
    }
}

/// Grouped 2-D convolution. Output planes are computed independently (in
/// parallel with the `parallel` feature); each output row is accumulated in
/// a single pass over the contributing input rows.
pub fn conv2d(
    input: &Tensor,
    weights: &[f32],
    bias: Option<&[f32]>,
    p: &Conv2dParams,
) -> Result<Tensor> {
    p.validate()?;
    if input.channels != p.in_ch {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            p.in_ch, input.channels
        )));
    }
    if weights.len() != p.weight_len() {
        return Err(Error::Shape(format!(
            "conv expects {} weights, got {}",
            p.weight_len(),
            weights.len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != p.out_ch {
            return Err(Error::Shape(format!(
                "conv expects {} biases, got {}",
                p.out_ch,
                b.len()
            )));
        }
    }
    let (oh, ow) = match (p.output_len(input.height), p.output_len(input.width)) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::Shape(format!(
                "kernel {} does not fit a {}x{} input with padding {}",
                p.kernel, input.height, input.width, p.padding
            )))
        }
    };

    let mut out = Tensor::zeros(p.out_ch, oh, ow);
    let plane = oh * ow;
    if plane == 0 {
        return Ok(out);
    }
    let cin_g = p.in_ch / p.groups;
    let cout_g = p.out_ch / p.groups;
    let k = p.kernel;
    let (ih, iw) = (input.height, input.width);

    // Output column range whose tap `kx` lands inside the input row.
    let col_ranges: Vec<(usize, usize)> = (0..k)
        .map(|kx| valid_range(kx, p.padding, p.stride, iw, ow))
        .collect();

    par::for_each_chunk_mut(&mut out.data, plane, |oc, out_plane| {
        let g = oc / cout_g;
        let w_oc = &weights[oc * cin_g * k * k..(oc + 1) * cin_g * k * k];
        let b = bias.map_or(0.0, |b| b[oc]);
        for (oy, row) in out_plane.chunks_exact_mut(ow).enumerate() {
            row.fill(b);
            for icl in 0..cin_g {
                let src_plane = input.plane(g * cin_g + icl);
                for ky in 0..k {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let src = &src_plane[iy as usize * iw..(iy as usize + 1) * iw];
                    let w_row = &w_oc[(icl * k + ky) * k..(icl * k + ky + 1) * k];
                    for (kx, &wv) in w_row.iter().enumerate() {
                        let (lo, hi) = col_ranges[kx];
                        if lo >= hi {
                            continue;
                        }
                        let first = lo * p.stride + kx - p.padding;
                        if p.stride == 1 {
                            let src = &src[first..first + (hi - lo)];
                            for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        } else {
                            for (j, o) in row[lo..hi].iter_mut().enumerate() {
                                *o += wv * src[first + j * p.stride];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

fn valid_range(kx: usize, pad: usize, stride: usize, iw: usize, ow: usize) -> (usize, usize) {
    // ix = ox * stride + kx - pad must satisfy 0 <= ix < iw
    let lo = if kx >= pad {
        0
    } else {
        (pad - kx).div_ceil(stride)
    };
    let hi = if iw + pad > kx {
        ((iw + pad - kx - 1) / stride + 1).min(ow)
    } else {
        0
    };
    (lo.min(ow), hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Relu6,
    Hswish,
    Hsigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => relu6(x),
            Activation::Hswish => x * relu6(x + 3.0) / 6.0,
            Activation::Hsigmoid => relu6(x + 3.0) / 6.0,
        }
    }
}

#[inline]
fn relu6(x: f32) -> f32 {
    x.clamp(0.0, 6.0)
}

pub fn activation_inplace(t: &mut Tensor, kind: Activation) {
    let chunk = t.plane_len().max(1);
    par::for_each_chunk_mut(&mut t.data, chunk, |_, plane| {
        for v in plane {
            *v = kind.eval(*v);
        }
    });
}

pub fn activation(t: &Tensor, kind: Activation) -> Tensor {
    let mut out = t.clone();
    activation_inplace(&mut out, kind);
    out
}

/// Per-channel `x * scale + shift`.
pub fn affine_channels_inplace(t: &mut Tensor, scale: &[f32], shift: &[f32]) {
    let chunk = t.plane_len().max(1);
    par::for_each_chunk_mut(&mut t.data, chunk, |c, plane| {
        let (s, b) = (scale[c], shift[c]);
        for v in plane {
            *v = *v * s + b;
        }
    });
}

/// Inference batch norm folded to a per-channel scale and shift.
pub fn batch_norm_coefficients(
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> (Vec<f32>, Vec<f32>) {
    let scale: Vec<f32> = gamma
        .iter()
        .zip(var)
        .map(|(&g, &v)| (g as f64 / (v as f64 + eps as f64).sqrt()) as f32)
        .collect();
    let shift = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    (scale, shift)
}

/// Channel means, accumulated in f64.
pub fn global_avg_pool(t: &Tensor) -> Tensor {
    let n = t.plane_len().max(1) as f64;
    let data = (0..t.channels)
        .map(|c| (t.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect();
    Tensor {
        channels: t.channels,
        height: 1,
        width: 1,
        data,
    }
}

/// Weights of a squeeze-excite block: two fully connected layers
/// `[squeeze][channels]` and `[channels][squeeze]` with biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SeWeights {
    pub channels: usize,
    pub squeeze: usize,
    pub fc1_w: Vec<f32>,
    pub fc1_b: Vec<f32>,
    pub fc2_w: Vec<f32>,
    pub fc2_b: Vec<f32>,
}

impl SeWeights {
    pub fn squeeze_for(channels: usize, reduction: usize) -> usize {
        (channels / reduction.max(1)).max(1)
    }

    pub fn weight_len(channels: usize, squeeze: usize) -> usize {
        2 * channels * squeeze + squeeze + channels
    }

    pub fn from_flat(channels: usize, squeeze: usize, flat: &[f32]) -> Result<Self> {
        if flat.len() != Self::weight_len(channels, squeeze) {
            return Err(Error::Shape("squeeze-excite weight count".into()));
        }
        let (fc1_w, rest) = flat.split_at(channels * squeeze);
        let (fc1_b, rest) = rest.split_at(squeeze);
        let (fc2_w, fc2_b) = rest.split_at(channels * squeeze);
        Ok(Self {
            channels,
            squeeze,
            fc1_w: fc1_w.to_vec(),
            fc1_b: fc1_b.to_vec(),
            fc2_w: fc2_w.to_vec(),
            fc2_b: fc2_b.to_vec(),
        })
    }

    /// Channel gate in `[0, 1]` for the pooled descriptor.
    pub fn gate(&self, pooled: &[f32]) -> Vec<f32> {
        let hidden: Vec<f32> = (0..self.squeeze)
            .map(|s| {
                let w = &self.fc1_w[s * self.channels..(s + 1) * self.channels];
                let z = self.fc1_b[s] + w.iter().zip(pooled).map(|(a, b)| a * b).sum::<f32>();
                Activation::Relu.eval(z)
            })
            .collect();
        (0..self.channels)
            .map(|c| {
                let w = &self.fc2_w[c * self.squeeze..(c + 1) * self.squeeze];
                let z = self.fc2_b[c] + w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f32>();
                Activation::Hsigmoid.eval(z)
            })
            .collect()
    }
}

/// pool -> fc -> relu -> fc -> hsigmoid -> channelwise scale.
pub fn se_block_inplace(t: &mut Tensor, w: &SeWeights) -> Result<()> {
    if t.channels != w.channels {
        return Err(Error::Shape(format!(
            "squeeze-excite expects {} channels, got {}",
            w.channels, t.channels
        )));
    }
    let pooled = global_avg_pool(t);
    let gate = w.gate(&pooled.data);
    let zeros = vec![0.0; gate.len()];
    affine_channels_inplace(t, &gate, &zeros);
    Ok(())
}

pub fn se_block(t: &Tensor, w: &SeWeights) -> Result<Tensor> {
    let mut out = t.clone();
    se_block_inplace(&mut out, w)?;
    Ok(out)
}

/// Corner-aligned bilinear upsampling to `2H x 2W`.
pub fn upsample2x_bilinear(t: &Tensor) -> Tensor {
    let (oh, ow) = (2 * t.height, 2 * t.width);
    let mut out = Tensor::zeros(t.channels, oh, ow);
    if t.plane_len() == 0 {
        return out;
    }
    for (c, dst) in out.data.chunks_exact_mut(oh * ow).enumerate() {
        resize_plane_into(t.plane(c), t.height, t.width, dst, oh, ow);
    }
    out
}

pub fn add(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("add needs at least one input".into()))?;
    let mut out = (*first).clone();
    for t in &inputs[1..] {
        if t.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "add shape {:?} vs {:?}",
                out.shape(),
                t.shape()
            )));
        }
        for (o, v) in out.data.iter_mut().zip(&t.data) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn concat(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat needs at least one input".into()))?;
    let (h, w) = (first.height, first.width);
    if let Some(t) = inputs.iter().find(|t| (t.height, t.width) != (h, w)) {
        return Err(Error::Shape(format!(
            "concat spatial {}x{} vs {}x{}",
            h, w, t.height, t.width
        )));
    }
    let channels = inputs.iter().map(|t| t.channels).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for t in inputs {
        data.extend_from_slice(&t.data);
    }
    Tensor::from_vec(channels, h, w, data)
}

/// Logistic sigmoid, clamped so the result is strictly inside `(0, 1)` in f32.
#[inline]
pub fn sigmoid(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-(x as f64)).exp());
    (s as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

pub fn sigmoid_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        *v = sigmoid(*v);
    }
}
