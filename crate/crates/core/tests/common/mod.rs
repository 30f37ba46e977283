//! Naive reference implementations used as test oracles. Everything here is
//! written for clarity, computed in f64, and shares no code with the crate.
#![allow(dead_code)]

use std::collections::VecDeque;

use choroid_core::nnexec::{Activation, Conv2dParams, GraphSpec, LayerOp, Tensor};

/// Seven-loop grouped convolution.
pub fn naive_conv(input: &Tensor, w: &[f32], bias: Option<&[f32]>, p: &Conv2dParams) -> Vec<f64> {
    conv_f64(&T64::from_tensor(input), w, bias, p, out_len(input.height, p), out_len(input.width, p))
}

pub fn out_len(n: usize, p: &Conv2dParams) -> usize {
    (n + 2 * p.padding - p.kernel) / p.stride + 1
}

/// Dense f64 tensor for the reference executor.
#[derive(Clone, Debug)]
pub struct T64 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl T64 {
    pub fn from_tensor(t: &Tensor) -> Self {
        T64 { c: t.channels, h: t.height, w: t.width, d: t.data.iter().map(|&v| v as f64).collect() }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }
}

fn act(kind: Activation, x: f64) -> f64 {
    let r6 = |v: f64| v.clamp(0.0, 6.0);
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Relu6 => r6(x),
        Activation::Hswish => x * r6(x + 3.0) / 6.0,
        Activation::Hsigmoid => r6(x + 3.0) / 6.0,
    }
}

/// Corner-aligned bilinear sample of plane `c` at output index `(oy, ox)`.
pub fn bilinear_corner(src: &T64, c: usize, oy: usize, ox: usize, oh: usize, ow: usize) -> f64 {
    let sy = if oh > 1 { oy as f64 * (src.h - 1) as f64 / (oh - 1) as f64 } else { 0.0 };
    let sx = if ow > 1 { ox as f64 * (src.w - 1) as f64 / (ow - 1) as f64 } else { 0.0 };
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(src.h - 1), (x0 + 1).min(src.w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let top = src.at(c, y0, x0) * (1.0 - fx) + src.at(c, y0, x1) * fx;
    let bot = src.at(c, y1, x0) * (1.0 - fx) + src.at(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Unfused, unoptimized forward pass of a graph. Batch norms are applied as
/// `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn naive_forward(spec: &GraphSpec, weights: &[f32], input: &Tensor) -> T64 {
    let layers = spec.resolve().expect("valid graph");
    let mut nodes: Vec<T64> = vec![T64 {
        c: input.channels,
        h: input.height,
        w: input.width,
        d: input.data.iter().map(|&v| v as f64).collect(),
    }];
    let mut off = 0;
    for layer in &layers {
        let n = layer.op.weight_count();
        let w = &weights[off..off + n];
        off += n;
        let x = &nodes[layer.inputs[0]];
        let out = if let Some((p, has_bias)) = layer.op.conv_params() {
            let wl = p.weight_len();
            let bias = has_bias.then(|| &w[wl..]);
            let oh = (x.h + 2 * p.padding - p.kernel) / p.stride + 1;
            let ow = (x.w + 2 * p.padding - p.kernel) / p.stride + 1;
            let d = conv_f64(x, &w[..wl], bias, &p, oh, ow);
            T64 { c: p.out_ch, h: oh, w: ow, d }
        } else {
            match &layer.op {
                LayerOp::Bn { channels, eps } => {
                    let c = *channels;
                    let plane = x.h * x.w;
                    let mut d = x.d.clone();
                    for ch in 0..c {
                        let (g, b, m, v) = (w[ch] as f64, w[c + ch] as f64, w[2 * c + ch] as f64, w[3 * c + ch] as f64);
                        for val in &mut d[ch * plane..(ch + 1) * plane] {
                            *val = (*val - m) / (v + *eps as f64).sqrt() * g + b;
                        }
                    }
                    T64 { d, ..x.clone() }
                }
                LayerOp::Act { func } => T64 { d: x.d.iter().map(|&v| act(*func, v)).collect(), ..x.clone() },
                LayerOp::Se { channels, reduction } => {
                    let c = *channels;
                    let s = (c / (*reduction).max(1)).max(1);
                    let plane = x.h * x.w;
                    let pooled: Vec<f64> = (0..c)
                        .map(|ch| x.d[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
                        .collect();
                    let (fc1w, rest) = w.split_at(c * s);
                    let (fc1b, rest) = rest.split_at(s);
                    let (fc2w, fc2b) = rest.split_at(c * s);
                    let hidden: Vec<f64> = (0..s)
                        .map(|j| {
                            let z = fc1b[j] as f64 + (0..c).map(|i| fc1w[j * c + i] as f64 * pooled[i]).sum::<f64>();
                            z.max(0.0)
                        })
                        .collect();
                    let mut d = x.d.clone();
                    for ch in 0..c {
                        let z = fc2b[ch] as f64 + (0..s).map(|j| fc2w[ch * s + j] as f64 * hidden[j]).sum::<f64>();
                        let g = act(Activation::Hsigmoid, z);
                        for val in &mut d[ch * plane..(ch + 1) * plane] {
                            *val *= g;
                        }
                    }
                    T64 { d, ..x.clone() }
                }
                LayerOp::GlobalAvgPool => {
                    let plane = x.h * x.w;
                    let d = (0..x.c).map(|ch| x.d[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64).collect();
                    T64 { c: x.c, h: 1, w: 1, d }
                }
                LayerOp::Upsample2xBilinear => {
                    let (oh, ow) = (2 * x.h, 2 * x.w);
                    let mut d = Vec::with_capacity(x.c * oh * ow);
                    for ch in 0..x.c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                d.push(bilinear_corner(x, ch, oy, ox, oh, ow));
                            }
                        }
                    }
                    T64 { c: x.c, h: oh, w: ow, d }
                }
                LayerOp::Add => {
                    let mut d = x.d.clone();
                    for &id in &layer.inputs[1..] {
                        for (a, b) in d.iter_mut().zip(&nodes[id].d) {
                            *a += b;
                        }
                    }
                    T64 { d, ..x.clone() }
                }
                LayerOp::Concat => {
                    let mut d = Vec::new();
                    let mut c = 0;
                    for &id in &layer.inputs {
                        d.extend_from_slice(&nodes[id].d);
                        c += nodes[id].c;
                    }
                    T64 { c, h: x.h, w: x.w, d }
                }
                LayerOp::SigmoidHead => T64 { d: x.d.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(), ..x.clone() },
                LayerOp::Conv { .. } | LayerOp::Dwconv { .. } => unreachable!(),
            }
        };
        nodes.push(out);
    }
    nodes.pop().unwrap()
}

fn conv_f64(x: &T64, w: &[f32], bias: Option<&[f32]>, p: &Conv2dParams, oh: usize, ow: usize) -> Vec<f64> {
    let icg = p.in_ch / p.groups;
    let ocg = p.out_ch / p.groups;
    let k = p.kernel;
    let mut out = vec![0.0; p.out_ch * oh * ow];
    for oc in 0..p.out_ch {
        let g = oc / ocg;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
                for icl in 0..icg {
                    for ky in 0..k {
                        let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            acc += w[((oc * icg + icl) * k + ky) * k + kx] as f64
                                * x.at(g * icg + icl, iy as usize, ix as usize);
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// ROC curve by sweeping every distinct threshold from high to low and
/// integrating with the trapezoid rule. Ties move TPR and FPR together.
pub fn roc_sweep_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut prev_tpr, mut prev_fpr, mut area) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && !**l).count() as f64;
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Largest 8-connected component by breadth-first flood fill; ties resolve
/// to the component whose first raster pixel comes first.
pub fn flood_fill_largest(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![0usize; mask.len()];
    let mut best = (0usize, 0usize);
    let mut next = 1;
    for start in 0..mask.len() {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        let mut size = 0;
        let mut q = VecDeque::from([start]);
        label[start] = next;
        while let Some(i) = q.pop_front() {
            size += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask[j] && label[j] == 0 {
                        label[j] = next;
                        q.push_back(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    label.iter().map(|&l| l != 0 && l == best.0).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson r from the textbook definition.
pub fn pearson_def(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (1-based) by counting: rank = #less + (#equal + 1) / 2.
pub fn ranks_def(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let eq = v.iter().filter(|&&b| b == a).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_def(x: &[f64], y: &[f64]) -> f64 {
    pearson_def(&ranks_def(x), &ranks_def(y))
}

pub fn mae_def(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

/// Student t density.
pub fn t_pdf(t: f64, nu: f64) -> f64 {
    let lg = |x: f64| ln_gamma(x);
    (lg((nu + 1.0) / 2.0) - lg(nu / 2.0)).exp() / (nu * std::f64::consts::PI).sqrt()
        * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0)
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided p-value by Simpson integration of the density over `[0, |t|]`.
pub fn t_two_sided_p(t: f64, nu: f64) -> f64 {
    let n = 20_000;
    let b = t.abs();
    let h = b / n as f64;
    let mut acc = t_pdf(0.0, nu) + t_pdf(b, nu);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * t_pdf(i as f64 * h, nu);
    }
    1.0 - 2.0 * acc * h / 3.0
}
