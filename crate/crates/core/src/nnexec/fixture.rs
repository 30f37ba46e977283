//! Reference small encoder-decoder: a compact UNet whose encoder uses
//! MobileNetV3-style inverted residual blocks (depthwise convolutions,
//! squeeze-excite, hard-swish). Its weights are seeded random values, not a
//! trained model; it exists to exercise the executor and time the pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{Activation, SeWeights};
use super::spec::{GraphSpec, InputSpec, LayerOp, LayerSpec, FORMAT_TAG};

pub const FIXTURE_SEED: u64 = 0x5EED_0C7;

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn push(&mut self, name: &str, inputs: &[&str], op: LayerOp) -> &mut Self {
        let mut l = LayerSpec::new(op).named(name);
        if !inputs.is_empty() {
            l = l.from(inputs);
        }
        self.layers.push(l);
        self
    }

    fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> &mut Self {
        self.push(
            name,
            &[],
            LayerOp::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding: kernel / 2,
                groups: 1,
                bias: false,
            },
        )
    }

    fn dw(&mut self, name: &str, channels: usize, kernel: usize, stride: usize) -> &mut Self {
        self.push(
            name,
            &[],
            LayerOp::Dwconv {
                channels,
                kernel,
                stride,
                padding: kernel / 2,
                bias: false,
            },
        )
    }

    fn bn(&mut self, name: &str, channels: usize) -> &mut Self {
        self.push(name, &[], LayerOp::Bn { channels, eps: 1e-5 })
    }

    fn act(&mut self, name: &str, func: Activation) -> &mut Self {
        self.push(name, &[], LayerOp::Act { func })
    }

    /// expand 1x1 -> depthwise -> [se] -> project 1x1, each followed by bn.
    #[allow(clippy::too_many_arguments)]
    fn inverted_residual(
        &mut self,
        prefix: &str,
        cin: usize,
        expand: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        act: Activation,
        se: bool,
    ) -> &mut Self {
        let n = |s: &str| format!("{prefix}_{s}");
        self.conv(&n("expand"), cin, expand, 1, 1)
            .bn(&n("expand_bn"), expand)
            .act(&n("expand_act"), act)
            .dw(&n("dw"), expand, kernel, stride)
            .bn(&n("dw_bn"), expand)
            .act(&n("dw_act"), act);
        if se {
            self.push(
                &n("se"),
                &[],
                LayerOp::Se {
                    channels: expand,
                    reduction: 4,
                },
            );
        }
        self.conv(&n("project"), expand, cout, 1, 1)
            .bn(&n("project_bn"), cout)
    }

    fn decoder(&mut self, prefix: &str, from: &str, skip: &str, cin: usize, cout: usize) -> &mut Self {
        let n = |s: &str| format!("{prefix}_{s}");
        self.push(&n("up"), &[from], LayerOp::Upsample2xBilinear)
            .push(&n("cat"), &[&n("up"), skip], LayerOp::Concat)
            .conv(&n("conv"), cin, cout, 3, 1)
            .bn(&n("bn"), cout)
            .act(&n("act"), Activation::Relu)
    }
}

/// Builds the reference graph for a single-channel `height x width` input.
/// Both dimensions must be divisible by 16.
pub fn small_unet(height: usize, width: usize) -> GraphSpec {
    assert!(
        height % 16 == 0 && width % 16 == 0,
        "small_unet needs dimensions divisible by 16"
    );
    let mut b = Builder { layers: Vec::new() };
    b.conv("stem", 1, 8, 3, 2)
        .bn("stem_bn", 8)
        .act("stem_act", Activation::Hswish)
        .dw("b1_dw", 8, 3, 1)
        .bn("b1_dw_bn", 8)
        .act("b1_dw_act", Activation::Relu)
        .conv("b1_project", 8, 8, 1, 1)
        .bn("skip1", 8)
        .inverted_residual("b2", 8, 24, 16, 3, 2, Activation::Relu, false)
        .act("skip2", Activation::Relu)
        .inverted_residual("b3", 16, 48, 24, 5, 2, Activation::Hswish, true)
        .act("skip3", Activation::Hswish)
        .inverted_residual("b4", 24, 72, 32, 5, 2, Activation::Hswish, true)
        .act("b4_out", Activation::Hswish)
        .inverted_residual("b5", 32, 96, 32, 3, 1, Activation::Hswish, true)
        .push("bottleneck", &["b4_out", "b5_project_bn"], LayerOp::Add)
        .decoder("d3", "bottleneck", "skip3", 32 + 24, 24)
        .decoder("d2", "d3_act", "skip2", 24 + 16, 16)
        .decoder("d1", "d2_act", "skip1", 16 + 8, 8)
        .decoder("d0", "d1_act", "input", 8 + 1, 8)
        .push(
            "head",
            &[],
            LayerOp::Conv {
                in_ch: 8,
                out_ch: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                groups: 1,
                bias: true,
            },
        )
        .push("prob", &[], LayerOp::SigmoidHead);
    GraphSpec {
        format: FORMAT_TAG.into(),
        input: InputSpec {
            channels: 1,
            height,
            width,
        },
        layers: b.layers,
    }
}

/// Seeded weights in listing order with per-kind scaling: He-uniform
/// convolutions, near-identity batch norms, small biases.
pub fn seeded_weights(spec: &GraphSpec, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.weight_count());
    let uniform = |rng: &mut ChaCha8Rng, out: &mut Vec<f32>, n: usize, lo: f32, hi: f32| {
        for _ in 0..n {
            out.push(lo + (hi - lo) * rng.random::<f32>());
        }
    };
    for layer in &spec.layers {
        if let Some((p, bias)) = layer.op.conv_params() {
            let fan_in = (p.in_ch / p.groups * p.kernel * p.kernel) as f32;
            let a = (6.0 / fan_in).sqrt();
            uniform(&mut rng, &mut out, p.weight_len(), -a, a);
            if bias {
                uniform(&mut rng, &mut out, p.out_ch, -0.1, 0.1);
            }
            continue;
        }
        match layer.op {
            LayerOp::Bn { channels, .. } => {
                uniform(&mut rng, &mut out, channels, 0.8, 1.2);
                uniform(&mut rng, &mut out, channels, -0.1, 0.1);
                uniform(&mut rng, &mut out, channels, -0.1, 0.1);
                uniform(&mut rng, &mut out, channels, 0.5, 1.5);
            }
            LayerOp::Se {
                channels,
                reduction,
            } => {
                let s = SeWeights::squeeze_for(channels, reduction);
                let a1 = (3.0 / channels as f32).sqrt();
                let a2 = (3.0 / s as f32).sqrt();
                uniform(&mut rng, &mut out, s * channels, -a1, a1);
                uniform(&mut rng, &mut out, s, -0.1, 0.1);
                uniform(&mut rng, &mut out, channels * s, -a2, a2);
                uniform(&mut rng, &mut out, channels, -0.1, 0.1);
            }
            _ => {}
        }
    }
    debug_assert_eq!(out.len(), spec.weight_count());
    out
}
