//! Built-in codecs.
//!
//! * Linear codecs: per-pixel channel mixing without nonlinearity. Decoding is
//!   affine in the latent, so the output variance under latent noise has a
//!   closed form (`α Σ_c w_c² σ_c²` on the foreground).
//! * [`toy_conv`]: a desk-scale convolutional generator, 64x64 images to an
//!   12x32x32 latent and back. Its weights come from a structured seeded
//!   initializer rather than training:
//!   - the encoder smooths the image and downsamples it into four "body"
//!     channels (intensity), four sparse "organ" channels (intensity above a
//!     cut) and four "context" channels (a wide Gaussian blur);
//!   - the first decoder layer upsamples, averaging each channel group, and
//!     its biases act as thresholds ahead of a ReLU;
//!   - the readout combines those ramps into a staircase logit with flat steps
//!     at the background, body and organ levels, so the decoder snaps to three
//!     tissue classes and small latent perturbations leave the output
//!     unchanged;
//!   - a hole detector (context minus twice the body average) fires on
//!     dark regions enclosed by body and fills them with a mid-grey that sits
//!     on the steepest part of the sigmoid. Off-manifold inputs are thus
//!     inpainted, and the inpainting is unstable under latent noise.
//!
//!   Every non-zero weight receives a small seeded jitter, and all values are
//!   rounded to `f32` so the committed fixture reproduces bit-exactly.

use rand::Rng;

use super::layers::{ConvSpec, Layer};
use super::CodecModel;
use crate::rng::{substream, Domain};

/// Side of the images the toy codec works on.
pub const TOY_SIDE: usize = 64;
/// Latent channels of the toy codec.
pub const TOY_CHANNELS: usize = 12;
/// Default initializer seed of the shipped toy codec fixture.
pub const TOY_SEED: u64 = 2023;
/// Background of the toy codec decodes to ~sigmoid(-8); anything above this
/// is treated as foreground.
pub const TOY_FOREGROUND_THRESHOLD: f64 = 0.05;

/// Identity codec on single-channel `height x width` images.
pub fn identity_linear(height: usize, width: usize) -> CodecModel {
    linear_codec((height, width), &[1.0], &[0.0], &[1.0], 0.0)
        .expect("identity codec is well formed")
}

/// Linear codec: latent channel `c = enc_w[c] * x + enc_b[c]`, output
/// `Σ_c dec_w[c] * h_c + dec_b`. Outputs are not clamped.
pub fn linear_codec(
    dims: (usize, usize),
    enc_w: &[f32],
    enc_b: &[f32],
    dec_w: &[f32],
    dec_b: f32,
) -> crate::Result<CodecModel> {
    let l = enc_w.len();
    let encoder = vec![Layer::Linear {
        in_channels: 1,
        out_channels: l,
        weight: enc_w.to_vec(),
        bias: enc_b.to_vec(),
    }];
    let decoder = vec![Layer::Linear {
        in_channels: dec_w.len(),
        out_channels: 1,
        weight: dec_w.to_vec(),
        bias: vec![dec_b],
    }];
    Ok(CodecModel::new("linear", dims, encoder, decoder)?.with_clamp(false))
}

/// Knobs of the toy codec initializer. The defaults are what ships.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConvDesign {
    /// Smoothed intensity above which the organ channels respond.
    pub organ_cut: f64,
    /// Decoded body-channel range over which the logit climbs from the
    /// background step to the body step.
    pub body_ramp: (f64, f64),
    /// Decoded organ-channel range of the body to organ climb.
    pub organ_ramp: (f64, f64),
    /// Hole detector threshold.
    pub hole_cut: f64,
    /// Logit gain of the hole detector.
    pub hole_gain: f64,
    /// Logits of the background, body and organ steps.
    pub logits: [f64; 3],
    /// Gaussian width (pixels) of the decoder's upsampling kernel.
    pub fine_sigma: f64,
    /// Gaussian width (pixels) of the encoder's context blur.
    pub coarse_sigma: f64,
    /// Relative amplitude of the seeded weight jitter.
    pub jitter: f64,
}

impl Default for ToyConvDesign {
    fn default() -> Self {
        Self {
            organ_cut: 0.675,
            body_ramp: (0.15, 0.3),
            organ_ramp: (0.03, 0.1),
            hole_cut: 0.1,
            hole_gain: 200.0,
            logits: [-8.0, 0.0, 5.0],
            fine_sigma: 2.0,
            coarse_sigma: 6.0,
            jitter: 0.01,
        }
    }
}

/// The shipped toy codec for a given initializer seed.
pub fn toy_conv(seed: u64) -> CodecModel {
    toy_conv_with(&ToyConvDesign::default(), seed)
}

pub fn toy_conv_with(design: &ToyConvDesign, seed: u64) -> CodecModel {
    const K0: usize = 25;
    const K1: usize = 4;
    const KD: usize = 8;
    const HIDDEN: usize = 5;
    let c = TOY_CHANNELS;
    let group = c / 3;
    let mut jitter = {
        let mut rng = substream(seed, Domain::Weights, 0);
        let amp = design.jitter;
        move |v: f64| {
            let u: f64 = rng.random();
            if v == 0.0 {
                0.0
            } else {
                v * (1.0 + amp * (2.0 * u - 1.0))
            }
        }
    };

    // Encoder layer 0: 1 -> 12, 25x25. Body and organ channels use a 3x3
    // smoothing, organ channels cut at `organ_cut`; context channels blur wide.
    let smooth = outer(&[1.0, 2.0, 1.0], 4.0);
    let narrow = embed(&smooth, 3, K0);
    let wide = outer(&gaussian(K0, design.coarse_sigma), 1.0);
    let mut w0 = Vec::with_capacity(c * K0 * K0);
    let mut b0 = Vec::with_capacity(c);
    for ch in 0..c {
        let kernel = if ch < 2 * group { &narrow } else { &wide };
        w0.extend(kernel.iter().map(|&v| jitter(v)));
        let organ = (group..2 * group).contains(&ch);
        b0.push(if organ { -design.organ_cut } else { 0.0 });
    }

    // Encoder layer 1: 12 -> 12, 4x4 stride 2, per-channel downsampling.
    let down = outer(&[1.0, 3.0, 3.0, 1.0], 8.0);
    let mut w1 = vec![0.0; c * c * K1 * K1];
    for ch in 0..c {
        let base = (ch * c + ch) * K1 * K1;
        for (i, &v) in down.iter().enumerate() {
            w1[base + i] = jitter(v);
        }
    }

    // Decoder layer 0: 12 -> 5, 8x8 transposed stride 2. Hidden channels:
    // body ramp start/end, organ ramp start/end, hole detector.
    let up = upsample_kernel(KD, design.fine_sigma);
    let mean = 1.0 / group as f64;
    let mut w2 = vec![0.0; c * HIDDEN * KD * KD];
    let mut put = |ic: usize, oc: usize, gain: f64| {
        let base = (ic * HIDDEN + oc) * KD * KD;
        for (i, &v) in up.iter().enumerate() {
            w2[base + i] = jitter(gain * mean * v);
        }
    };
    for i in 0..group {
        let (body, organ, context) = (i, group + i, 2 * group + i);
        put(body, 0, 1.0);
        put(body, 1, 1.0);
        put(organ, 2, 1.0);
        put(organ, 3, 1.0);
        put(body, 4, -2.0);
        put(context, 4, 1.0);
    }
    let b2 = vec![
        -design.body_ramp.0,
        -design.body_ramp.1,
        -design.organ_ramp.0,
        -design.organ_ramp.1,
        -design.hole_cut,
    ];

    // Decoder layer 1: 5 -> 1, 3x3 transposed, staircase logit readout.
    let [bg, body, organ] = design.logits;
    let body_slope = (body - bg) / (design.body_ramp.1 - design.body_ramp.0);
    let organ_slope = (organ - body) / (design.organ_ramp.1 - design.organ_ramp.0);
    let readout = [body_slope, -body_slope, organ_slope, -organ_slope, design.hole_gain];
    let mut w3 = Vec::with_capacity(HIDDEN * 9);
    for a in readout {
        w3.extend(smooth.iter().map(|&v| jitter(a * v)));
    }

    let conv = |cin, cout, k, stride, padding, w: Vec<f64>, b: Vec<f64>| ConvSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride,
        padding,
        weight: w.into_iter().map(|v| v as f32).collect(),
        bias: b.into_iter().map(|v| v as f32).collect(),
    };
    let encoder = vec![
        Layer::Conv2d(conv(1, c, K0, 1, K0 / 2, w0, b0)),
        Layer::Relu,
        Layer::Conv2d(conv(c, c, K1, 2, 1, w1, vec![0.0; c])),
    ];
    let decoder = vec![
        Layer::ConvTranspose2d(conv(c, HIDDEN, KD, 2, (KD - 2) / 2, w2, b2)),
        Layer::Relu,
        Layer::ConvTranspose2d(conv(HIDDEN, 1, 3, 1, 1, w3, vec![bg])),
        Layer::Sigmoid,
    ];
    CodecModel::new("toy-conv", (TOY_SIDE, TOY_SIDE), encoder, decoder)
        .expect("toy codec layers compose")
        .with_foreground_threshold(Some(TOY_FOREGROUND_THRESHOLD))
}

fn gaussian(k: usize, sigma: f64) -> Vec<f64> {
    let centre = (k as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..k)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Places a centred `small x small` kernel inside a `big x big` one.
fn embed(kernel: &[f64], small: usize, big: usize) -> Vec<f64> {
    let off = (big - small) / 2;
    let mut out = vec![0.0; big * big];
    for r in 0..small {
        for c in 0..small {
            out[(r + off) * big + c + off] = kernel[r * small + c];
        }
    }
    out
}

/// `k x k` kernel of a stride-2 transposed convolution with padding
/// `(k - 2) / 2` that interpolates with a Gaussian of width `sigma` output
/// pixels. Tap `i` sits `i - k/2 + 0.5` pixels from the input centre; the
/// taps reaching any one output pixel sum to 1.
fn upsample_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let centre = k as f64 / 2.0 - 0.5;
    let taps: Vec<f64> = (0..k)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let parity: f64 = taps.iter().step_by(2).sum();
    outer(&taps, parity)
}

fn outer(taps: &[f64], norm: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(taps.len() * taps.len());
    for a in taps {
        for b in taps {
            out.push(a * b / (norm * norm));
        }
    }
    out
}
