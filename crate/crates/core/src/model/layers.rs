//! Forward passes for the layer kinds a codec is built from.
//!
//! Convolutions are cross-correlations with zero padding. Weight layouts
//! follow the common `(out, in, kh, kw)` convention for `Conv2d` and
//! `(in, out, kh, kw)` for `ConvTranspose2d`. Weights are stored as `f32` and
//! all arithmetic is `f64` with a fixed summation order, so forward passes are
//! bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::LatentCode;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvSpec {
    pub fn weight_shape(&self, transposed: bool) -> [usize; 4] {
        let (a, b) = if transposed {
            (self.in_channels, self.out_channels)
        } else {
            (self.out_channels, self.in_channels)
        };
        [a, b, self.kernel, self.kernel]
    }

    fn validate(&self, transposed: bool) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0
        {
            return Err(Error::InvalidArgument(
                "conv channels, kernel and stride must be positive".into(),
            ));
        }
        let expected: usize = self.weight_shape(transposed).iter().product();
        if self.weight.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "conv weights {} / bias {} do not match shape {:?} / {}",
                self.weight.len(),
                self.bias.len(),
                self.weight_shape(transposed),
                self.out_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Per-pixel channel mixing; `weight` is `(out, in)`.
    Linear {
        in_channels: usize,
        out_channels: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    Conv2d(ConvSpec),
    ConvTranspose2d(ConvSpec),
    Relu,
    Sigmoid,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Conv2d(_) => "conv",
            Layer::ConvTranspose2d(_) => "conv_transpose",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Layer::Linear {
                in_channels,
                out_channels,
                weight,
                bias,
            } => {
                if *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::InvalidArgument("linear channels must be positive".into()));
                }
                if weight.len() != in_channels * out_channels || bias.len() != *out_channels {
                    return Err(Error::Shape(format!(
                        "linear weights {} / bias {} do not match {out_channels}x{in_channels}",
                        weight.len(),
                        bias.len()
                    )));
                }
                Ok(())
            }
            Layer::Conv2d(spec) => spec.validate(false),
            Layer::ConvTranspose2d(spec) => spec.validate(true),
            Layer::Relu | Layer::Sigmoid => Ok(()),
        }
    }

    /// Output `(channels, height, width)` for a given input shape.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input;
        let expect_in = |n: usize| {
            if n == c {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{} layer expects {n} input channels, got {c}",
                    self.kind()
                )))
            }
        };
        match self {
            Layer::Linear {
                in_channels,
                out_channels,
                ..
            } => {
                expect_in(*in_channels)?;
                Ok((*out_channels, h, w))
            }
            Layer::Conv2d(s) => {
                expect_in(s.in_channels)?;
                let (ph, pw) = (h + 2 * s.padding, w + 2 * s.padding);
                if ph < s.kernel || pw < s.kernel {
                    return Err(Error::Shape(format!(
                        "conv kernel {} exceeds padded input {ph}x{pw}",
                        s.kernel
                    )));
                }
                Ok((
                    s.out_channels,
                    (ph - s.kernel) / s.stride + 1,
                    (pw - s.kernel) / s.stride + 1,
                ))
            }
            Layer::ConvTranspose2d(s) => {
                expect_in(s.in_channels)?;
                let full_h = (h - 1) * s.stride + s.kernel;
                let full_w = (w - 1) * s.stride + s.kernel;
                if full_h <= 2 * s.padding || full_w <= 2 * s.padding {
                    return Err(Error::Shape(format!(
                        "transposed conv padding {} consumes the whole output",
                        s.padding
                    )));
                }
                Ok((
                    s.out_channels,
                    full_h - 2 * s.padding,
                    full_w - 2 * s.padding,
                ))
            }
            Layer::Relu | Layer::Sigmoid => Ok(input),
        }
    }

    pub fn forward(&self, x: &LatentCode) -> Result<LatentCode> {
        let (c, h, w) = self.output_shape(x.shape())?;
        let data = match self {
            Layer::Linear {
                in_channels,
                weight,
                bias,
                ..
            } => linear(x, *in_channels, c, weight, bias),
            Layer::Conv2d(s) => conv2d(x, s, h, w),
            Layer::ConvTranspose2d(s) => conv_transpose2d(x, s, h, w),
            Layer::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Layer::Sigmoid => x.data().iter().map(|&v| sigmoid(v)).collect(),
        };
        Ok(LatentCode::from_raw(c, h, w, data))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn linear(x: &LatentCode, cin: usize, cout: usize, weight: &[f32], bias: &[f32]) -> Vec<f64> {
    let plane = x.plane_len();
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(f64::from(bias[o]));
        for i in 0..cin {
            let wv = f64::from(weight[o * cin + i]);
            for (d, &s) in dst.iter_mut().zip(x.channel(i)) {
                *d += wv * s;
            }
        }
    }
    out
}

fn conv2d(x: &LatentCode, s: &ConvSpec, oh: usize, ow: usize) -> Vec<f64> {
    let (_, ih, iw) = x.shape();
    let k = s.kernel;
    let mut out = vec![0.0; s.out_channels * oh * ow];
    for oc in 0..s.out_channels {
        let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        dst.fill(f64::from(s.bias[oc]));
        for ic in 0..s.in_channels {
            let kernel = &s.weight[(oc * s.in_channels + ic) * k * k..][..k * k];
            let taps: Vec<(usize, usize, f64)> = (0..k * k)
                .filter(|&i| kernel[i] != 0.0)
                .map(|i| (i / k, i % k, f64::from(kernel[i])))
                .collect();
            if taps.is_empty() {
                continue;
            }
            let src = x.channel(ic);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for &(ky, kx, w) in &taps {
                        let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        if iy < 0 || iy >= ih as isize || ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        acc += w * src[iy as usize * iw + ix as usize];
                    }
                    dst[oy * ow + ox] += acc;
                }
            }
        }
    }
    out
}

fn conv_transpose2d(x: &LatentCode, s: &ConvSpec, oh: usize, ow: usize) -> Vec<f64> {
    let (_, ih, iw) = x.shape();
    let k = s.kernel;
    let taps = |o: usize, n_in: usize| -> Vec<(usize, usize)> {
        (0..k)
            .filter_map(|kk| {
                let t = (o + s.padding) as isize - kk as isize;
                if t < 0 || !(t as usize).is_multiple_of(s.stride) {
                    return None;
                }
                let i = t as usize / s.stride;
                (i < n_in).then_some((i, kk))
            })
            .collect()
    };
    let row_taps: Vec<_> = (0..oh).map(|o| taps(o, ih)).collect();
    let col_taps: Vec<_> = (0..ow).map(|o| taps(o, iw)).collect();

    let mut out = vec![0.0; s.out_channels * oh * ow];
    for oc in 0..s.out_channels {
        let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        dst.fill(f64::from(s.bias[oc]));
        for ic in 0..s.in_channels {
            let kernel = &s.weight[(ic * s.out_channels + oc) * k * k..][..k * k];
            if kernel.iter().all(|&w| w == 0.0) {
                continue;
            }
            let src = x.channel(ic);
            for (oy, rows) in row_taps.iter().enumerate() {
                for (ox, cols) in col_taps.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(iy, ky) in rows {
                        for &(ix, kx) in cols {
                            acc += f64::from(kernel[ky * k + kx]) * src[iy * iw + ix];
                        }
                    }
                    dst[oy * ow + ox] += acc;
                }
            }
        }
    }
    out
}
