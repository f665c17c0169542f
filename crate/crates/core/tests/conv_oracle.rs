//! Layer forward passes against naive scatter implementations written
//! straight from the convolution definitions.

use latent_probe::model::{ConvSpec, Layer};
use latent_probe::LatentCode;
use proptest::prelude::*;

/// Cross-correlation with zero padding, one output element at a time.
fn conv_reference(x: &LatentCode, s: &ConvSpec) -> (usize, usize, Vec<f64>) {
    let (_, ih, iw) = x.shape();
    let oh = (ih + 2 * s.padding - s.kernel) / s.stride + 1;
    let ow = (iw + 2 * s.padding - s.kernel) / s.stride + 1;
    let k = s.kernel;
    let mut out = vec![0.0; s.out_channels * oh * ow];
    for o in 0..s.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = f64::from(s.bias[o]);
                for i in 0..s.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s.stride + ky) as i64 - s.padding as i64;
                            let ix = (ox * s.stride + kx) as i64 - s.padding as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < ih && (ix as usize) < iw {
                                let w = s.weight[((o * s.in_channels + i) * k + ky) * k + kx];
                                acc += f64::from(w) * x.get(i, iy as usize, ix as usize);
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (oh, ow, out)
}

/// Transposed convolution as the scatter of every input element.
fn conv_transpose_reference(x: &LatentCode, s: &ConvSpec) -> (usize, usize, Vec<f64>) {
    let (_, ih, iw) = x.shape();
    let k = s.kernel;
    let full_h = (ih - 1) * s.stride + k;
    let full_w = (iw - 1) * s.stride + k;
    let mut full = vec![0.0; s.out_channels * full_h * full_w];
    for i in 0..s.in_channels {
        for iy in 0..ih {
            for ix in 0..iw {
                let v = x.get(i, iy, ix);
                for o in 0..s.out_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let w = s.weight[((i * s.out_channels + o) * k + ky) * k + kx];
                            let (y, xx) = (iy * s.stride + ky, ix * s.stride + kx);
                            full[(o * full_h + y) * full_w + xx] += f64::from(w) * v;
                        }
                    }
                }
            }
        }
    }
    let (oh, ow) = (full_h - 2 * s.padding, full_w - 2 * s.padding);
    let mut out = vec![0.0; s.out_channels * oh * ow];
    for o in 0..s.out_channels {
        for y in 0..oh {
            for xx in 0..ow {
                out[(o * oh + y) * ow + xx] = f64::from(s.bias[o])
                    + full[(o * full_h + y + s.padding) * full_w + xx + s.padding];
            }
        }
    }
    (oh, ow, out)
}

fn case() -> impl Strategy<Value = (ConvSpec, LatentCode)> {
    (1usize..4, 1usize..4, 1usize..5, 1usize..4, 3usize..9, 3usize..9)
        .prop_flat_map(|(cin, cout, k, stride, h, w)| {
            let pad = 0..k.min(3);
            (
                Just((cin, cout, k, stride, h, w)),
                pad,
                prop::collection::vec(-1.0f32..1.0, cin * cout * k * k),
                prop::collection::vec(-0.5f32..0.5, cout),
                prop::collection::vec(-2.0f64..2.0, cin * h * w),
            )
        })
        .prop_filter_map("kernel must fit", |((cin, cout, k, stride, h, w), padding, wt, b, x)| {
            if h + 2 * padding < k || w + 2 * padding < k {
                return None;
            }
            let spec = ConvSpec {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride,
                padding,
                weight: wt,
                bias: b,
            };
            Some((spec, LatentCode::new(cin, h, w, x).unwrap()))
        })
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

proptest! {
    #[test]
    fn conv_matches_reference((spec, x) in case()) {
        let (oh, ow, want) = conv_reference(&x, &spec);
        let got = Layer::Conv2d(spec.clone()).forward(&x).unwrap();
        prop_assert_eq!(got.shape(), (spec.out_channels, oh, ow));
        prop_assert!(close(got.data(), &want));
    }

    #[test]
    fn conv_transpose_matches_reference((spec, x) in case()) {
        let (_, ih, iw) = x.shape();
        prop_assume!((ih - 1) * spec.stride + spec.kernel > 2 * spec.padding);
        prop_assume!((iw - 1) * spec.stride + spec.kernel > 2 * spec.padding);
        let (oh, ow, want) = conv_transpose_reference(&x, &spec);
        let got = Layer::ConvTranspose2d(spec.clone()).forward(&x).unwrap();
        prop_assert_eq!(got.shape(), (spec.out_channels, oh, ow));
        prop_assert!(close(got.data(), &want));
    }
}

#[test]
fn stride_two_transpose_doubles_size() {
    let spec = ConvSpec {
        in_channels: 1,
        out_channels: 1,
        kernel: 4,
        stride: 2,
        padding: 1,
        weight: vec![1.0; 16],
        bias: vec![0.0],
    };
    let x = LatentCode::new(1, 3, 3, vec![1.0; 9]).unwrap();
    let y = Layer::ConvTranspose2d(spec.clone()).forward(&x).unwrap();
    assert_eq!(y.shape(), (1, 6, 6));
    let (_, _, want) = conv_transpose_reference(&x, &spec);
    assert_eq!(y.data(), &want[..]);
    // Interior outputs collect two taps per axis, the padded corner one.
    assert_eq!(y.get(0, 2, 2), 4.0);
    assert_eq!(y.get(0, 0, 0), 1.0);
}
