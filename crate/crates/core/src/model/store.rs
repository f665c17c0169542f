//! Model directories: `model.txt` plus one NPY file per weight and bias.
//!
//! ```text
//! latent-probe-model v1
//! name=toy-conv
//! input=64x64
//! clamp=true
//! foreground_threshold=0.05
//! encoder=conv in=1 out=8 kernel=13 stride=1 padding=6 weight=encoder.0.weight.npy bias=encoder.0.bias.npy
//! encoder=relu
//! decoder=sigmoid
//! ```
//!
//! Conv weights are stored as `(a * b, k, k)` `float32` arrays where `(a, b)`
//! is `(out, in)` for `conv` and `(in, out)` for `conv_transpose`; linear
//! weights as `(out, in)`; biases as `(out,)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::layers::{ConvSpec, Layer};
use super::CodecModel;
use crate::error::{Error, Result};
use crate::tensor_io::{read_array, write_array, Tensor};

pub const MANIFEST_FILE: &str = "model.txt";
const MANIFEST_HEADER: &str = "latent-probe-model v1";

pub fn save_model(dir: impl AsRef<Path>, model: &CodecModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = model.input_dims();
    let mut manifest = format!(
        "{MANIFEST_HEADER}\nname={}\ninput={h}x{w}\nclamp={}\n",
        model.name(),
        model.clamps_output()
    );
    if let Some(t) = model.foreground_threshold() {
        manifest.push_str(&format!("foreground_threshold={t}\n"));
    }
    for (section, layers) in [("encoder", model.encoder()), ("decoder", model.decoder())] {
        for (i, layer) in layers.iter().enumerate() {
            let stem = format!("{section}.{i}");
            let line = match layer {
                Layer::Linear {
                    in_channels,
                    out_channels,
                    weight,
                    bias,
                } => {
                    let (wf, bf) = write_params(
                        dir,
                        &stem,
                        vec![*out_channels, *in_channels],
                        weight,
                        bias,
                    )?;
                    format!("linear in={in_channels} out={out_channels} weight={wf} bias={bf}")
                }
                Layer::Conv2d(s) | Layer::ConvTranspose2d(s) => {
                    let (wf, bf) = write_params(
                        dir,
                        &stem,
                        vec![s.in_channels * s.out_channels, s.kernel, s.kernel],
                        &s.weight,
                        &s.bias,
                    )?;
                    format!(
                        "{} in={} out={} kernel={} stride={} padding={} weight={wf} bias={bf}",
                        layer.kind(),
                        s.in_channels,
                        s.out_channels,
                        s.kernel,
                        s.stride,
                        s.padding
                    )
                }
                Layer::Relu | Layer::Sigmoid => layer.kind().to_string(),
            };
            manifest.push_str(&format!("{section}={line}\n"));
        }
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

fn write_params(
    dir: &Path,
    stem: &str,
    weight_shape: Vec<usize>,
    weight: &[f32],
    bias: &[f32],
) -> Result<(String, String)> {
    let wf = format!("{stem}.weight.npy");
    let bf = format!("{stem}.bias.npy");
    write_array(dir.join(&wf), &Tensor::from_f32(weight_shape, weight.to_vec())?)?;
    write_array(dir.join(&bf), &Tensor::from_f32(vec![bias.len()], bias.to_vec())?)?;
    Ok((wf, bf))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<CodecModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Format(format!(
            "{} does not start with {MANIFEST_HEADER:?}",
            path.display()
        )));
    }

    let mut name = None;
    let mut input = None;
    let mut clamp = true;
    let mut threshold = None;
    let mut encoder = Vec::new();
    let mut decoder = Vec::new();
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line without '=': {line:?}")))?;
        match key {
            "name" => name = Some(value.to_string()),
            "input" => {
                let (h, w) = value
                    .split_once('x')
                    .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
                    .ok_or_else(|| Error::Format(format!("bad input dims {value:?}")))?;
                input = Some((h, w));
            }
            "clamp" => {
                clamp = value
                    .parse()
                    .map_err(|_| Error::Format(format!("bad clamp flag {value:?}")))?
            }
            "foreground_threshold" => {
                threshold = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad threshold {value:?}")))?,
                )
            }
            "encoder" => encoder.push(parse_layer(dir, value)?),
            "decoder" => decoder.push(parse_layer(dir, value)?),
            other => return Err(Error::Format(format!("unknown manifest key {other:?}"))),
        }
    }
    let name = name.ok_or_else(|| Error::Format("manifest lacks name".into()))?;
    let input = input.ok_or_else(|| Error::Format("manifest lacks input dims".into()))?;
    let model = CodecModel::new(name, input, encoder, decoder)
        .map_err(|e| Error::Format(format!("layers do not compose: {e}")))?;
    Ok(model.with_clamp(clamp).with_foreground_threshold(threshold))
}

fn parse_layer(dir: &Path, spec: &str) -> Result<Layer> {
    let mut parts = spec.split_whitespace();
    let kind = parts.next().unwrap_or_default();
    let fields: BTreeMap<&str, &str> = parts
        .map(|p| {
            p.split_once('=')
                .ok_or_else(|| Error::Format(format!("bad layer field {p:?}")))
        })
        .collect::<Result<_>>()?;
    let int = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .ok_or_else(|| Error::Format(format!("{kind} layer lacks {key}")))?
            .parse()
            .map_err(|_| Error::Format(format!("{kind} layer has bad {key}")))
    };
    let params = |wshape: &[usize], blen: usize| -> Result<(Vec<f32>, Vec<f32>)> {
        let load = |key: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let file = fields
                .get(key)
                .ok_or_else(|| Error::Format(format!("{kind} layer lacks {key} file")))?;
            let tensor = read_array(dir.join(file)).map_err(|e| match e {
                Error::Io { path, source } => Error::Format(format!(
                    "weight file {} unreadable: {source}",
                    path.display()
                )),
                other => other,
            })?;
            if tensor.shape() != shape {
                return Err(Error::Format(format!(
                    "{file} has shape {:?}, manifest implies {shape:?}",
                    tensor.shape()
                )));
            }
            tensor
                .as_f32()
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::Format(format!("{file} is not float32")))
        };
        Ok((load("weight", wshape)?, load("bias", &[blen])?))
    };
    match kind {
        "relu" => Ok(Layer::Relu),
        "sigmoid" => Ok(Layer::Sigmoid),
        "linear" => {
            let (cin, cout) = (int("in")?, int("out")?);
            let (weight, bias) = params(&[cout, cin], cout)?;
            Ok(Layer::Linear {
                in_channels: cin,
                out_channels: cout,
                weight,
                bias,
            })
        }
        "conv" | "conv_transpose" => {
            let (cin, cout, k) = (int("in")?, int("out")?, int("kernel")?);
            let (weight, bias) = params(&[cin * cout, k, k], cout)?;
            let spec = ConvSpec {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: int("stride")?,
                padding: int("padding")?,
                weight,
                bias,
            };
            Ok(if kind == "conv" {
                Layer::Conv2d(spec)
            } else {
                Layer::ConvTranspose2d(spec)
            })
        }
        other => Err(Error::Format(format!("unknown layer kind {other:?}"))),
    }
}
