//! On-disk formats: NPY v1.0 arrays, binary PGM heat maps and the fixed
//! number format used in CSV reports.
//!
//! Only little-endian `float32` (`<f4`) and `uint8` (`|u1`) arrays in C order
//! are accepted. Writers are byte-stable: the same tensor always produces the
//! same file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, HeatMap, ImageGrid, LatentCode};

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";
const NPY_ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "<f4",
            TensorData::U8(_) => "|u1",
        }
    }
}

/// Rank 1-3 row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "tensor rank must be 1..=3, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let TensorData::F32(values) = &data {
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "tensor values must be finite, found {v}"
                )));
            }
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    /// Values widened to `f64`, whatever the stored dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn from_image(image: &ImageGrid) -> Self {
        let values = image.data().iter().map(|&v| v as f32).collect();
        Self {
            shape: vec![image.height(), image.width()],
            data: TensorData::F32(values),
        }
    }

    pub fn to_image(&self) -> Result<ImageGrid> {
        match self.shape.as_slice() {
            [h, w] => ImageGrid::new(*h, *w, self.to_f64()),
            other => Err(Error::Shape(format!("expected a 2-D image, got shape {other:?}"))),
        }
    }

    pub fn from_latent(latent: &LatentCode) -> Self {
        let (c, h, w) = latent.shape();
        let values = latent.data().iter().map(|&v| v as f32).collect();
        Self {
            shape: vec![c, h, w],
            data: TensorData::F32(values),
        }
    }

    pub fn to_latent(&self) -> Result<LatentCode> {
        match self.shape.as_slice() {
            [c, h, w] => LatentCode::new(*c, *h, *w, self.to_f64()),
            other => Err(Error::Shape(format!("expected a 3-D latent, got shape {other:?}"))),
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            shape: vec![mask.height(), mask.width()],
            data: TensorData::U8(mask.data().iter().map(|&b| u8::from(b)).collect()),
        }
    }

    pub fn to_mask(&self) -> Result<BinaryMask> {
        let [h, w] = self.shape.as_slice() else {
            return Err(Error::Shape(format!(
                "expected a 2-D mask, got shape {:?}",
                self.shape
            )));
        };
        let bits = match &self.data {
            TensorData::U8(v) => v
                .iter()
                .map(|&x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Format(format!("mask value {other} is not binary"))),
                })
                .collect::<Result<Vec<_>>>()?,
            TensorData::F32(_) => {
                return Err(Error::UnsupportedDtype("masks must be stored as |u1".into()))
            }
        };
        BinaryMask::new(*h, *w, bits)
    }
}

pub fn encode_npy(tensor: &Tensor) -> Vec<u8> {
    let shape = match tensor.shape.as_slice() {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        tensor.data.descr()
    );
    let unpadded = NPY_MAGIC.len() + 2 + 2 + header.len() + 1;
    let padding = (NPY_ALIGN - unpadded % NPY_ALIGN) % NPY_ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + tensor.data.len() * 4);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(Error::Format("missing NPY magic bytes".into()));
    }
    let (header_len, header_start) = match (bytes[6], bytes[7]) {
        (1, 0) => (usize::from(u16::from_le_bytes([bytes[8], bytes[9]])), 10),
        (major, minor) => {
            return Err(Error::Format(format!(
                "unsupported NPY version {major}.{minor}"
            )))
        }
    };
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..payload_start])
        .map_err(|_| Error::Format("NPY header is not ASCII".into()))?;
    let descr = header_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Format(format!("malformed descr {descr:?}")))?;
    if header_value(header, "fortran_order")?.starts_with("True") {
        return Err(Error::Format("fortran_order arrays are not supported".into()));
    }
    let shape = parse_shape(header_value(header, "shape")?)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[payload_start..];

    let data = match descr {
        "<f4" => {
            if payload.len() != count * 4 {
                return Err(Error::Format(format!(
                    "shape {shape:?} needs {} payload bytes, found {}",
                    count * 4,
                    payload.len()
                )));
            }
            TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            )
        }
        "|u1" | "<u1" => {
            if payload.len() != count {
                return Err(Error::Format(format!(
                    "shape {shape:?} needs {count} payload bytes, found {}",
                    payload.len()
                )));
            }
            TensorData::U8(payload.to_vec())
        }
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let needle = format!("'{key}':");
    let start = header
        .find(&needle)
        .ok_or_else(|| Error::Format(format!("NPY header lacks '{key}'")))?;
    Ok(header[start + needle.len()..].trim_start())
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Format(format!("malformed shape {text:?}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape extent {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::Format(format!("unsupported shape {shape:?}")));
    }
    Ok(shape)
}

pub fn read_array(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_npy(&bytes)
}

pub fn write_array(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_npy(tensor)).map_err(|e| Error::io(path, e))
}

/// Min-max normalizes `map` to bytes; a constant map becomes all zeros.
/// Rounding is half-up.
pub fn heatmap_to_gray(map: &HeatMap) -> Result<Vec<u8>> {
    if map.values.is_empty() || map.width == 0 || map.height == 0 {
        return Err(Error::EmptyInput("heat map has no pixels".into()));
    }
    let (lo, hi) = map
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    Ok(map
        .values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (255.0 * (v - lo) / range + 0.5).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect())
}

pub fn encode_pgm(map: &HeatMap) -> Result<Vec<u8>> {
    let pixels = heatmap_to_gray(map)?;
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_heatmap_pgm(path: impl AsRef<Path>, map: &HeatMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Formats a value with 6 significant digits, `%g` style: trailing zeros
/// trimmed, scientific notation outside `1e-4 <= |v| < 1e6`.
pub fn format_sig(v: f64) -> String {
    const DIGITS: i32 = 6;
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { "-" } else { "+" };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
