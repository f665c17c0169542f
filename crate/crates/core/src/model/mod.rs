//! Encoder/decoder codecs.
//!
//! A [`CodecModel`] is an ordered encoder layer list `E` producing the latent
//! code `h = E(x)` and a decoder layer list `D` mapping latent codes back to a
//! single-channel image. Two built-in codecs live in [`builtin`]; models are
//! persisted as a directory of NPY weights plus a text manifest ([`store`]).

pub mod builtin;
pub mod layers;
pub mod store;

pub use layers::{ConvSpec, Layer};
pub use store::{load_model, save_model};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, LatentCode};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    name: String,
    input_dims: (usize, usize),
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    clamp_output: bool,
    foreground_threshold: Option<f64>,
    latent_shape: (usize, usize, usize),
}

impl CodecModel {
    /// Validates that the layers compose: the encoder takes a single-channel
    /// `input_dims` image and the decoder maps its latent back to exactly that.
    pub fn new(
        name: impl Into<String>,
        input_dims: (usize, usize),
        encoder: Vec<Layer>,
        decoder: Vec<Layer>,
    ) -> Result<Self> {
        let (h, w) = input_dims;
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("model input dims must be positive".into()));
        }
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::InvalidArgument(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        let mut shape = (1, h, w);
        for layer in encoder.iter().chain(&decoder) {
            layer.validate()?;
        }
        for layer in &encoder {
            shape = layer.output_shape(shape)?;
        }
        let latent_shape = shape;
        for layer in &decoder {
            shape = layer.output_shape(shape)?;
        }
        if shape != (1, h, w) {
            return Err(Error::Shape(format!(
                "decoder produces {shape:?}, expected (1, {h}, {w})"
            )));
        }
        Ok(Self {
            name: name.into(),
            input_dims,
            encoder,
            decoder,
            clamp_output: true,
            foreground_threshold: None,
            latent_shape,
        })
    }

    /// Disables the final `[0, 1]` clamp (analytic codecs only).
    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_output = clamp;
        self
    }

    /// Records the foreground threshold suited to this codec's background level.
    pub fn with_foreground_threshold(mut self, threshold: Option<f64>) -> Self {
        self.foreground_threshold = threshold;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        self.latent_shape
    }

    pub fn encoder(&self) -> &[Layer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Layer] {
        &self.decoder
    }

    pub fn clamps_output(&self) -> bool {
        self.clamp_output
    }

    pub fn foreground_threshold(&self) -> Option<f64> {
        self.foreground_threshold
    }

    pub fn encode(&self, x: &ImageGrid) -> Result<LatentCode> {
        if x.dims() != self.input_dims {
            return Err(Error::Shape(format!(
                "model {} expects {:?} images, got {:?}",
                self.name,
                self.input_dims,
                x.dims()
            )));
        }
        let mut act = LatentCode::from(x);
        for layer in &self.encoder {
            act = layer.forward(&act)?;
        }
        Ok(act)
    }

    pub fn decode(&self, h: &LatentCode) -> Result<ImageGrid> {
        if h.shape() != self.latent_shape {
            return Err(Error::Shape(format!(
                "model {} expects latents {:?}, got {:?}",
                self.name,
                self.latent_shape,
                h.shape()
            )));
        }
        let mut layers = self.decoder.iter();
        let first = layers.next().expect("decoder is non-empty");
        let mut act = first.forward(h)?;
        for layer in layers {
            act = layer.forward(&act)?;
        }
        if self.clamp_output {
            for v in act.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        act.into_image()
    }

    /// Decodes every latent; output order matches input order and each
    /// element equals `decode` on its own.
    pub fn decode_batch(&self, hs: &[LatentCode]) -> Result<Vec<ImageGrid>> {
        let Some(first) = hs.first() else {
            return Err(Error::EmptyInput("no latents to decode".into()));
        };
        if let Some(bad) = hs.iter().find(|h| h.shape() != first.shape()) {
            return Err(Error::Shape(format!(
                "batch mixes latent shapes {:?} and {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            hs.par_iter().map(|h| self.decode(h)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            hs.iter().map(|h| self.decode(h)).collect()
        }
    }

    /// Sequential reference for [`decode_batch`](Self::decode_batch).
    pub fn decode_sequential(&self, hs: &[LatentCode]) -> Result<Vec<ImageGrid>> {
        if hs.is_empty() {
            return Err(Error::EmptyInput("no latents to decode".into()));
        }
        hs.iter().map(|h| self.decode(h)).collect()
    }
}
