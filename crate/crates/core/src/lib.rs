//! Latent-code robustness probing for encoder/decoder image generators.
//!
//! The pipeline encodes an image, injects calibrated Gaussian noise into the
//! foreground of the latent code, decodes `k` corrupted variants and scores
//! them:
//!
//! * `γ` ([`scores::variance_score`]): per-pixel population variance across
//!   the variants, aggregated into a scalar uncertainty score and a heat map;
//! * `δ` ([`scores::confidence_score`]): mean joint-histogram mutual
//!   information between the clean decode and each variant.
//!
//! [`perturb`] runs the black-patch sanity study, [`downstream`] relates `δ`
//! to segmentation DICE, and [`synthdata`] supplies deterministic phantoms so
//! everything runs without clinical data or an ML framework.

pub mod corruption;
pub mod downstream;
pub mod error;
pub mod grid;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod scores;
pub mod stats;
pub mod synthdata;
pub mod tensor_io;

pub use error::{Error, Result};
pub use grid::{BinaryMask, HeatMap, ImageGrid, LatentCode};
