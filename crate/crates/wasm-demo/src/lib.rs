//! Browser demo: phantoms, the toy codec and the two scores, drawn on canvases.
//!
//! The `*_impl` functions are plain Rust so they can be tested natively; the
//! exported wrappers only convert errors.

use latent_probe::corruption::CorruptionConfig;
use latent_probe::downstream::{run_correlation_study, CorrelationConfig, ThresholdSegmenter};
use latent_probe::model::{builtin, CodecModel};
use latent_probe::perturb::{black_patch, default_patch_size, score_sample};
use latent_probe::synthdata::{phantom, PhantomSpec, Sample};
use latent_probe::{HeatMap, ImageGrid, Result};
use wasm_bindgen::prelude::*;

const PHANTOM_SEED: u64 = 7;

fn model() -> CodecModel {
    builtin::toy_conv(builtin::TOY_SEED)
}

fn corruption(alpha: f64, k: usize, seed: u64) -> CorruptionConfig {
    CorruptionConfig {
        alpha,
        k,
        seed,
        foreground_threshold: builtin::TOY_FOREGROUND_THRESHOLD,
        ..Default::default()
    }
}

fn sample(index: u32) -> Result<Sample> {
    let spec = PhantomSpec {
        seed: PHANTOM_SEED,
        ..Default::default()
    };
    let p = phantom(&spec, index as u64)?;
    Ok(Sample {
        id: format!("phantom_{index:03}"),
        image: p.image,
        mask: Some(p.mask),
    })
}

/// Grey RGBA bytes of an image in [0, 1].
pub fn grey_rgba(image: &ImageGrid) -> Vec<u8> {
    image
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Black-red-yellow-white ramp, scaled to the map's maximum.
pub fn heat_rgba(map: &HeatMap) -> Vec<u8> {
    let max = map.values.iter().copied().fold(0.0f64, f64::max);
    map.values
        .iter()
        .flat_map(|&v| {
            let t = if max > 0.0 { v / max } else { 0.0 };
            let ch = |lo: f64| ((t * 3.0 - lo).clamp(0.0, 1.0) * 255.0).round() as u8;
            [ch(0.0), ch(1.0), ch(2.0), 255]
        })
        .collect()
}

#[wasm_bindgen]
pub struct Exploration {
    side: usize,
    gamma: f64,
    delta: f64,
    input: Vec<u8>,
    clean: Vec<u8>,
    heat: Vec<u8>,
}

#[wasm_bindgen]
impl Exploration {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Input image as RGBA.
    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Vec<u8> {
        self.input.clone()
    }

    /// Clean decode as RGBA.
    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<u8> {
        self.clean.clone()
    }

    /// Variance heat map as RGBA.
    #[wasm_bindgen(getter)]
    pub fn heat(&self) -> Vec<u8> {
        self.heat.clone()
    }
}

pub fn explore_impl(index: u32, alpha: f64, k: usize, patch: bool, seed: u64) -> Result<Exploration> {
    let mut image = sample(index)?.image;
    if patch {
        let size = default_patch_size(image.height(), image.width());
        image = black_patch(&image, size, seed)?.0;
    }
    let scores = score_sample(&model(), &image, &corruption(alpha, k, seed))?;
    Ok(Exploration {
        side: image.width(),
        gamma: scores.gamma(),
        delta: scores.delta(),
        input: grey_rgba(&image),
        clean: grey_rgba(&scores.clean),
        heat: heat_rgba(scores.heatmap()),
    })
}

/// Scores phantom `index`, optionally with a black patch placed by `seed`.
#[wasm_bindgen]
pub fn explore(index: u32, alpha: f64, k: usize, patch: bool, seed: u64) -> std::result::Result<Exploration, JsError> {
    explore_impl(index, alpha, k, patch, seed).map_err(|e| JsError::new(&e.to_string()))
}

/// `[γ(α_0), .., γ(α_n), δ(α_0), .., δ(α_n)]`.
pub fn alpha_sweep_impl(index: u32, alphas: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    let image = sample(index)?.image;
    let model = model();
    let mut gammas = Vec::with_capacity(alphas.len());
    let mut deltas = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let s = score_sample(&model, &image, &corruption(alpha, k, seed))?;
        gammas.push(s.gamma());
        deltas.push(s.delta());
    }
    gammas.extend(deltas);
    Ok(gammas)
}

#[wasm_bindgen]
pub fn alpha_sweep(index: u32, alphas: Vec<f64>, k: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    alpha_sweep_impl(index, &alphas, k, seed).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Scatter {
    points: Vec<f64>,
    r: f64,
}

#[wasm_bindgen]
impl Scatter {
    /// Flattened `(level, δ, dice)` triples.
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    /// Pearson r between δ and DICE, NaN when undefined.
    #[wasm_bindgen(getter)]
    pub fn r(&self) -> f64 {
        self.r
    }
}

pub fn damage_scatter_impl(count: u32, k: usize, seed: u64) -> Result<Scatter> {
    let samples = (0..count).map(sample).collect::<Result<Vec<_>>>()?;
    let cfg = CorrelationConfig {
        corruption: corruption(3.0, k, seed),
        damage_seed: seed,
        ..Default::default()
    };
    let report = run_correlation_study(&samples, &model(), &ThresholdSegmenter::default(), &cfg)?;
    Ok(Scatter {
        points: report
            .rows
            .iter()
            .flat_map(|row| [row.level, row.delta, row.dice])
            .collect(),
        r: report.pearson_r.unwrap_or(f64::NAN),
    })
}

/// Graded latent damage on `count` phantoms: δ against segmentation DICE.
#[wasm_bindgen]
pub fn damage_scatter(count: u32, k: usize, seed: u64) -> std::result::Result<Scatter, JsError> {
    damage_scatter_impl(count, k, seed).map_err(|e| JsError::new(&e.to_string()))
}
