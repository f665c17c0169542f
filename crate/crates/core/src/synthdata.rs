//! Deterministic phantom images with reference organ masks.
//!
//! Each phantom is a rotated elliptical "body" on an exactly-zero background
//! with a smaller elliptical "organ" of distinct intensity inside it, plus
//! low-pass texture on the body. Sample `i` depends only on `(seed, i)`.
//! These are test fixtures for the scoring pipeline, not anatomical models.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corruption::channel_std;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid, LatentCode};
use crate::rng::{substream, Domain};
use crate::tensor_io::{read_array, write_array, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub count: usize,
    pub image_side: usize,
    /// Body semi-axes as fractions of the side, drawn uniformly from this range.
    pub body_axes: (f64, f64),
    /// Organ semi-axes as fractions of the side.
    pub organ_axes: (f64, f64),
    /// Largest organ-centre offset from the body centre, as a fraction of the side.
    pub organ_offset: f64,
    pub background_level: f64,
    pub body_level: f64,
    pub organ_level: f64,
    /// Standard deviation of the smoothed texture added on the body.
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            count: 64,
            image_side: 64,
            body_axes: (0.36, 0.44),
            organ_axes: (0.12, 0.18),
            organ_offset: 0.12,
            background_level: 0.0,
            body_level: 0.5,
            organ_level: 0.85,
            texture_amplitude: 0.02,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.count == 0 {
            return bad("phantom count must be at least 1".into());
        }
        if self.image_side < 8 {
            return bad(format!("image side {} is too small", self.image_side));
        }
        let (blo, bhi) = self.body_axes;
        let (olo, ohi) = self.organ_axes;
        if !(0.0 < blo && blo <= bhi && 0.0 < olo && olo <= ohi && self.organ_offset >= 0.0) {
            return bad("axis ranges must be positive and ordered".into());
        }
        if bhi > 0.5 {
            return bad(format!("body semi-axis fraction {bhi} exceeds the image"));
        }
        if ohi + self.organ_offset > blo {
            return bad(format!(
                "organ (axis {ohi} + offset {}) does not fit inside the body ({blo})",
                self.organ_offset
            ));
        }
        if !(self.background_level >= 0.0
            && self.body_level > self.background_level
            && self.organ_level > self.background_level
            && self.body_level <= 1.0
            && self.organ_level <= 1.0)
        {
            return bad("levels must satisfy 0 <= background < body, organ <= 1".into());
        }
        if !(self.texture_amplitude >= 0.0) {
            return bad("texture amplitude must be non-negative".into());
        }
        Ok(())
    }
}

/// Geometry of one phantom, in pixel units with pixel centres at `+0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ImageGrid,
    pub mask: BinaryMask,
    pub body: Ellipse,
    pub organ: Ellipse,
}

pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<Phantom>> {
    spec.validate()?;
    (0..spec.count).map(|i| phantom(spec, i as u64)).collect()
}

pub fn phantom(spec: &PhantomSpec, index: u64) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.image_side;
    let side = n as f64;
    let mut rng = substream(spec.seed, Domain::Phantom, 2 * index);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();

    let body = Ellipse {
        cx: side / 2.0 + uniform(-0.03, 0.03) * side,
        cy: side / 2.0 + uniform(-0.03, 0.03) * side,
        a: uniform(spec.body_axes.0, spec.body_axes.1) * side,
        b: uniform(spec.body_axes.0, spec.body_axes.1) * side,
        theta: uniform(-0.3, 0.3),
    };
    let radius = uniform(0.0, spec.organ_offset) * side;
    let angle = uniform(0.0, std::f64::consts::TAU);
    let organ = Ellipse {
        cx: body.cx + radius * angle.cos(),
        cy: body.cy + radius * angle.sin(),
        a: uniform(spec.organ_axes.0, spec.organ_axes.1) * side,
        b: uniform(spec.organ_axes.0, spec.organ_axes.1) * side,
        theta: uniform(0.0, std::f64::consts::PI),
    };

    let texture = smooth_texture(&mut substream(spec.seed, Domain::Phantom, 2 * index + 1), n);
    let mut pixels = vec![spec.background_level; n * n];
    let mut mask = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            if !body.contains(x, y) {
                continue;
            }
            let in_organ = organ.contains(x, y);
            let level = if in_organ {
                spec.organ_level
            } else {
                spec.body_level
            };
            let p = r * n + c;
            let v = level + spec.texture_amplitude * texture[p];
            // Body pixels stay strictly above the background level; values are
            // f32-representable so an NPY dump reloads bit-exactly.
            pixels[p] = f64::from(v.clamp(spec.background_level + 1e-3, 1.0) as f32);
            mask[p] = in_organ;
        }
    }
    Ok(Phantom {
        image: ImageGrid::new(n, n, pixels)?,
        mask: BinaryMask::new(n, n, mask)?,
        body,
        organ,
    })
}

/// Unit-variance white noise, 3x3 box filtered twice (edges clamped).
fn smooth_texture(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut field: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for _ in 0..2 {
        field = box3(&field, n);
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
    field.iter().map(|v| (v - mean) / std).collect()
}

fn box3(field: &[f64], n: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, n as isize - 1) as usize;
        let c = c.clamp(0, n as isize - 1) as usize;
        field[r * n + c]
    };
    let mut out = vec![0.0; n * n];
    for r in 0..n as isize {
        for c in 0..n as isize {
            let mut acc = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    acc += at(r + dr, c + dc);
                }
            }
            out[r as usize * n + c as usize] = acc / 9.0;
        }
    }
    out
}

/// Adds noise of growing strength to a latent code: output `j` is
/// `h + levels[j] * σ_c * z_j` with `z_j` from substream `(seed, j)`.
pub fn grade_damage(h: &LatentCode, levels: &[f64], seed: u64) -> Result<Vec<LatentCode>> {
    if let Some(bad) = levels.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "damage levels must be finite and non-negative, got {bad}"
        )));
    }
    let sigma = channel_std(h);
    let plane = h.plane_len();
    Ok(levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let mut rng = substream(seed, Domain::Damage, j as u64);
            let mut out = h.clone();
            let data = out.data_mut();
            for (c, &s) in sigma.iter().enumerate() {
                for p in 0..plane {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let scale = level * s;
                    if scale != 0.0 {
                        data[c * plane + p] += scale * z;
                    }
                }
            }
            out
        })
        .collect())
}

/// One dataset entry as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    pub mask: Option<BinaryMask>,
}

pub const INDEX_FILE: &str = "index.csv";

/// Writes `images/<id>.npy`, `masks/<id>.npy` and `index.csv`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut index = csv::Writer::from_writer(Vec::new());
    index.write_record(["id", "image", "mask"]).map_err(csv_err)?;
    for s in samples {
        let image = format!("images/{}.npy", s.id);
        write_array(dir.join(&image), &Tensor::from_image(&s.image))?;
        written.push(image.clone());
        let mask = match &s.mask {
            Some(m) => {
                let f = format!("masks/{}.npy", s.id);
                write_array(dir.join(&f), &Tensor::from_mask(m))?;
                written.push(f.clone());
                f
            }
            None => String::new(),
        };
        index.write_record([s.id.as_str(), &image, &mask]).map_err(csv_err)?;
    }
    let bytes = index.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(INDEX_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(INDEX_FILE.to_string());
    Ok(written)
}

/// Reads a dataset written by [`write_dataset`]; returns the samples and the
/// relative paths of every file read.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Vec<Sample>, Vec<String>)> {
    let dir = dir.as_ref();
    let path = dir.join(INDEX_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_slice());
    let mut samples = Vec::new();
    let mut files = vec![INDEX_FILE.to_string()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let (Some(id), Some(image)) = (record.get(0), record.get(1)) else {
            return Err(Error::Format(format!("short index row {record:?}")));
        };
        let image_t = read_array(dir.join(image))?;
        files.push(image.to_string());
        let mask = match record.get(2).filter(|m| !m.is_empty()) {
            Some(m) => {
                files.push(m.to_string());
                Some(read_array(dir.join(m))?.to_mask()?)
            }
            None => None,
        };
        samples.push(Sample {
            id: id.to_string(),
            image: image_t.to_image()?,
            mask,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no samples", path.display())));
    }
    Ok((samples, files))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            count: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_phantoms(&small()).unwrap(), generate_phantoms(&small()).unwrap());
    }

    #[test]
    fn images_are_valid_and_background_exact() {
        for p in generate_phantoms(&small()).unwrap() {
            for r in 0..64 {
                for c in 0..64 {
                    let v = p.image.get(r, c);
                    assert!((0.0..=1.0).contains(&v));
                    let inside = p.body.contains(c as f64 + 0.5, r as f64 + 0.5);
                    assert_eq!(v > 0.0, inside);
                    if p.mask.get(r, c) {
                        assert!(inside);
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_organ_rejected() {
        let spec = PhantomSpec {
            organ_axes: (0.3, 0.6),
            ..Default::default()
        };
        assert!(matches!(generate_phantoms(&spec), Err(Error::InvalidArgument(_))));
        let spec = PhantomSpec {
            count: 0,
            ..Default::default()
        };
        assert!(generate_phantoms(&spec).is_err());
    }

    #[test]
    fn damage_level_zero_is_identity() {
        let h = LatentCode::new(2, 3, 3, (0..18).map(|i| i as f64 * 0.1).collect()).unwrap();
        let out = grade_damage(&h, &[0.0, 1.0], 5).unwrap();
        assert_eq!(out[0], h);
        assert_ne!(out[1], h);
        let longer = grade_damage(&h, &[0.0, 1.0, 2.0], 5).unwrap();
        assert_eq!(&longer[..2], &out[..]);
        assert!(grade_damage(&h, &[-1.0], 5).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = generate_phantoms(&small())
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| Sample {
                id: format!("phantom_{i:04}"),
                image: p.image,
                mask: Some(p.mask),
            })
            .collect();
        write_dataset(dir.path(), &samples).unwrap();
        let (back, files) = read_dataset(dir.path()).unwrap();
        assert_eq!(files.len(), 1 + 2 * samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.image, b.image);
        }
    }
}
