//! Procedural homogeneous-texture corpus, crop sampling and image-directory ingestion.
//!
//! A corpus is fully described by its [`CorpusManifest`]: every procedural
//! family is regenerated from `(params, seed)` and every crop origin from the
//! manifest seed, so the manifest alone reproduces the pixels.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::seeding::{self, stream};

/// Minimum base-image side as a multiple of the crop size.
pub const MIN_BASE_FACTOR: usize = 4;
/// Minimum texton repetitions per crop side for periodic kinds.
pub const MIN_REPETITIONS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Checkerboard,
    SinusoidGrating,
    GaussianNoiseField,
    BlobField,
    StripeField,
    VoronoiCells,
    UserImage,
}

impl TextureKind {
    pub const PROCEDURAL: [TextureKind; 6] = [
        TextureKind::Checkerboard,
        TextureKind::SinusoidGrating,
        TextureKind::GaussianNoiseField,
        TextureKind::BlobField,
        TextureKind::StripeField,
        TextureKind::VoronoiCells,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TextureKind::Checkerboard => "checkerboard",
            TextureKind::SinusoidGrating => "sinusoid_grating",
            TextureKind::GaussianNoiseField => "gaussian_noise_field",
            TextureKind::BlobField => "blob_field",
            TextureKind::StripeField => "stripe_field",
            TextureKind::VoronoiCells => "voronoi_cells",
            TextureKind::UserImage => "user_image",
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TextureKind::PROCEDURAL
            .iter()
            .chain(std::iter::once(&TextureKind::UserImage))
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

type Rgb = [f32; 3];

/// Kind-specific generation parameters. Lengths are in pixels, angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindParams {
    Checkerboard { period: usize, color_a: Rgb, color_b: Rgb },
    SinusoidGrating { period: f64, orientation: f64, color_a: Rgb, color_b: Rgb },
    GaussianNoiseField { sigma: f64, correlation_length: f64, mean: Rgb },
    BlobField { radius: f64, coverage: f64, background: Rgb, foreground: Rgb },
    StripeField { period: f64, duty: f64, orientation: f64, color_a: Rgb, color_b: Rgb },
    VoronoiCells { cell_size: f64, palette: Vec<Rgb>, edge: Rgb },
    UserImage { path: PathBuf },
}

impl KindParams {
    pub fn kind(&self) -> TextureKind {
        match self {
            KindParams::Checkerboard { .. } => TextureKind::Checkerboard,
            KindParams::SinusoidGrating { .. } => TextureKind::SinusoidGrating,
            KindParams::GaussianNoiseField { .. } => TextureKind::GaussianNoiseField,
            KindParams::BlobField { .. } => TextureKind::BlobField,
            KindParams::StripeField { .. } => TextureKind::StripeField,
            KindParams::VoronoiCells { .. } => TextureKind::VoronoiCells,
            KindParams::UserImage { .. } => TextureKind::UserImage,
        }
    }

    /// Texton period for periodic kinds.
    pub fn period(&self) -> Option<f64> {
        match self {
            KindParams::Checkerboard { period, .. } => Some(*period as f64),
            KindParams::SinusoidGrating { period, .. } | KindParams::StripeField { period, .. } => Some(*period),
            _ => None,
        }
    }

    /// Spatial correlation scale for stochastic kinds.
    pub fn correlation_length(&self) -> Option<f64> {
        match self {
            KindParams::GaussianNoiseField { correlation_length, .. } => Some(*correlation_length),
            KindParams::BlobField { radius, .. } => Some(*radius),
            KindParams::VoronoiCells { cell_size, .. } => Some(*cell_size),
            _ => None,
        }
    }

    /// Checks parameter ranges and the texton-repetition rule for `crop_size`.
    pub fn validate(&self, crop_size: usize) -> Result<()> {
        let crop = crop_size as f64;
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        match self {
            KindParams::Checkerboard { period, .. } if *period < 2 || period % 2 != 0 => {
                return bad(format!("checkerboard period must be even and >= 2, got {period}"));
            }
            KindParams::SinusoidGrating { period, .. } | KindParams::StripeField { period, .. } if *period < 2.0 => {
                return bad(format!("period must be >= 2, got {period}"));
            }
            KindParams::StripeField { duty, .. } if !(*duty > 0.0 && *duty < 1.0) => {
                return bad(format!("stripe duty must lie in (0, 1), got {duty}"));
            }
            KindParams::GaussianNoiseField { sigma, .. } if !(*sigma >= 0.0) => {
                return bad(format!("noise sigma must be >= 0, got {sigma}"));
            }
            KindParams::BlobField { coverage, .. } if !(*coverage > 0.0 && *coverage < 1.0) => {
                return bad(format!("blob coverage must lie in (0, 1), got {coverage}"));
            }
            KindParams::VoronoiCells { palette, .. } if palette.is_empty() => {
                return bad("voronoi palette is empty".into());
            }
            _ => {}
        }
        if let Some(p) = self.period() {
            if crop / p < MIN_REPETITIONS {
                return bad(format!(
                    "crop {crop_size} / period {p} = {:.2} < {MIN_REPETITIONS} texton repetitions",
                    crop / p
                ));
            }
        }
        if let Some(l) = self.correlation_length() {
            if !(l > 0.0) || l > crop / MIN_REPETITIONS {
                return bad(format!("correlation length {l} must lie in (0, crop/{MIN_REPETITIONS}] for crop {crop_size}"));
            }
        }
        Ok(())
    }

    /// Draws a valid parameter set for `kind` at `crop_size`.
    pub fn random<R: Rng + ?Sized>(kind: TextureKind, crop_size: usize, rng: &mut R) -> Result<Self> {
        let max_len = crop_size as f64 / MIN_REPETITIONS;
        if max_len < 2.0 {
            return Err(Error::InvalidParams(format!("crop size {crop_size} too small for procedural textures")));
        }
        let color = |rng: &mut R| -> Rgb { [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)] };
        let contrast = |a: Rgb, rng: &mut R| -> Rgb {
            // push every channel of the second colour the same way, so the pattern
            // also shows in luminance; one channel moves further for a hue shift
            let down = a.iter().sum::<f32>() > 0.0;
            let mut b = a;
            let ch = rng.gen_range(0..3);
            for (i, v) in b.iter_mut().enumerate() {
                let push = if i == ch { 1.2 } else { 0.6 };
                *v = if down { *v - push } else { *v + push };
                *v = v.clamp(-0.95, 0.95);
            }
            b
        };
        Ok(match kind {
            TextureKind::Checkerboard => {
                let max_even = ((max_len as usize) / 2 * 2).max(2);
                let min_even = ((max_len / 2.0).ceil() as usize).div_ceil(2) * 2;
                let choices: Vec<usize> = (min_even.max(2)..=max_even).step_by(2).collect();
                let period = *choices.choose(rng).unwrap_or(&2);
                let a = color(rng);
                KindParams::Checkerboard { period, color_a: a, color_b: contrast(a, rng) }
            }
            TextureKind::SinusoidGrating => {
                let a = color(rng);
                KindParams::SinusoidGrating {
                    period: rng.gen_range(max_len * 0.6..=max_len),
                    orientation: rng.gen_range(0.0..PI),
                    color_a: a,
                    color_b: contrast(a, rng),
                }
            }
            TextureKind::GaussianNoiseField => KindParams::GaussianNoiseField {
                sigma: rng.gen_range(0.25..0.5),
                correlation_length: rng.gen_range(1.0..=(max_len * 0.5).max(1.0)),
                mean: color(rng).map(|v| v * 0.5),
            },
            TextureKind::BlobField => {
                let bg = color(rng);
                KindParams::BlobField {
                    radius: rng.gen_range(1.5..=(max_len * 0.7).max(1.5)),
                    coverage: rng.gen_range(0.25..0.5),
                    background: bg,
                    foreground: contrast(bg, rng),
                }
            }
            TextureKind::StripeField => {
                let a = color(rng);
                let orientations = [0.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0];
                KindParams::StripeField {
                    period: rng.gen_range((max_len * 0.6).max(2.0)..=max_len),
                    duty: rng.gen_range(0.3..0.7),
                    orientation: *orientations.choose(rng).unwrap(),
                    color_a: a,
                    color_b: contrast(a, rng),
                }
            }
            TextureKind::VoronoiCells => {
                let palette = (0..4).map(|_| color(rng)).collect();
                KindParams::VoronoiCells {
                    cell_size: rng.gen_range((max_len * 0.6).max(2.0)..=max_len),
                    palette,
                    edge: [-0.9, -0.9, -0.9],
                }
            }
            TextureKind::UserImage => {
                return Err(Error::InvalidParams("user images cannot be generated".into()));
            }
        })
    }
}

/// Serializable description of one texture family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub family_id: String,
    pub params: KindParams,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

/// A texture family with its base image materialized.
#[derive(Clone, Debug)]
pub struct TextureFamily {
    pub descriptor: FamilyDescriptor,
    pub base_image: Image<f32>,
}

impl TextureFamily {
    pub fn family_id(&self) -> &str {
        &self.descriptor.family_id
    }

    pub fn kind(&self) -> TextureKind {
        self.descriptor.params.kind()
    }
}

/// A square crop of a family's base image.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureCrop {
    pub family_id: String,
    pub crop_index: usize,
    pub origin: (usize, usize),
    pub pixels: Image<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub family_id: String,
    pub crop_index: usize,
    pub origin: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub crop_size: usize,
    pub seed: u64,
    pub crops_per_family: usize,
    pub families: Vec<FamilyDescriptor>,
    pub crops: Vec<CropRecord>,
}

/// Generates a family's base image. Deterministic in `(params, seed)`.
pub fn make_family(
    family_id: &str,
    params: &KindParams,
    size: (usize, usize),
    crop_size: usize,
    seed: u64,
) -> Result<TextureFamily> {
    params.validate(crop_size)?;
    let (h, w) = size;
    if h < MIN_BASE_FACTOR * crop_size || w < MIN_BASE_FACTOR * crop_size {
        return Err(Error::InvalidParams(format!(
            "base image {h}x{w} smaller than {MIN_BASE_FACTOR} x crop size {crop_size}"
        )));
    }
    let base_image = match params {
        KindParams::UserImage { path } => {
            let img = io::load_png(path)?;
            if img.height() != h || img.width() != w {
                return Err(Error::InvalidParams(format!(
                    "{} is {}x{}, manifest says {h}x{w}",
                    path.display(),
                    img.height(),
                    img.width()
                )));
            }
            img
        }
        _ => render(params, h, w, seed),
    };
    Ok(TextureFamily {
        descriptor: FamilyDescriptor { family_id: family_id.to_string(), params: params.clone(), seed, height: h, width: w },
        base_image,
    })
}

fn lerp_rgb(a: &Rgb, b: &Rgb, t: f64, c: usize) -> f32 {
    (a[c] as f64 * (1.0 - t) + b[c] as f64 * t) as f32
}

fn render(params: &KindParams, h: usize, w: usize, seed: u64) -> Image<f32> {
    let mut rng = seeding::rng(seed, &[stream::CORPUS]);
    let mut img = match params {
        KindParams::Checkerboard { period, color_a, color_b } => {
            let half = period / 2;
            Image::from_fn(3, h, w, |c, y, x| if (y / half + x / half) % 2 == 0 { color_a[c] } else { color_b[c] })
        }
        KindParams::SinusoidGrating { period, orientation, color_a, color_b } => {
            let phase = rng.gen_range(0.0..2.0 * PI);
            let (s, co) = orientation.sin_cos();
            Image::from_fn(3, h, w, |c, y, x| {
                let u = (x as f64 * co + y as f64 * s) / period;
                let t = 0.5 + 0.5 * (2.0 * PI * u + phase).sin();
                lerp_rgb(color_a, color_b, t, c)
            })
        }
        KindParams::StripeField { period, duty, orientation, color_a, color_b } => {
            let phase: f64 = rng.gen_range(0.0..1.0);
            let (s, co) = orientation.sin_cos();
            Image::from_fn(3, h, w, |c, y, x| {
                let u = ((x as f64 + 0.5) * co + (y as f64 + 0.5) * s) / period + phase;
                if u.rem_euclid(1.0) < *duty {
                    color_a[c]
                } else {
                    color_b[c]
                }
            })
        }
        KindParams::GaussianNoiseField { sigma, correlation_length, mean } => {
            let field = smooth_noise(h, w, *correlation_length, &mut rng);
            Image::from_fn(3, h, w, |c, y, x| (mean[c] as f64 + sigma * field[y * w + x]) as f32)
        }
        KindParams::BlobField { radius, coverage, background, foreground } => {
            let n = ((coverage * (h * w) as f64) / (PI * radius * radius)).ceil().max(1.0) as usize;
            let blobs: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), radius * rng.gen_range(0.7..1.3)))
                .collect();
            let mut mask = vec![0.0f64; h * w];
            for (i, m) in mask.iter_mut().enumerate() {
                let (py, px) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                for &(by, bx, r) in &blobs {
                    let dy = torus_delta(py - by, h as f64);
                    let dx = torus_delta(px - bx, w as f64);
                    let d = (dy * dy + dx * dx).sqrt();
                    // one-pixel soft edge
                    let v = (r + 0.5 - d).clamp(0.0, 1.0);
                    if v > *m {
                        *m = v;
                    }
                }
            }
            Image::from_fn(3, h, w, |c, y, x| lerp_rgb(background, foreground, mask[y * w + x], c))
        }
        KindParams::VoronoiCells { cell_size, palette, edge } => {
            let n = (((h * w) as f64) / (cell_size * cell_size)).round().max(2.0) as usize;
            let sites: Vec<(f64, f64, usize)> = (0..n)
                .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), rng.gen_range(0..palette.len())))
                .collect();
            let mut owner = vec![(0usize, false); h * w];
            for (i, o) in owner.iter_mut().enumerate() {
                let (py, px) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                let (mut d1, mut d2, mut best) = (f64::INFINITY, f64::INFINITY, 0);
                for &(sy, sx, col) in &sites {
                    let dy = torus_delta(py - sy, h as f64);
                    let dx = torus_delta(px - sx, w as f64);
                    let d = (dy * dy + dx * dx).sqrt();
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                        best = col;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
                *o = (best, d2 - d1 < 1.0);
            }
            Image::from_fn(3, h, w, |c, y, x| {
                let (col, border) = owner[y * w + x];
                if border {
                    edge[c]
                } else {
                    palette[col][c]
                }
            })
        }
        KindParams::UserImage { .. } => unreachable!("user images are loaded, not rendered"),
    };
    img.clamp_unit();
    img
}

fn torus_delta(d: f64, n: f64) -> f64 {
    let d = d.rem_euclid(n);
    if d > n / 2.0 {
        d - n
    } else {
        d
    }
}

/// White Gaussian noise blurred with a periodic Gaussian of std `corr`, rescaled to unit variance.
fn smooth_noise<R: Rng + ?Sized>(h: usize, w: usize, corr: f64, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let r = (3.0 * corr).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * corr * corr)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / ks).collect();
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * white[y * w + wrap(x as isize + j as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[wrap(y as isize + j as isize - r, h) * w + x]).sum();
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let std = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / out.len() as f64).sqrt();
    out.iter().map(|v| (v - mean) / std.max(1e-12)).collect()
}

/// Uniformly random crop origin within a `height x width` base image.
pub fn sample_origin(height: usize, width: usize, crop_size: usize, rng_seed: u64) -> Result<(usize, usize)> {
    if crop_size > height || crop_size > width || crop_size == 0 {
        return Err(Error::CropTooLarge { crop: crop_size, height, width });
    }
    let mut rng = seeding::rng(rng_seed, &[stream::CROPS]);
    Ok((rng.gen_range(0..=height - crop_size), rng.gen_range(0..=width - crop_size)))
}

/// Samples one crop at a uniformly random valid origin, deterministic in `rng_seed`.
pub fn sample_crop(family: &TextureFamily, crop_size: usize, rng_seed: u64) -> Result<TextureCrop> {
    let img = &family.base_image;
    let origin = sample_origin(img.height(), img.width(), crop_size, rng_seed)?;
    Ok(TextureCrop {
        family_id: family.family_id().to_string(),
        crop_index: 0,
        origin,
        pixels: img.window(origin.0, origin.1, crop_size),
    })
}

/// Parameters of a procedural corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub crop_size: usize,
    pub base_size: usize,
    pub families_per_kind: usize,
    pub crops_per_family: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { crop_size: 32, base_size: 128, families_per_kind: 2, crops_per_family: 40, seed: 0 }
    }
}

fn crop_seed(manifest_seed: u64, family: usize, crop: usize) -> u64 {
    seeding::derive(manifest_seed, &[stream::CROPS, family as u64, crop as u64])
}

pub(crate) fn crop_records(families: &[FamilyDescriptor], crop_size: usize, per_family: usize, seed: u64) -> Result<Vec<CropRecord>> {
    let mut crops = Vec::with_capacity(families.len() * per_family);
    for (fi, f) in families.iter().enumerate() {
        for ci in 0..per_family {
            let origin = sample_origin(f.height, f.width, crop_size, crop_seed(seed, fi, ci))?;
            crops.push(CropRecord { family_id: f.family_id.clone(), crop_index: ci, origin });
        }
    }
    Ok(crops)
}

/// Manifest of `families_per_kind` random families for each of the six procedural kinds.
pub fn procedural_manifest(cfg: &CorpusConfig) -> Result<CorpusManifest> {
    if cfg.crops_per_family == 0 || cfg.families_per_kind == 0 {
        return Err(Error::InvalidParams("corpus counts must be >= 1".into()));
    }
    if cfg.base_size < MIN_BASE_FACTOR * cfg.crop_size {
        return Err(Error::InvalidParams(format!(
            "base size {} must be at least {MIN_BASE_FACTOR} x crop size {}",
            cfg.base_size, cfg.crop_size
        )));
    }
    let mut families = Vec::new();
    for (ki, kind) in TextureKind::PROCEDURAL.iter().enumerate() {
        for v in 0..cfg.families_per_kind {
            let mut rng = seeding::rng(cfg.seed, &[stream::CORPUS, ki as u64, v as u64]);
            let params = KindParams::random(*kind, cfg.crop_size, &mut rng)?;
            families.push(FamilyDescriptor {
                family_id: format!("{kind}-{v:02}"),
                params,
                seed: seeding::derive(cfg.seed, &[stream::CORPUS, ki as u64, v as u64, 1]),
                height: cfg.base_size,
                width: cfg.base_size,
            });
        }
    }
    let crops = crop_records(&families, cfg.crop_size, cfg.crops_per_family, cfg.seed)?;
    Ok(CorpusManifest { crop_size: cfg.crop_size, seed: cfg.seed, crops_per_family: cfg.crops_per_family, families, crops })
}

/// Turns every decodable image in `dir` into a `user_image` family.
///
/// Undecodable files and images smaller than `4 x crop_size` on a side are
/// skipped with a logged reason.
pub fn ingest_directory(dir: &Path, crop_size: usize, crops_per_family: usize, seed: u64) -> Result<CorpusManifest> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut decoded = 0usize;
    let mut families = Vec::new();
    for path in paths {
        let dims = match image::image_dimensions(&path) {
            Ok((w, h)) => (h as usize, w as usize),
            Err(e) => {
                let err = Error::UndecodableImage { path: path.clone(), reason: e.to_string() };
                log::warn!("skipping: {err}");
                continue;
            }
        };
        decoded += 1;
        let (h, w) = dims;
        if h < MIN_BASE_FACTOR * crop_size || w < MIN_BASE_FACTOR * crop_size {
            log::warn!(
                "rejecting {}: {h}x{w} is smaller than {MIN_BASE_FACTOR} x crop size {crop_size}",
                path.display()
            );
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        families.push(FamilyDescriptor {
            family_id: format!("user-{stem}"),
            params: KindParams::UserImage { path: path.canonicalize().unwrap_or(path) },
            seed: 0,
            height: h,
            width: w,
        });
    }
    if decoded == 0 {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    let crops = crop_records(&families, crop_size, crops_per_family, seed)?;
    Ok(CorpusManifest { crop_size, seed, crops_per_family, families, crops })
}

/// A manifest with every family materialized.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub families: Vec<TextureFamily>,
}

impl Corpus {
    pub fn build(manifest: &CorpusManifest) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for f in &manifest.families {
            if !seen.insert(f.family_id.as_str()) {
                return Err(Error::InvalidParams(format!("duplicate family id {}", f.family_id)));
            }
        }
        let families = manifest
            .families
            .iter()
            .map(|d| make_family(&d.family_id, &d.params, (d.height, d.width), manifest.crop_size, d.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest: manifest.clone(), families })
    }

    pub fn procedural(cfg: &CorpusConfig) -> Result<Self> {
        Self::build(&procedural_manifest(cfg)?)
    }

    pub fn crop_size(&self) -> usize {
        self.manifest.crop_size
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn family(&self, id: &str) -> Option<&TextureFamily> {
        self.families.iter().find(|f| f.family_id() == id)
    }

    /// The crops listed in the manifest, in manifest order.
    pub fn crops(&self) -> Vec<TextureCrop> {
        self.manifest
            .crops
            .iter()
            .map(|r| {
                let fam = self.family(&r.family_id).expect("manifest crop refers to a known family");
                TextureCrop {
                    family_id: r.family_id.clone(),
                    crop_index: r.crop_index,
                    origin: r.origin,
                    pixels: fam.base_image.window(r.origin.0, r.origin.1, self.manifest.crop_size),
                }
            })
            .collect()
    }

    /// A fresh crop from a uniformly chosen family, for training batches.
    pub fn random_crop<R: Rng + ?Sized>(&self, rng: &mut R) -> Image<f32> {
        let fam = &self.families[rng.gen_range(0..self.families.len())];
        let s = self.manifest.crop_size;
        let (h, w) = (fam.base_image.height(), fam.base_image.width());
        let (y, x) = (rng.gen_range(0..=h - s), rng.gen_range(0..=w - s));
        fam.base_image.window(y, x, s)
    }
}
