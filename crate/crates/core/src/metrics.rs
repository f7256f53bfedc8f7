//! Structural texture similarity (STSIM-1/2), latent reconstruction error
//! distributions and nearest-texture retrieval.
//!
//! Subbands: grayscale (channel mean) filtered by first derivatives of a Gaussian at
//! sigma 1, 2, 4 steered to 0, 45, 90 and 135 degrees, plus a Gaussian lowpass
//! residual. Orientation 0 responds to horizontal structure (intensity changing
//! along y). Borders are reflected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{save_png, write_csv, write_json};
use crate::kernels::filter_separable;
use crate::models::{LatentZ, ModelBundle};
use crate::scalar::Scalar;
use crate::seeding::{self, stream};

pub const SCALES: [f64; 3] = [1.0, 2.0, 4.0];
pub const ORIENTATIONS: usize = 4;
pub const LOWPASS_SIGMA: f64 = 4.0;
pub const MIN_SIZE: usize = 16;
const C0: f64 = 0.001;
const C1: f64 = 0.001;
const C2: f64 = 0.001;

/// One filtered plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Subband {
    /// `None` for the lowpass residual.
    pub scale: Option<usize>,
    pub orientation: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

fn gaussian(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Derivative-of-Gaussian taps, scaled so a unit ramp gives a unit response.
fn gaussian_derivative(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    // correlation taps: k[t] multiplies f(x + t), so a positive slope needs k odd with k[t] ~ t
    let k: Vec<f64> = (-r..=r).map(|t| t as f64 * (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = (-r..=r).zip(&k).map(|(t, v)| t as f64 * v).sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Splits `image` into `3 x 4` oriented band-pass subbands and one lowpass residual.
pub fn subband_decompose<T: Scalar>(image: &Image<T>) -> Result<Vec<Subband>> {
    let (h, w) = (image.height(), image.width());
    if h < MIN_SIZE || w < MIN_SIZE {
        return Err(Error::ImageTooSmall { height: h, width: w });
    }
    let gray = image.gray();
    let mut out = Vec::with_capacity(SCALES.len() * ORIENTATIONS + 1);
    for (si, &sigma) in SCALES.iter().enumerate() {
        let (g, d) = (gaussian(sigma), gaussian_derivative(sigma));
        let dy = filter_separable(&gray, h, w, &g, &d);
        let dx = filter_separable(&gray, h, w, &d, &g);
        for o in 0..ORIENTATIONS {
            let theta = o as f64 * std::f64::consts::PI / ORIENTATIONS as f64;
            let (c, s) = (theta.cos(), theta.sin());
            let values = dy.iter().zip(&dx).map(|(a, b)| c * a + s * b).collect();
            out.push(Subband { scale: Some(si), orientation: Some(o), height: h, width: w, values });
        }
    }
    let g = gaussian(LOWPASS_SIGMA);
    out.push(Subband { scale: None, orientation: None, height: h, width: w, values: filter_separable(&gray, h, w, &g, &g) });
    Ok(out)
}

/// Mean, variance and lag-1 autocorrelations of one subband.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubbandStats {
    pub mean: f64,
    pub var: f64,
    pub rho_x: f64,
    pub rho_y: f64,
}

/// Lag autocorrelation `(cov + C2) / (var + C2)`, clamped to `[-1, 1]`.
fn lag_corr(v: &[f64], h: usize, w: usize, mean: f64, var: f64, dy: usize, dx: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..h - dy {
        for x in 0..w - dx {
            acc += (v[y * w + x] - mean) * (v[(y + dy) * w + x + dx] - mean);
            n += 1;
        }
    }
    ((acc / n as f64 + C2) / (var + C2)).clamp(-1.0, 1.0)
}

impl SubbandStats {
    pub fn of(b: &Subband) -> Self {
        let n = b.values.len() as f64;
        let mean = b.values.iter().sum::<f64>() / n;
        let var = b.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            var,
            rho_x: lag_corr(&b.values, b.height, b.width, mean, var, 0, 1),
            rho_y: lag_corr(&b.values, b.height, b.width, mean, var, 1, 0),
        }
    }
}

/// Per-subband statistics of one image plus the cross-subband correlations used by STSIM-2.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureStats {
    pub height: usize,
    pub width: usize,
    pub subbands: Vec<SubbandStats>,
    /// For each subband, correlation coefficients with its neighbours (see [`neighbours`]).
    pub cross: Vec<Vec<f64>>,
}

/// Neighbours of subband `i`: next orientation at the same scale (cyclic) and the same
/// orientation at the next coarser scale. The lowpass residual has none.
pub fn neighbours(i: usize) -> Vec<usize> {
    let bands = SCALES.len() * ORIENTATIONS;
    if i >= bands {
        return Vec::new();
    }
    let (s, o) = (i / ORIENTATIONS, i % ORIENTATIONS);
    let mut out = vec![s * ORIENTATIONS + (o + 1) % ORIENTATIONS];
    if s + 1 < SCALES.len() {
        out.push((s + 1) * ORIENTATIONS + o);
    }
    out
}

/// `(cov + C2) / (sigma_a sigma_b + C2)`, clamped to `[-1, 1]`.
fn cross_corr(a: &Subband, sa: &SubbandStats, b: &Subband, sb: &SubbandStats) -> f64 {
    let n = a.values.len() as f64;
    let cov = a.values.iter().zip(&b.values).map(|(x, y)| (x - sa.mean) * (y - sb.mean)).sum::<f64>() / n;
    ((cov + C2) / ((sa.var * sb.var).sqrt() + C2)).clamp(-1.0, 1.0)
}

impl TextureStats {
    pub fn of<T: Scalar>(image: &Image<T>) -> Result<Self> {
        let bands = subband_decompose(image)?;
        let subbands: Vec<SubbandStats> = bands.iter().map(SubbandStats::of).collect();
        let cross = (0..bands.len())
            .map(|i| neighbours(i).into_iter().map(|j| cross_corr(&bands[i], &subbands[i], &bands[j], &subbands[j])).collect())
            .collect();
        Ok(Self { height: image.height(), width: image.width(), subbands, cross })
    }
}

/// `(L C Cx Cy)^(1/4)` for one subband pair.
pub fn subband_term(a: &SubbandStats, b: &SubbandStats) -> f64 {
    let l = ((2.0 * a.mean * b.mean + C0) / (a.mean * a.mean + b.mean * b.mean + C0)).max(0.0);
    let c = ((2.0 * (a.var * b.var).sqrt() + C1) / (a.var + b.var + C1)).max(0.0);
    let cx = 1.0 - 0.5 * (a.rho_x - b.rho_x).abs();
    let cy = 1.0 - 0.5 * (a.rho_y - b.rho_y).abs();
    (l * c * cx * cy).powf(0.25).min(1.0)
}

fn check_pair(a: &TextureStats, b: &TextureStats) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::SizeMismatch {
            expected: format!("{}x{}", a.height, a.width),
            got: format!("{}x{}", b.height, b.width),
        });
    }
    Ok(())
}

pub fn stsim1_stats(a: &TextureStats, b: &TextureStats) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.subbands.len() as f64;
    Ok(a.subbands.iter().zip(&b.subbands).map(|(x, y)| subband_term(x, y)).sum::<f64>() / n)
}

pub fn stsim2_stats(a: &TextureStats, b: &TextureStats) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.subbands.len() as f64;
    let total: f64 = (0..a.subbands.len())
        .map(|i| {
            let term = subband_term(&a.subbands[i], &b.subbands[i]);
            let cross = &a.cross[i];
            if cross.is_empty() {
                return term;
            }
            let c: f64 = cross.iter().zip(&b.cross[i]).map(|(p, q)| 1.0 - 0.5 * (p - q).abs()).sum::<f64>() / cross.len() as f64;
            term * c
        })
        .sum();
    Ok(total / n)
}

pub fn stsim1<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    stsim1_stats(&TextureStats::of(a)?, &TextureStats::of(b)?)
}

pub fn stsim2<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    stsim2_stats(&TextureStats::of(a)?, &TextureStats::of(b)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair_id: String,
    pub stsim1: f64,
    pub stsim2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: Vec<PairScore>,
    pub mean_stsim1: f64,
    pub mean_stsim2: f64,
    pub config_hash: String,
}

impl MetricReport {
    pub fn from_pairs(pairs: Vec<PairScore>, config_hash: impl Into<String>) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean_stsim1 = pairs.iter().map(|p| p.stsim1).sum::<f64>() / n;
        let mean_stsim2 = pairs.iter().map(|p| p.stsim2).sum::<f64>() / n;
        Self { pairs, mean_stsim1, mean_stsim2, config_hash: config_hash.into() }
    }

    /// Scores every `(label, reference, candidate)` triple.
    pub fn evaluate<T: Scalar>(triples: &[(String, &Image<T>, &Image<T>)], config_hash: &str) -> Result<Self> {
        let pairs = triples
            .iter()
            .map(|(id, a, b)| {
                let (sa, sb) = (TextureStats::of(*a)?, TextureStats::of(*b)?);
                Ok(PairScore { pair_id: id.clone(), stsim1: stsim1_stats(&sa, &sb)?, stsim2: stsim2_stats(&sa, &sb)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_pairs(pairs, config_hash))
    }

    /// `<stem>.csv` with per-pair scores and `<stem>.json` with the summary.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_csv(&self.pairs, &dir.join(format!("{stem}.csv")))?;
        write_json(
            &serde_json::json!({
                "pairs": self.pairs.len(),
                "mean_stsim1": self.mean_stsim1,
                "mean_stsim2": self.mean_stsim2,
                "config_hash": self.config_hash,
            }),
            &dir.join(format!("{stem}.json")),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderChoice {
    Trained,
    RandomInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub p1: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

/// Samples of `|w - F(G(w))|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub encoder_kind: EncoderChoice,
    pub samples: Vec<f64>,
}

/// Linear-interpolation percentile of sorted data, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ErrorDistribution {
    pub fn sorted(&self) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    pub fn percentile(&self, p: f64) -> f64 {
        percentile(&self.sorted(), p)
    }

    pub fn summary(&self) -> ErrorSummary {
        let s = self.sorted();
        ErrorSummary {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len().max(1) as f64,
            min: s.first().copied().unwrap_or(f64::NAN),
            p1: percentile(&s, 1.0),
            p50: percentile(&s, 50.0),
            p99: percentile(&s, 99.0),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            index: usize,
            error: f64,
        }
        let rows: Vec<Row> = self.samples.iter().enumerate().map(|(index, &error)| Row { index, error }).collect();
        write_csv(&rows, &dir.join(format!("{stem}.csv")))?;
        write_json(&serde_json::json!({ "encoder_kind": self.encoder_kind, "summary": self.summary() }), &dir.join(format!("{stem}.json")))
    }
}

/// `n` reconstruction errors `|w - F(G(w))|` with `w = M(z)`, `z` seeded.
/// `RandomInit` swaps in a freshly initialized encoder derived from `seed`.
pub fn latent_error_distribution<T: Scalar>(
    bundle: &ModelBundle<T>,
    kind: EncoderChoice,
    n: usize,
    seed: u64,
) -> Result<ErrorDistribution> {
    if n == 0 {
        return Err(Error::InvalidParams("n must be >= 1".into()));
    }
    let random;
    let model = match kind {
        EncoderChoice::Trained => bundle,
        EncoderChoice::RandomInit => {
            random = bundle.clone().with_random_encoder(seeding::derive(seed, &[stream::INIT_ENCODER]));
            &random
        }
    };
    let mut rng = seeding::rng(seed, &[stream::EVAL]);
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let chunk = (n - samples.len()).min(64);
        let zs: Vec<LatentZ<T>> = (0..chunk).map(|_| model.sample_z(&mut rng)).collect();
        let ws = model.map_batch(&zs)?;
        let imgs = model.synthesize_batch(&ws)?;
        let refs: Vec<&Image<T>> = imgs.iter().collect();
        for (w, e) in ws.iter().zip(model.encode_batch(&refs)?) {
            samples.push(w.distance(&e));
        }
    }
    Ok(ErrorDistribution { encoder_kind: kind, samples })
}

/// Overlaid histograms (first distribution blue, second orange) as a PNG.
pub fn render_histogram(dists: &[&ErrorDistribution], bins: usize, path: &Path) -> Result<()> {
    let all: Vec<f64> = dists.iter().flat_map(|d| d.samples.iter().copied()).filter(|v| v.is_finite()).collect();
    if all.is_empty() || bins == 0 {
        return Err(Error::InvalidParams("histogram needs samples and bins".into()));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-12);
    let counts: Vec<Vec<usize>> = dists
        .iter()
        .map(|d| {
            let mut c = vec![0; bins];
            for &v in &d.samples {
                let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
                c[b.min(bins - 1)] += 1;
            }
            c
        })
        .collect();
    let peak = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let (bar_w, height) = (4usize, 128usize);
    let colors = [[-1.0, -0.4, 0.8], [0.9, 0.2, -1.0], [-0.2, 0.7, -0.2]];
    let img = Image::<f32>::from_fn(3, height, bins * bar_w, |c, y, x| {
        let b = x / bar_w;
        let level = (height - y) as f64 / height as f64;
        let mut v = 1.0f32;
        for (k, cnt) in counts.iter().enumerate() {
            if cnt[b] as f64 / peak >= level {
                let col = colors[k % colors.len()][c] as f32;
                v = if v == 1.0 { col } else { 0.5 * (v + col) };
            }
        }
        v
    });
    save_png(&img, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub family_id: String,
    pub crop_index: usize,
    pub score: f64,
}

/// Top-`k` manifest crops by STSIM-1, ties broken by `(family_id, crop_index)`.
pub fn retrieve_nearest<T: Scalar>(query: &Image<T>, corpus: &Corpus, k: usize) -> Result<Vec<Retrieval>> {
    if corpus.is_empty() || corpus.manifest.crops.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidParams("k must be >= 1".into()));
    }
    let q = TextureStats::of(query)?;
    let mut out = corpus
        .crops()
        .into_iter()
        .map(|c| {
            Ok(Retrieval {
                score: stsim1_stats(&q, &TextureStats::of(&c.pixels.cast::<T>())?)?,
                family_id: c.family_id,
                crop_index: c.crop_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| a.family_id.cmp(&b.family_id)).then(a.crop_index.cmp(&b.crop_index))
    });
    out.truncate(k);
    Ok(out)
}
