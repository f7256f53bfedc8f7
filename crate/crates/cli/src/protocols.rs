//! Evaluation protocols: initialization ablation, loss ablation and encoder error
//! distributions.

use serde::{Deserialize, Serialize};
use texlab_core::corpus::{Corpus, TextureCrop};
use texlab_core::inversion::{invert, resynthesize, InitMode, InversionConfig, LossMode};
use texlab_core::metrics::{latent_error_distribution, stsim1_stats, stsim2_stats, EncoderChoice, ErrorDistribution, TextureStats};
use texlab_core::seeding::{self, stream};
use texlab_core::{Bundle, Result, Texture};

/// One reconstruction route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomOpt,
    MeanWOpt,
    Encoder,
    EncoderOpt,
    PixelL2,
    Content,
}

impl Method {
    pub const TABLE1: [Method; 4] = [Method::RandomOpt, Method::MeanWOpt, Method::Encoder, Method::EncoderOpt];
    pub const TABLE2: [Method; 3] = [Method::PixelL2, Method::Content, Method::EncoderOpt];

    pub fn table1_label(self) -> &'static str {
        match self {
            Method::RandomOpt => "Random Init.+Opt.",
            Method::MeanWOpt => "Mean W Init.+Opt.",
            Method::Encoder => "Encoder",
            Method::EncoderOpt => "Encoder+Opt.",
            Method::PixelL2 => "Pixel-wise L2 loss",
            Method::Content => "Content loss",
        }
    }

    pub fn table2_label(self) -> &'static str {
        match self {
            Method::EncoderOpt => "Style loss",
            m => m.table1_label(),
        }
    }

    /// `None` for the encoder-only route.
    fn settings(self) -> Option<(InitMode, LossMode)> {
        match self {
            Method::RandomOpt => Some((InitMode::Random, LossMode::StyleGram)),
            Method::MeanWOpt => Some((InitMode::MeanW, LossMode::StyleGram)),
            Method::Encoder => None,
            Method::EncoderOpt => Some((InitMode::Encoder, LossMode::StyleGram)),
            Method::PixelL2 => Some((InitMode::Encoder, LossMode::PixelL2)),
            Method::Content => Some((InitMode::Encoder, LossMode::Content)),
        }
    }
}

/// Reconstructs `target` by `method`; random initializations are seeded by `seed`.
pub fn reconstruct(bundle: &Bundle, target: &Texture, method: Method, base: &InversionConfig, seed: u64) -> Result<Texture> {
    match method.settings() {
        None => resynthesize(target, bundle),
        Some((init_mode, loss_mode)) => {
            let cfg = InversionConfig { init_mode, loss_mode, seed, ..base.clone() };
            Ok(invert(target, &cfg, bundle)?.reconstruction)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropScore {
    pub method: Method,
    pub family_id: String,
    pub crop_index: usize,
    pub stsim1: f64,
    pub stsim2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub stsim1: f64,
    pub stsim2: f64,
}

/// `n` crops spread evenly over the manifest order.
pub fn evaluation_crops(corpus: &Corpus, n: usize) -> Vec<TextureCrop> {
    let all = corpus.crops();
    let n = n.min(all.len());
    (0..n).map(|i| all[i * all.len() / n].clone()).collect()
}

/// Scores every method on every crop. Crop `i` uses seed `derive(seed, [EVAL, i])`.
pub fn score_methods(
    bundle: &Bundle,
    crops: &[TextureCrop],
    methods: &[Method],
    base: &InversionConfig,
    seed: u64,
) -> Result<Vec<CropScore>> {
    let mut out = Vec::with_capacity(crops.len() * methods.len());
    for (i, crop) in crops.iter().enumerate() {
        let target_stats = TextureStats::of(&crop.pixels)?;
        let crop_seed = seeding::derive(seed, &[stream::EVAL, i as u64]);
        for &method in methods {
            let rec = reconstruct(bundle, &crop.pixels, method, base, crop_seed)?;
            let stats = TextureStats::of(&rec)?;
            out.push(CropScore {
                method,
                family_id: crop.family_id.clone(),
                crop_index: crop.crop_index,
                stsim1: stsim1_stats(&target_stats, &stats)?,
                stsim2: stsim2_stats(&target_stats, &stats)?,
            });
        }
    }
    Ok(out)
}

/// Mean scores of `method`.
pub fn mean_scores(scores: &[CropScore], method: Method) -> (f64, f64) {
    let rows: Vec<&CropScore> = scores.iter().filter(|s| s.method == method).collect();
    let n = rows.len().max(1) as f64;
    (rows.iter().map(|s| s.stsim1).sum::<f64>() / n, rows.iter().map(|s| s.stsim2).sum::<f64>() / n)
}

pub fn table(scores: &[CropScore], methods: &[Method], label: fn(Method) -> &'static str) -> Vec<TableRow> {
    methods
        .iter()
        .map(|&m| {
            let (stsim1, stsim2) = mean_scores(scores, m);
            TableRow { method: label(m).to_string(), stsim1, stsim2 }
        })
        .collect()
}

/// Reconstruction errors for the trained and a freshly initialized encoder.
pub fn encoder_errors(bundle: &Bundle, n: usize, seed: u64) -> Result<(ErrorDistribution, ErrorDistribution)> {
    Ok((
        latent_error_distribution(bundle, EncoderChoice::Trained, n, seed)?,
        latent_error_distribution(bundle, EncoderChoice::RandomInit, n, seed)?,
    ))
}
