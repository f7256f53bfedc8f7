//! Latent types, network architecture and the [`ModelBundle`] forward operations.

mod checkpoint;
mod nets;
mod params;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, read_param_file, save_checkpoint, write_param_file, CheckpointHeader};
pub use nets::{
    Discriminator, Encoder, EncoderKind, FeatureExtractor, MappingKind, MappingNet, SynthesisKind, SynthesisNet,
    DEBUG_EMBED_SCALE,
};
pub use params::ParamStore;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

macro_rules! latent_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct $name<T = f32> {
            values: Vec<T>,
        }

        impl<T: Scalar> $name<T> {
            pub fn new(values: Vec<T>) -> Self {
                Self { values }
            }

            pub fn zeros(dim: usize) -> Self {
                Self { values: vec![T::zero(); dim] }
            }

            pub fn dim(&self) -> usize {
                self.values.len()
            }

            pub fn values(&self) -> &[T] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [T] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<T> {
                self.values
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }

            pub fn cast<U: Scalar>(&self) -> $name<U> {
                $name { values: self.values.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect() }
            }

            /// Euclidean distance in `f64`.
            pub fn distance(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(a, b)| {
                        let d = a.to_f64_lossy() - b.to_f64_lossy();
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }

            pub fn norm(&self) -> f64 {
                self.values.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
            }
        }
    };
}

latent_type!(
    /// A point in the Gaussian input space Z.
    LatentZ
);
latent_type!(
    /// A point in the intermediate space W produced by the mapping network.
    LatentW
);

impl<T: Scalar> LatentZ<T> {
    /// `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self::new((0..dim).map(|_| T::from_f64_lossy(rng.sample(StandardNormal))).collect())
    }
}

/// Stacks latent vectors into an `[N, d]` tensor.
pub fn stack<T: Scalar>(rows: &[&[T]]) -> Tensor<T> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::from_vec(&[rows.len(), d], data)
}

fn unstack<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<T>> {
    let d = t.dim(1);
    t.data().chunks(d).map(|c| c.to_vec()).collect()
}

/// Network sizes. Synthesis, discriminator and encoder widths are derived from the
/// base widths and `image_size`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    pub channels: usize,
    pub synthesis_width: usize,
    pub discriminator_width: usize,
    pub encoder_width: usize,
    pub feature_channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            image_size: 32,
            channels: 3,
            synthesis_width: 32,
            discriminator_width: 16,
            encoder_width: 32,
            feature_channels: vec![16, 32, 64, 64],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if s < 16 || !s.is_power_of_two() {
            return Err(Error::InvalidParams(format!("image size {s} must be a power of two >= 16")));
        }
        if self.latent_dim == 0 || self.channels == 0 {
            return Err(Error::InvalidParams("latent dim and channels must be positive".into()));
        }
        if self.feature_channels.len() < 2 {
            return Err(Error::InvalidParams("feature extractor needs at least two layers".into()));
        }
        if s >> (self.feature_channels.len() - 1) < 2 {
            return Err(Error::InvalidParams("too many feature layers for the image size".into()));
        }
        Ok(())
    }

    /// One block at 4x4 plus one per doubling up to `image_size`.
    pub fn synthesis_channels(&self) -> Vec<usize> {
        let blocks = (self.image_size / 4).trailing_zeros() as usize + 1;
        (0..blocks).map(|i| (self.synthesis_width >> (i / 2)).max(8)).collect()
    }

    /// Pooled stages down to 4x4, then one unpooled stage.
    pub fn discriminator_channels(&self) -> Vec<usize> {
        let stages = (self.image_size / 4).trailing_zeros() as usize + 1;
        (0..stages).map(|i| (self.discriminator_width << i).min(2 * self.discriminator_width)).collect()
    }

    /// Pooled blocks down to 2x2.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let blocks = (self.image_size / 2).trailing_zeros() as usize;
        (0..blocks).map(|i| (self.encoder_width << i).min(4 * self.encoder_width)).collect()
    }

    /// Normalized `key=value` lines, sorted by key.
    pub fn normalized(&self) -> String {
        let fc: Vec<String> = self.feature_channels.iter().map(|c| c.to_string()).collect();
        let mut kv = [
            format!("channels={}", self.channels),
            format!("discriminator_width={}", self.discriminator_width),
            format!("encoder_width={}", self.encoder_width),
            format!("feature_channels={}", fc.join(",")),
            format!("image_size={}", self.image_size),
            format!("latent_dim={}", self.latent_dim),
            format!("synthesis_width={}", self.synthesis_width),
        ];
        kv.sort();
        kv.join("\n") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalized().as_bytes()))
    }
}

/// Activations of one feature layer for a single image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayer<T> {
    pub channels: usize,
    pub side: usize,
    /// `channels x side x side`, plane by plane.
    pub values: Vec<T>,
}

/// Per-layer feature maps, shallow to deep.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps<T> {
    pub layers: Vec<FeatureLayer<T>>,
}

/// Names of the parameter groups used by checksums.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Mapping,
    Synthesis,
    Discriminator,
    Encoder,
    Features,
}

/// Everything needed to synthesize, critique, encode and compare textures.
#[derive(Clone, Debug)]
pub struct ModelBundle<T = f32> {
    pub arch: ArchConfig,
    pub mapping: MappingNet<T>,
    pub synthesis: SynthesisNet<T>,
    pub discriminator: Discriminator<T>,
    pub encoder: Encoder<T>,
    /// Whether the encoder has been trained (or is an exact debug inverse).
    pub encoder_trained: bool,
    features: FeatureExtractor<T>,
    pub mean_w: Option<LatentW<T>>,
    pub seeds: BTreeMap<String, u64>,
}

impl<T: Scalar> ModelBundle<T> {
    /// Freshly initialized networks; every part draws from its own seed stream.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut seeds = BTreeMap::new();
        seeds.insert("init".to_string(), seed);
        let mapping = MappingNet::new(arch.latent_dim, &mut seeding::rng(seed, &[stream::INIT_MAPPING]));
        let synthesis = SynthesisNet::new(&arch, &mut seeding::rng(seed, &[stream::INIT_SYNTHESIS]));
        let discriminator = Discriminator::new(&arch, &mut seeding::rng(seed, &[stream::INIT_DISCRIMINATOR]));
        let encoder = Encoder::new(&arch, &mut seeding::rng(seed, &[stream::INIT_ENCODER]));
        let features = FeatureExtractor::new(&arch, &mut seeding::rng(seed, &[stream::INIT_FEATURES]));
        Ok(Self {
            arch,
            mapping,
            synthesis,
            discriminator,
            encoder,
            encoder_trained: false,
            features,
            mean_w: None,
            seeds,
        })
    }

    /// Debug wiring: mapping is the identity, so `w = z`.
    pub fn with_identity_mapping(mut self) -> Self {
        self.mapping = MappingNet::identity();
        self
    }

    /// Debug wiring: synthesis embeds `w` into pixels and the encoder reads it back exactly.
    pub fn with_exact_inverse_pair(mut self) -> Self {
        self.synthesis = SynthesisNet::debug_embed(&self.arch);
        self.encoder = Encoder::debug_readout(&self.arch);
        self.encoder_trained = true;
        self
    }

    /// Replaces the encoder with a freshly initialized, untrained one.
    pub fn with_random_encoder(mut self, seed: u64) -> Self {
        self.encoder = Encoder::new(&self.arch, &mut seeding::rng(seed, &[stream::INIT_ENCODER]));
        self.encoder_trained = false;
        self
    }

    /// Installs externally supplied feature-extractor weights (names and shapes must match).
    pub fn with_feature_weights(mut self, store: &ParamStore<T>) -> Result<Self> {
        self.features.params.load_from(store).map_err(Error::InvalidParams)?;
        Ok(self)
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn image_size(&self) -> usize {
        self.arch.image_size
    }

    pub fn features(&self) -> &FeatureExtractor<T> {
        &self.features
    }

    pub fn checksum(&self, part: Part) -> String {
        match part {
            Part::Mapping => self.mapping.params.checksum(),
            Part::Synthesis => self.synthesis.params.checksum(),
            Part::Discriminator => self.discriminator.params.checksum(),
            Part::Encoder => self.encoder.params.checksum(),
            Part::Features => self.features.params.checksum(),
        }
    }

    /// Checksum of the generator: mapping and synthesis together.
    pub fn generator_checksum(&self) -> String {
        format!("{}:{}", self.checksum(Part::Mapping), self.checksum(Part::Synthesis))
    }

    pub fn all_finite(&self) -> bool {
        self.mapping.params.all_finite()
            && self.synthesis.params.all_finite()
            && self.discriminator.params.all_finite()
            && self.encoder.params.all_finite()
            && self.features.params.all_finite()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            arch: self.arch.clone(),
            mapping: MappingNet { kind: self.mapping.kind, params: self.mapping.params.cast() },
            synthesis: recast_synthesis(&self.synthesis, &self.arch),
            discriminator: recast(&Discriminator::new(&self.arch, &mut seeding::rng(0, &[])), &self.discriminator.params, |d: &mut Discriminator<U>| &mut d.params),
            encoder: recast_encoder(&self.encoder, &self.arch),
            encoder_trained: self.encoder_trained,
            features: recast(&FeatureExtractor::new(&self.arch, &mut seeding::rng(0, &[])), &self.features.params, |f: &mut FeatureExtractor<U>| &mut f.params),
            mean_w: self.mean_w.as_ref().map(|w| w.cast()),
            seeds: self.seeds.clone(),
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.arch.latent_dim {
            return Err(Error::DimMismatch { expected: self.arch.latent_dim, got });
        }
        Ok(())
    }

    pub fn check_image(&self, img: &Image<T>) -> Result<()> {
        let s = self.arch.image_size;
        if img.channels() != self.arch.channels || img.height() != s || img.width() != s {
            return Err(Error::SizeMismatch {
                expected: format!("{}x{s}x{s}", self.arch.channels),
                got: format!("{}x{}x{}", img.channels(), img.height(), img.width()),
            });
        }
        Ok(())
    }

    pub fn sample_z<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentZ<T> {
        LatentZ::sample(self.arch.latent_dim, rng)
    }

    /// `w = M(z)`.
    pub fn map_latent(&self, z: &LatentZ<T>) -> Result<LatentW<T>> {
        Ok(self.map_batch(std::slice::from_ref(z))?.remove(0))
    }

    pub fn map_batch(&self, zs: &[LatentZ<T>]) -> Result<Vec<LatentW<T>>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        for z in zs {
            self.check_dim(z.dim())?;
        }
        let mut g = Graph::new();
        let p = self.mapping.params.bind(&mut g, false);
        let rows: Vec<&[T]> = zs.iter().map(|z| z.values()).collect();
        let z = g.constant(stack(&rows));
        let w = self.mapping.forward(&mut g, &p, z);
        Ok(unstack(g.value(w)).into_iter().map(LatentW::new).collect())
    }

    /// `G(w)`: the synthesis network alone.
    pub fn synthesize(&self, w: &LatentW<T>) -> Result<Image<T>> {
        Ok(self.synthesize_batch(std::slice::from_ref(w))?.remove(0))
    }

    pub fn synthesize_batch(&self, ws: &[LatentW<T>]) -> Result<Vec<Image<T>>> {
        if ws.is_empty() {
            return Ok(Vec::new());
        }
        for w in ws {
            self.check_dim(w.dim())?;
        }
        let mut g = Graph::new();
        let rows: Vec<&[T]> = ws.iter().map(|w| w.values()).collect();
        let w = g.constant(stack(&rows));
        let img = self.synthesis_graph(&mut g, w, false);
        let t = g.value(img);
        Ok((0..ws.len()).map(|i| Image::from_batch(t, i)).collect())
    }

    /// Critic score of one image.
    pub fn discriminate(&self, img: &Image<T>) -> Result<T> {
        Ok(self.discriminate_batch(&[img])?[0])
    }

    pub fn discriminate_batch(&self, imgs: &[&Image<T>]) -> Result<Vec<T>> {
        if imgs.is_empty() {
            return Ok(Vec::new());
        }
        for im in imgs {
            self.check_image(im)?;
        }
        let mut g = Graph::new();
        let p = self.discriminator.params.bind(&mut g, false);
        let x = g.constant(Image::batch(imgs));
        let s = self.discriminator.forward(&mut g, &p, x);
        Ok(g.value(s).data().to_vec())
    }

    /// `F(I)`: the encoder's latent estimate.
    pub fn encode(&self, img: &Image<T>) -> Result<LatentW<T>> {
        Ok(self.encode_batch(&[img])?.remove(0))
    }

    pub fn encode_batch(&self, imgs: &[&Image<T>]) -> Result<Vec<LatentW<T>>> {
        if imgs.is_empty() {
            return Ok(Vec::new());
        }
        for im in imgs {
            self.check_image(im)?;
        }
        let mut g = Graph::new();
        let p = self.encoder.params.bind(&mut g, false);
        let x = g.constant(Image::batch(imgs));
        let w = self.encoder.forward(&mut g, &p, x);
        Ok(unstack(g.value(w)).into_iter().map(LatentW::new).collect())
    }

    pub fn extract_features(&self, img: &Image<T>) -> Result<FeatureMaps<T>> {
        self.check_image(img)?;
        let mut g = Graph::new();
        let x = g.constant(img.to_tensor());
        let layers = self.feature_graph(&mut g, x);
        Ok(FeatureMaps {
            layers: layers
                .iter()
                .map(|&v| {
                    let (_, c, h, _) = g.value(v).dims4();
                    FeatureLayer { channels: c, side: h, values: g.value(v).data().to_vec() }
                })
                .collect(),
        })
    }

    /// Records synthesis of `w: [N, d]` on `g`; `trainable` controls whether synthesis weights get gradients.
    pub fn synthesis_graph(&self, g: &mut Graph<T>, w: Var, trainable: bool) -> Var {
        let p = self.synthesis.params.bind(g, trainable);
        self.synthesis.forward(g, &p, w)
    }

    /// Records the frozen feature extractor on `g`.
    pub fn feature_graph(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        let p = self.features.params.bind(g, false);
        self.features.forward(g, &p, x)
    }
}

fn recast<T: Scalar, U: Scalar, N>(template: &N, src: &ParamStore<T>, store: impl Fn(&mut N) -> &mut ParamStore<U>) -> N
where
    N: Clone,
{
    let mut out = template.clone();
    store(&mut out).load_from(&src.cast()).expect("same architecture");
    out
}

fn recast_synthesis<T: Scalar, U: Scalar>(s: &SynthesisNet<T>, arch: &ArchConfig) -> SynthesisNet<U> {
    let template = match s.kind {
        SynthesisKind::Styled => SynthesisNet::new(arch, &mut seeding::rng(0, &[])),
        SynthesisKind::DebugEmbed => SynthesisNet::debug_embed(arch),
    };
    recast(&template, &s.params, |n: &mut SynthesisNet<U>| &mut n.params)
}

fn recast_encoder<T: Scalar, U: Scalar>(e: &Encoder<T>, arch: &ArchConfig) -> Encoder<U> {
    let template = match e.kind {
        EncoderKind::Conv => Encoder::new(arch, &mut seeding::rng(0, &[])),
        EncoderKind::DebugReadout => Encoder::debug_readout(arch),
    };
    recast(&template, &e.params, |n: &mut Encoder<U>| &mut n.params)
}

#[cfg(test)]
mod tests;
