//! Latent-space experiments: mean latent, interpolation paths, perturbation crops,
//! image transforms and the pixel-space Gram interpolation baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::Image;
use crate::inversion::{invert, refine, InitMode, InversionConfig, InversionResult, LossMode, LossTarget};
use crate::kernels::reflect;
use crate::models::{LatentW, LatentZ, ModelBundle};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

/// Upper bound on refinement iterations for perturbation crops.
pub const CROP_REFINE_ITERS: usize = 200;

/// Mean of `M(z_i)` over `n` Gaussian draws.
pub fn estimate_mean_w<T: Scalar>(bundle: &ModelBundle<T>, n: usize, seed: u64) -> Result<LatentW<T>> {
    if n == 0 {
        return Err(Error::InvalidParams("n_samples must be >= 1".into()));
    }
    let d = bundle.latent_dim();
    let mut rng = seeding::rng(seed, &[stream::MEAN_W]);
    let mut acc = vec![0.0f64; d];
    let mut left = n;
    while left > 0 {
        let chunk = left.min(1024);
        let zs: Vec<LatentZ<T>> = (0..chunk).map(|_| LatentZ::sample(d, &mut rng)).collect();
        for w in bundle.map_batch(&zs)? {
            for (a, v) in acc.iter_mut().zip(w.values()) {
                *a += v.to_f64_lossy();
            }
        }
        left -= chunk;
    }
    Ok(LatentW::new(acc.into_iter().map(|a| T::from_f64_lossy(a / n as f64)).collect()))
}

/// `(1 - t) w_a + t w_b`.
pub fn lerp_w<T: Scalar>(a: &LatentW<T>, b: &LatentW<T>, t: f64) -> Result<LatentW<T>> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), got: b.dim() });
    }
    let (s, u) = (1.0 - t, t);
    Ok(LatentW::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| T::from_f64_lossy(s * x.to_f64_lossy() + u * y.to_f64_lossy()))
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPath<T = f32> {
    pub w_a: LatentW<T>,
    pub w_b: LatentW<T>,
    pub latents: Vec<LatentW<T>>,
    pub frames: Vec<Image<T>>,
}

impl<T: Scalar> InterpolationPath<T> {
    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    /// All frames side by side.
    pub fn strip(&self) -> Image<T> {
        Image::hstack(&self.frames)
    }
}

/// Frames `synthesize(lerp(w_a, w_b, i / (steps - 1)))`; the endpoints are used verbatim.
pub fn path_between<T: Scalar>(bundle: &ModelBundle<T>, w_a: &LatentW<T>, w_b: &LatentW<T>, steps: usize) -> Result<InterpolationPath<T>> {
    if steps < 2 {
        return Err(Error::InvalidParams("an interpolation path needs at least 2 steps".into()));
    }
    let mut latents = Vec::with_capacity(steps);
    for i in 0..steps {
        latents.push(match i {
            0 => w_a.clone(),
            i if i == steps - 1 => w_b.clone(),
            i => lerp_w(w_a, w_b, i as f64 / (steps - 1) as f64)?,
        });
    }
    let frames = bundle.synthesize_batch(&latents)?;
    Ok(InterpolationPath { w_a: w_a.clone(), w_b: w_b.clone(), latents, frames })
}

/// Interpolates between two independently sampled latents.
pub fn global_interpolate<T: Scalar>(bundle: &ModelBundle<T>, seed: u64, steps: usize) -> Result<InterpolationPath<T>> {
    let mut rng = seeding::rng(seed, &[stream::INTERPOLATE]);
    let za = bundle.sample_z(&mut rng);
    let zb = bundle.sample_z(&mut rng);
    path_between(bundle, &bundle.map_latent(&za)?, &bundle.map_latent(&zb)?, steps)
}

/// Settings for optimizing pixels directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelOptConfig {
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    /// Standard deviation of the seeded noise start image.
    pub noise_std: f64,
}

impl Default for PixelOptConfig {
    fn default() -> Self {
        Self { iters: 500, lr: 0.01, seed: 0, noise_std: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelOptResult<T = f32> {
    pub image: Image<T>,
    pub loss_trace: Vec<f64>,
}

/// Optimizes an image so its Gram matrices match `(1 - t) G(a) + t G(b)`.
///
/// Pixels are projected back into `[-1, 1]` after every update. `start` replaces the
/// seeded noise image.
pub fn gram_target_interpolate<T: Scalar>(
    a: &Image<T>,
    b: &Image<T>,
    t: f64,
    bundle: &ModelBundle<T>,
    cfg: &PixelOptConfig,
    start: Option<&Image<T>>,
) -> Result<PixelOptResult<T>> {
    if cfg.iters == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidParams("pixel optimization needs iters >= 1 and lr > 0".into()));
    }
    bundle.check_image(a)?;
    bundle.check_image(b)?;
    let target = LossTarget::gram_lerp(a, b, t, bundle)?;
    let mut x = match start {
        Some(img) => {
            bundle.check_image(img)?;
            img.to_tensor()
        }
        None => Tensor::randn(&a.to_tensor().shape().to_vec(), cfg.noise_std, &mut seeding::rng(cfg.seed, &[stream::PIXELS])),
    };
    let (lo, hi) = (-T::one(), T::one());
    x.data_mut().iter_mut().for_each(|v| *v = v.max(lo).min(hi));
    let mut adam = Adam::<T>::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let mut g = Graph::new();
        let xv = g.input_var(x.clone());
        let loss = target.loss_graph(&mut g, bundle, xv);
        let value = g.scalar(loss).to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        trace.push(value);
        if it + 1 == cfg.iters {
            break;
        }
        let grads = g.backward(loss);
        let grad = grads.get(xv).map(|s| s.to_vec()).unwrap_or_else(|| vec![T::zero(); x.len()]);
        adam.step(&mut [&mut x], &[Some(&grad)]);
        x.data_mut().iter_mut().for_each(|v| *v = v.max(lo).min(hi));
    }
    Ok(PixelOptResult { image: Image::from_batch(&x, 0), loss_trace: trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropSample<T = f32> {
    pub w_perturbed: LatentW<T>,
    pub w_refined: LatentW<T>,
    pub image: Image<T>,
    /// Gram loss of `synthesize(w_perturbed)` against `synthesize(w)`.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Draws `n` perturbations `w + eps`, `eps ~ N(0, sigma^2 I)`, and refines each by Gram-loss
/// inversion against `synthesize(w)` (at most [`CROP_REFINE_ITERS`] iterations).
pub fn synthesize_crops<T: Scalar>(
    w: &LatentW<T>,
    n: usize,
    sigma: f64,
    bundle: &ModelBundle<T>,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Vec<CropSample<T>>> {
    if n == 0 || !(sigma >= 0.0) {
        return Err(Error::InvalidParams("need n >= 1 and sigma >= 0".into()));
    }
    let target_img = bundle.synthesize(w)?;
    let target = LossTarget::new(&target_img, LossMode::StyleGram, bundle)?;
    let cfg = InversionConfig { max_iters: cfg.max_iters.min(CROP_REFINE_ITERS), ..cfg.clone() };
    (0..n)
        .map(|i| {
            let mut rng = seeding::rng(seed, &[stream::PERTURB, i as u64]);
            let eps = Tensor::<T>::randn(&[w.dim()], sigma, &mut rng);
            let wp = LatentW::new(w.values().iter().zip(eps.data()).map(|(&a, &e)| a + e).collect());
            let res = refine(wp.clone(), &target, &cfg, bundle)?;
            Ok(CropSample {
                w_perturbed: wp,
                loss_before: res.initial_loss(),
                loss_after: res.final_loss(),
                w_refined: res.w_star,
                image: res.reconstruction,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Resample about the image center by `factor` in `[0.5, 2]`.
    Scale { factor: f64 },
    /// Per-channel additive offsets in `[-0.5, 0.5]`.
    ColorPerturb { offsets: Vec<f64> },
}

impl TransformSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        match self {
            Self::Scale { factor } if !(0.5..=2.0).contains(factor) => {
                Err(Error::InvalidSpec(format!("scale factor {factor} outside [0.5, 2]")))
            }
            Self::ColorPerturb { offsets } if offsets.len() != channels => {
                Err(Error::InvalidSpec(format!("{} offsets for {channels} channels", offsets.len())))
            }
            Self::ColorPerturb { offsets } if offsets.iter().any(|o| !(-0.5..=0.5).contains(o)) => {
                Err(Error::InvalidSpec("color offsets must lie in [-0.5, 0.5]".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn identity() -> Self {
        Self::Scale { factor: 1.0 }
    }
}

/// Applies a scale (bilinear, center-anchored, reflected borders) or a clamped color offset.
pub fn transform_image<T: Scalar>(image: &Image<T>, spec: &TransformSpec) -> Result<Image<T>> {
    spec.validate(image.channels())?;
    let (c, h, w) = (image.channels(), image.height(), image.width());
    Ok(match spec {
        TransformSpec::ColorPerturb { offsets } => Image::from_fn(c, h, w, |ch, y, x| {
            let v = image.get(ch, y, x) + T::from_f64_lossy(offsets[ch]);
            v.max(-T::one()).min(T::one())
        }),
        TransformSpec::Scale { factor } => {
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            Image::from_fn(c, h, w, |ch, y, x| {
                let sy = cy + (y as f64 - cy) / factor;
                let sx = cx + (x as f64 - cx) / factor;
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let at = |yy: f64, xx: f64| image.get(ch, reflect(yy as isize, h), reflect(xx as isize, w)).to_f64_lossy();
                let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0);
                let bottom = (1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0);
                T::from_f64_lossy((1.0 - fy) * top + fy * bottom)
            })
        }
    })
}

/// Interpolates from `w` to the inversion of its transformed synthesis.
/// The inversion always starts from the encoder and uses the Gram loss.
pub fn local_interpolate<T: Scalar>(
    w: &LatentW<T>,
    spec: &TransformSpec,
    steps: usize,
    bundle: &ModelBundle<T>,
    cfg: &InversionConfig,
) -> Result<(InterpolationPath<T>, InversionResult<T>)> {
    let target = transform_image(&bundle.synthesize(w)?, spec)?;
    let cfg = InversionConfig { init_mode: InitMode::Encoder, loss_mode: LossMode::StyleGram, ..cfg.clone() };
    let inv = invert(&target, &cfg, bundle)?;
    Ok((path_between(bundle, w, &inv.w_star, steps)?, inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::gram_loss;
    use crate::models::ArchConfig;

    fn arch() -> ArchConfig {
        ArchConfig {
            latent_dim: 8,
            image_size: 16,
            channels: 3,
            synthesis_width: 8,
            discriminator_width: 4,
            encoder_width: 4,
            feature_channels: vec![4, 8, 8],
        }
    }

    #[test]
    fn mean_w_examples() {
        let m = ModelBundle::<f64>::new(arch(), 0).unwrap();
        let one = estimate_mean_w(&m, 1, 5).unwrap();
        let z = LatentZ::sample(8, &mut seeding::rng(5, &[stream::MEAN_W]));
        assert_eq!(one, m.map_latent(&z).unwrap());
        assert_eq!(estimate_mean_w(&m, 50, 2).unwrap(), estimate_mean_w(&m, 50, 2).unwrap());

        let id = ModelBundle::<f64>::new(ArchConfig::default(), 0).unwrap().with_identity_mapping();
        let mean = estimate_mean_w(&id, 10_000, 1).unwrap();
        assert!(mean.norm() <= 3.0 * (32.0f64 / 10_000.0).sqrt());
        let a = estimate_mean_w(&id, 100_000, 1).unwrap();
        let b = estimate_mean_w(&id, 100_000, 2).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= 0.05));
        assert!(matches!(estimate_mean_w(&m, 0, 0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn lerp_examples() {
        let a = LatentW::new(vec![1.0f64, -2.0, 0.5]);
        let b = LatentW::new(vec![3.0, 4.0, -1.5]);
        assert_eq!(lerp_w(&a, &b, 0.0).unwrap(), a);
        assert_eq!(lerp_w(&a, &b, 1.0).unwrap(), b);
        for t in [0.1, 0.37, 0.5, 0.9] {
            let l = lerp_w(&a, &b, t).unwrap();
            let r = lerp_w(&b, &a, 1.0 - t).unwrap();
            for i in 0..3 {
                let reference = (1.0 - t) * a.values()[i] + t * b.values()[i];
                assert!((l.values()[i] - reference).abs() <= 1e-9);
                assert!((l.values()[i] - r.values()[i]).abs() <= 1e-9);
            }
        }
        assert!(matches!(lerp_w(&a, &LatentW::new(vec![0.0; 2]), 0.5), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn global_paths() {
        let m = ModelBundle::<f32>::new(arch(), 0).unwrap();
        let p = global_interpolate(&m, 3, 2).unwrap();
        assert_eq!(p.frames[0], m.synthesize(&p.w_a).unwrap());
        assert_eq!(p.frames[1], m.synthesize(&p.w_b).unwrap());
        let p8 = global_interpolate(&m, 3, 8).unwrap();
        assert_eq!(p8, global_interpolate(&m, 3, 8).unwrap());
        assert_eq!(p8.steps(), 8);
        for (l, f) in p8.latents.iter().zip(&p8.frames) {
            assert_eq!(&m.synthesize(l).unwrap(), f);
        }
        assert_eq!(p8.strip().width(), 8 * 16);
        assert!(matches!(global_interpolate(&m, 3, 1), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn gram_target_optimization() {
        let m = ModelBundle::<f32>::new(arch(), 0).unwrap();
        let mut rng = seeding::rng(4, &[]);
        let a = m.synthesize(&m.map_latent(&m.sample_z(&mut rng)).unwrap()).unwrap();
        let b = m.synthesize(&m.map_latent(&m.sample_z(&mut rng)).unwrap()).unwrap();
        let cfg = PixelOptConfig { iters: 300, ..Default::default() };
        let res = gram_target_interpolate(&a, &b, 0.0, &m, &cfg, None).unwrap();
        assert!(res.loss_trace.last().unwrap() * 5.0 < res.loss_trace[0], "{:?}", (res.loss_trace[0], res.loss_trace.last()));
        let (lo, hi) = res.image.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);

        let fixed = gram_target_interpolate(&a, &b, 0.0, &m, &PixelOptConfig { iters: 5, ..Default::default() }, Some(&a)).unwrap();
        assert_eq!(fixed.loss_trace[0], 0.0);
        assert_eq!(fixed.image, a);
    }

    #[test]
    fn perturbation_crops() {
        let m = ModelBundle::<f64>::new(arch(), 0).unwrap();
        let w = m.map_latent(&m.sample_z(&mut seeding::rng(6, &[]))).unwrap();
        let cfg = InversionConfig { max_iters: 30, ..Default::default() };
        for s in synthesize_crops(&w, 3, 0.0, &m, &cfg, 1).unwrap() {
            assert_eq!(s.w_refined, w);
        }
        let crops = synthesize_crops(&w, 4, 0.1, &m, &cfg, 1).unwrap();
        for i in 0..crops.len() {
            for j in i + 1..crops.len() {
                assert!(crops[i].w_refined.distance(&crops[j].w_refined) > 0.0);
            }
            assert!(crops[i].loss_after <= crops[i].loss_before);
        }
    }

    #[test]
    fn transforms() {
        let img = Image::from_fn(3, 32, 32, |c, y, x| ((c + y * 3 + x * 7) % 11) as f32 / 11.0 - 0.5);
        assert_eq!(transform_image(&img, &TransformSpec::identity()).unwrap(), img);
        assert_eq!(transform_image(&img, &TransformSpec::ColorPerturb { offsets: vec![0.0; 3] }).unwrap(), img);
        let shifted = transform_image(&img, &TransformSpec::ColorPerturb { offsets: vec![0.5, 0.0, -0.5] }).unwrap();
        assert!(shifted.min_max().0 >= -1.0 && shifted.min_max().1 <= 1.0);
        assert!(matches!(transform_image(&img, &TransformSpec::Scale { factor: 3.0 }), Err(Error::InvalidSpec(_))));
        assert!(matches!(
            transform_image(&img, &TransformSpec::ColorPerturb { offsets: vec![0.7, 0.0, 0.0] }),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(transform_image(&img, &TransformSpec::ColorPerturb { offsets: vec![0.0] }), Err(Error::InvalidSpec(_))));
    }

    /// Lag of the strongest autocorrelation peak of row-mean-removed rows, searched in `2..max_lag`.
    fn dominant_period(img: &Image<f32>, max_lag: usize) -> usize {
        let w = img.width();
        let row_corr = |lag: usize| -> f64 {
            let mut s = 0.0;
            for y in 0..img.height() {
                let row: Vec<f64> = (0..w).map(|x| img.get(0, y, x) as f64).collect();
                let m = row.iter().sum::<f64>() / w as f64;
                s += (0..w - lag).map(|x| (row[x] - m) * (row[x + lag] - m)).sum::<f64>() / (w - lag) as f64;
            }
            s
        };
        (2..max_lag).max_by(|&a, &b| row_corr(a).partial_cmp(&row_corr(b)).unwrap()).unwrap()
    }

    #[test]
    fn scaling_doubles_checkerboard_period() {
        let board = Image::from_fn(3, 64, 64, |_, y, x| if (y / 4 + x / 4) % 2 == 0 { 1.0f32 } else { -1.0 });
        assert_eq!(dominant_period(&board, 12), 8);
        let scaled = transform_image(&board, &TransformSpec::Scale { factor: 2.0 }).unwrap();
        assert_eq!(dominant_period(&scaled, 24), 16);
    }

    #[test]
    fn identity_local_path_is_static() {
        let m = ModelBundle::<f32>::new(ArchConfig::default(), 0).unwrap().with_exact_inverse_pair();
        let w = LatentW::new((0..32).map(|i| (i as f32 - 16.0) / 32.0).collect());
        let cfg = InversionConfig { max_iters: 10, ..Default::default() };
        let (path, inv) = local_interpolate(&w, &TransformSpec::identity(), 4, &m, &cfg).unwrap();
        assert_eq!(inv.w_star, w);
        for f in &path.frames {
            assert!(gram_loss(f, &path.frames[0], &m).unwrap() <= 1e-12);
        }
    }
}
