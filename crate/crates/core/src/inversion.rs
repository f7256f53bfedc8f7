//! Image-to-latent inversion: texture losses, initialization and iterative refinement of `w`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::models::{FeatureLayer, FeatureMaps, LatentW, LatentZ, ModelBundle};
use crate::optim::{Adam, UpdateRule};
use crate::scalar::Scalar;
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Encoder,
    MeanW,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    StyleGram,
    PixelL2,
    Content,
}

/// Feature layer compared by the content loss.
pub const CONTENT_LAYER: usize = 1;
/// Window over which the relative loss change is measured for convergence.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub init_mode: InitMode,
    pub loss_mode: LossMode,
    pub max_iters: usize,
    pub lr: f64,
    /// Relative loss change over [`CONVERGENCE_WINDOW`] iterations below which the run stops.
    pub tol: f64,
    pub seed: u64,
    pub update_rule: UpdateRule,
    /// Extra runs from random initializations; the lowest final loss wins.
    pub restarts: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            init_mode: InitMode::Encoder,
            loss_mode: LossMode::StyleGram,
            max_iters: 500,
            lr: 0.01,
            tol: 1e-5,
            seed: 0,
            update_rule: UpdateRule::Adam,
            restarts: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParams("max_iters must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParams("learning rate must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParams("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    NonFiniteLoss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult<T = f32> {
    /// Iterate with the lowest recorded loss.
    pub w_star: LatentW<T>,
    pub w_init: LatentW<T>,
    /// Loss at each evaluated iterate, starting with `w_init`.
    pub loss_trace: Vec<f64>,
    pub reconstruction: Image<T>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl<T: Scalar> InversionResult<T> {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace.first().copied().unwrap_or(f64::NAN)
    }

    /// Loss at `w_star`.
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Channel Gram matrix `F F^T` of one layer, row-major `C x C`.
pub fn gram_matrix<T: Scalar>(layer: &FeatureLayer<T>) -> Vec<f64> {
    let c = layer.channels;
    let p = layer.side * layer.side;
    let f: Vec<f64> = layer.values.iter().map(|v| v.to_f64_lossy()).collect();
    let mut out = vec![0.0; c * c];
    f64::gemm(c, p, c, 1.0, &f, (p, 1), &f, (1, p), 0.0, &mut out, (c, 1));
    out
}

/// `sum_l sum [(G_l(a) - G_l(b)) / (C_l N_l^2)]^2` over all layers, `N_l^2` being the spatial size.
pub fn gram_distance<T: Scalar>(a: &FeatureMaps<T>, b: &FeatureMaps<T>) -> f64 {
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(la, lb)| {
            let norm = (la.channels * la.side * la.side) as f64;
            gram_matrix(la).iter().zip(gram_matrix(lb)).map(|(x, y)| ((x - y) / norm).powi(2)).sum::<f64>()
        })
        .sum()
}

fn same_size<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::SizeMismatch {
            expected: format!("{}x{}x{}", a.channels(), a.height(), a.width()),
            got: format!("{}x{}x{}", b.channels(), b.height(), b.width()),
        });
    }
    Ok(())
}

pub fn gram_loss<T: Scalar>(a: &Image<T>, b: &Image<T>, bundle: &ModelBundle<T>) -> Result<f64> {
    same_size(a, b)?;
    Ok(gram_distance(&bundle.extract_features(a)?, &bundle.extract_features(b)?))
}

/// Mean squared pixel difference.
pub fn pixel_l2_loss<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    same_size(a, b)?;
    Ok(a.mse(b))
}

/// Mean squared difference of the activations of feature layer `layer`.
pub fn content_loss<T: Scalar>(a: &Image<T>, b: &Image<T>, layer: usize, bundle: &ModelBundle<T>) -> Result<f64> {
    same_size(a, b)?;
    let fa = bundle.extract_features(a)?;
    let fb = bundle.extract_features(b)?;
    let (la, lb) = match (fa.layers.get(layer), fb.layers.get(layer)) {
        (Some(la), Some(lb)) => (la, lb),
        _ => return Err(Error::InvalidParams(format!("feature layer {layer} does not exist"))),
    };
    let n = la.values.len() as f64;
    Ok(la.values.iter().zip(&lb.values).map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2)).sum::<f64>() / n)
}

/// Precomputed statistics of a target image for one loss mode.
#[derive(Clone, Debug)]
pub enum LossTarget<T> {
    /// Per-layer Gram matrices `[1, C, C]` and their `C N^2` normalizers.
    Gram(Vec<(Tensor<T>, f64)>),
    Pixels(Tensor<T>),
    Content(Tensor<T>),
}

impl<T: Scalar> LossTarget<T> {
    pub fn new(image: &Image<T>, mode: LossMode, bundle: &ModelBundle<T>) -> Result<Self> {
        bundle.check_image(image)?;
        Ok(match mode {
            LossMode::PixelL2 => Self::Pixels(image.to_tensor()),
            LossMode::StyleGram => Self::gram_of(image, bundle)?,
            LossMode::Content => {
                let mut g = Graph::new();
                let x = g.constant(image.to_tensor());
                let feats = bundle.feature_graph(&mut g, x);
                Self::Content(g.value(feats[CONTENT_LAYER]).clone())
            }
        })
    }

    fn gram_of(image: &Image<T>, bundle: &ModelBundle<T>) -> Result<Self> {
        bundle.check_image(image)?;
        // same graph operations as the optimized side, so an identical image gives exactly zero loss
        let mut g = Graph::new();
        let x = g.constant(image.to_tensor());
        let feats = bundle.feature_graph(&mut g, x);
        Ok(Self::Gram(
            feats
                .into_iter()
                .map(|f| {
                    let (_, c, h, w) = g.value(f).dims4();
                    let gm = g.gram(f);
                    (g.value(gm).clone(), (c * h * w) as f64)
                })
                .collect(),
        ))
    }

    /// Gram target `(1 - t) G(a) + t G(b)`.
    pub fn gram_lerp(a: &Image<T>, b: &Image<T>, t: f64, bundle: &ModelBundle<T>) -> Result<Self> {
        same_size(a, b)?;
        let (Self::Gram(ga), Self::Gram(gb)) = (Self::gram_of(a, bundle)?, Self::gram_of(b, bundle)?) else {
            unreachable!()
        };
        let (s, u) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
        Ok(Self::Gram(
            ga.into_iter()
                .zip(gb)
                .map(|((ta, norm), (tb, _))| {
                    let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| s * x + u * y).collect();
                    (Tensor::from_vec(ta.shape(), data), norm)
                })
                .collect(),
        ))
    }

    /// Records the loss of image `x: [1, C, S, S]` against this target.
    pub fn loss_graph(&self, g: &mut Graph<T>, bundle: &ModelBundle<T>, x: Var) -> Var {
        match self {
            Self::Pixels(t) => {
                let tv = g.constant(t.clone());
                let d = g.sub(x, tv);
                let sq = g.square(d);
                g.mean(sq)
            }
            Self::Content(t) => {
                let feats = bundle.feature_graph(g, x);
                let tv = g.constant(t.clone());
                let d = g.sub(feats[CONTENT_LAYER], tv);
                let sq = g.square(d);
                g.mean(sq)
            }
            Self::Gram(targets) => {
                let feats = bundle.feature_graph(g, x);
                let mut total: Option<Var> = None;
                for (f, (t, norm)) in feats.into_iter().zip(targets) {
                    let gm = g.gram(f);
                    let tv = g.constant(t.clone());
                    let d = g.sub(gm, tv);
                    let d = g.scale(d, T::from_f64_lossy(1.0 / norm));
                    let sq = g.square(d);
                    let s = g.sum(sq);
                    total = Some(match total {
                        None => s,
                        Some(acc) => g.add(acc, s),
                    });
                }
                total.expect("feature extractor has layers")
            }
        }
    }
}

/// Loss of `synthesize(w)` against `target` and its gradient with respect to `w`.
pub fn loss_and_grad_w<T: Scalar>(w: &LatentW<T>, target: &LossTarget<T>, bundle: &ModelBundle<T>) -> Result<(f64, Vec<T>)> {
    if w.dim() != bundle.latent_dim() {
        return Err(Error::DimMismatch { expected: bundle.latent_dim(), got: w.dim() });
    }
    let mut g = Graph::new();
    let wv = g.input_var(Tensor::from_vec(&[1, w.dim()], w.values().to_vec()));
    let img = bundle.synthesis_graph(&mut g, wv, false);
    let loss = target.loss_graph(&mut g, bundle, img);
    let grads = g.backward(loss);
    let grad = grads.get(wv).map(|s| s.to_vec()).unwrap_or_else(|| vec![T::zero(); w.dim()]);
    Ok((g.scalar(loss).to_f64_lossy(), grad))
}

/// Gram loss between `synthesize(w)` and `target` and its gradient with respect to `w`.
pub fn gram_loss_grad_w<T: Scalar>(w: &LatentW<T>, target: &Image<T>, bundle: &ModelBundle<T>) -> Result<(f64, Vec<T>)> {
    loss_and_grad_w(w, &LossTarget::new(target, LossMode::StyleGram, bundle)?, bundle)
}

/// Starting latent for inversion.
pub fn init_latent<T: Scalar>(image: &Image<T>, mode: InitMode, bundle: &ModelBundle<T>, seed: u64) -> Result<LatentW<T>> {
    match mode {
        InitMode::Encoder => {
            if !bundle.encoder_trained {
                return Err(Error::MissingEncoder);
            }
            bundle.encode(image)
        }
        InitMode::MeanW => bundle.mean_w.clone().ok_or(Error::MissingMeanW),
        InitMode::Random => {
            let z = LatentZ::sample(bundle.latent_dim(), &mut seeding::rng(seed, &[stream::INVERT]));
            bundle.map_latent(&z)
        }
    }
}

/// Optimizes `w` from `w_init` against `target`; the bundle is only read.
pub fn refine<T: Scalar>(
    w_init: LatentW<T>,
    target: &LossTarget<T>,
    cfg: &InversionConfig,
    bundle: &ModelBundle<T>,
) -> Result<InversionResult<T>> {
    cfg.validate()?;
    let mut w = Tensor::from_vec(&[1, w_init.dim()], w_init.values().to_vec());
    let mut adam = Adam::<T>::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut best = (f64::INFINITY, w_init.clone());
    let mut stop = StopReason::MaxIters;
    for it in 0..cfg.max_iters {
        let current = LatentW::new(w.data().to_vec());
        let (loss, grad) = loss_and_grad_w(&current, target, bundle)?;
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            stop = StopReason::NonFiniteLoss;
            break;
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, current);
        }
        let t = trace.len();
        if t > CONVERGENCE_WINDOW {
            let old = trace[t - 1 - CONVERGENCE_WINDOW];
            let change = if old == 0.0 { (loss - old).abs() } else { (loss - old).abs() / old.abs() };
            if change < cfg.tol {
                stop = StopReason::Converged;
                break;
            }
        }
        if it + 1 == cfg.max_iters {
            break;
        }
        match cfg.update_rule {
            UpdateRule::Adam => adam.step(&mut [&mut w], &[Some(&grad)]),
            UpdateRule::Gradient => {
                let lr = T::from_f64_lossy(cfg.lr);
                for (x, g) in w.data_mut().iter_mut().zip(&grad) {
                    *x -= lr * *g;
                }
            }
        }
    }
    let w_star = best.1;
    let reconstruction = bundle.synthesize(&w_star)?;
    Ok(InversionResult {
        w_star,
        w_init,
        loss_trace: trace,
        reconstruction,
        converged: stop == StopReason::Converged,
        stop_reason: stop,
    })
}

/// Inverts `image` into W: initialize per `cfg.init_mode`, then refine under `cfg.loss_mode`.
pub fn invert<T: Scalar>(image: &Image<T>, cfg: &InversionConfig, bundle: &ModelBundle<T>) -> Result<InversionResult<T>> {
    cfg.validate()?;
    let target = LossTarget::new(image, cfg.loss_mode, bundle)?;
    let mut best = refine(init_latent(image, cfg.init_mode, bundle, cfg.seed)?, &target, cfg, bundle)?;
    for r in 1..=cfg.restarts {
        let seed = seeding::derive(cfg.seed, &[stream::INVERT, r as u64]);
        let run = refine(init_latent(image, InitMode::Random, bundle, seed)?, &target, cfg, bundle)?;
        if run.final_loss() < best.final_loss() {
            best = run;
        }
    }
    Ok(best)
}

/// `synthesize(encode(image))`: one pass through each network.
pub fn resynthesize<T: Scalar>(image: &Image<T>, bundle: &ModelBundle<T>) -> Result<Image<T>> {
    bundle.synthesize(&bundle.encode(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArchConfig, Part};

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

    fn layer(rows: &[[f64; 4]]) -> FeatureLayer<f64> {
        FeatureLayer { channels: rows.len(), side: 2, values: rows.iter().flatten().copied().collect() }
    }

    #[test]
    fn gram_hand_examples() {
        let a = layer(&[[1.0; 4], [0.0; 4]]);
        let b = layer(&[[0.0; 4], [1.0; 4]]);
        assert_eq!(gram_matrix(&a), vec![4.0, 0.0, 0.0, 0.0]);
        let d = gram_distance(&FeatureMaps { layers: vec![a.clone()] }, &FeatureMaps { layers: vec![b] });
        assert!((d - 0.5).abs() < 1e-9);

        let r = layer(&[[0.3, -1.0, 2.0, 0.5], [1.5, 0.2, -0.7, 0.0], [0.1, 0.1, 0.9, -2.0]]);
        let gm = gram_matrix(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((gm[i * 3 + j] - gm[j * 3 + i]).abs() < 1e-9);
            }
        }
        let perm = [2, 0, 3, 1];
        let shuffled = FeatureLayer {
            channels: 3,
            side: 2,
            values: (0..3).flat_map(|c| perm.iter().map(move |&p| c * 4 + p)).map(|i| r.values[i]).collect(),
        };
        for (x, y) in gram_matrix(&shuffled).iter().zip(&gm) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let m = ModelBundle::<f64>::new(arch(), 0).unwrap();
        let mut rng = seeding::rng(1, &[]);
        let a = Image::from_fn(3, 16, 16, |_, _, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let b = a.roll(3, 5);
        assert_eq!(gram_loss(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(pixel_l2_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(content_loss(&a, &a, CONTENT_LAYER, &m).unwrap(), 0.0);
        assert!((gram_loss(&a, &b, &m).unwrap() - gram_loss(&b, &a, &m).unwrap()).abs() < 1e-15);
        let lo = Image::filled(3, 16, 16, -1.0);
        let hi = Image::filled(3, 16, 16, 1.0);
        assert_eq!(pixel_l2_loss(&lo, &hi).unwrap(), 4.0);
        let small = Image::filled(3, 8, 8, 0.0);
        assert!(matches!(gram_loss(&a, &small, &m), Err(Error::SizeMismatch { .. })));
        assert!(matches!(pixel_l2_loss(&a, &small), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn checkerboard_shift_sensitivity() {
        let m = ModelBundle::<f64>::new(arch(), 0).unwrap();
        let board = |shift: usize| {
            Image::from_fn(3, 16, 16, |_, y, x| if ((y + shift) / 2 + x / 2) % 2 == 0 { 1.0 } else { -1.0 })
        };
        let base = board(0);
        assert!(pixel_l2_loss(&base, &board(4)).unwrap() < 1e-12);
        let half = board(2);
        assert!(pixel_l2_loss(&base, &half).unwrap() > 3.0);
        let g = gram_loss(&base, &half, &m).unwrap();
        let scale = gram_loss(&base, &Image::filled(3, 16, 16, 0.0), &m).unwrap();
        assert!(g < 0.05 * scale, "{g} vs {scale}");
    }

    #[test]
    fn gram_gradient_matches_finite_differences() {
        let m = ModelBundle::<f64>::new(arch(), 2).unwrap();
        let mut rng = seeding::rng(3, &[]);
        let target = m.synthesize(&m.map_latent(&m.sample_z(&mut rng)).unwrap()).unwrap();
        let w = m.map_latent(&m.sample_z(&mut rng)).unwrap();
        let (_, grad) = gram_loss_grad_w(&w, &target, &m).unwrap();
        for i in [0, 2, 3, 5, 7] {
            let h = 1e-6;
            let mut wp = w.clone();
            wp.values_mut()[i] += h;
            let mut wm = w.clone();
            wm.values_mut()[i] -= h;
            let fd = (gram_loss(&m.synthesize(&wp).unwrap(), &target, &m).unwrap()
                - gram_loss(&m.synthesize(&wm).unwrap(), &target, &m).unwrap())
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
            assert!(rel <= 1e-3, "coordinate {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn init_modes() {
        let mut m = ModelBundle::<f32>::new(arch(), 0).unwrap();
        let img = Image::filled(3, 16, 16, 0.0);
        assert!(matches!(init_latent(&img, InitMode::Encoder, &m, 0), Err(Error::MissingEncoder)));
        assert!(matches!(init_latent(&img, InitMode::MeanW, &m, 0), Err(Error::MissingMeanW)));
        assert_eq!(init_latent(&img, InitMode::Random, &m, 4).unwrap(), init_latent(&img, InitMode::Random, &m, 4).unwrap());
        assert_ne!(init_latent(&img, InitMode::Random, &m, 4).unwrap(), init_latent(&img, InitMode::Random, &m, 5).unwrap());
        m.mean_w = Some(LatentW::new(vec![0.25; 8]));
        let other = Image::filled(3, 16, 16, 0.5);
        assert_eq!(init_latent(&img, InitMode::MeanW, &m, 0).unwrap(), init_latent(&other, InitMode::MeanW, &m, 9).unwrap());

        let exact = ModelBundle::<f32>::new(ArchConfig::default(), 0).unwrap().with_exact_inverse_pair();
        let w = LatentW::new((0..32).map(|i| i as f32 / 64.0).collect());
        let img = exact.synthesize(&w).unwrap();
        assert_eq!(init_latent(&img, InitMode::Encoder, &exact, 0).unwrap(), w);
        assert_eq!(resynthesize(&img, &exact).unwrap(), img);
    }

    #[test]
    fn stationary_start_stays_put() {
        let m = ModelBundle::<f64>::new(arch(), 0).unwrap();
        let w = m.map_latent(&m.sample_z(&mut seeding::rng(0, &[]))).unwrap();
        let img = m.synthesize(&w).unwrap();
        let target = LossTarget::new(&img, LossMode::StyleGram, &m).unwrap();
        let cfg = InversionConfig { max_iters: 20, tol: 0.0, ..Default::default() };
        let res = refine(w.clone(), &target, &cfg, &m).unwrap();
        assert_eq!(res.loss_trace[0], 0.0);
        assert_eq!(res.w_star, w);
        assert_eq!(res.loss_trace.len(), 20);
    }

    #[test]
    fn refinement_reduces_loss_and_leaves_networks_alone() {
        let m = ModelBundle::<f32>::new(arch(), 1).unwrap();
        let before: Vec<String> = [Part::Mapping, Part::Synthesis, Part::Encoder, Part::Features].iter().map(|&p| m.checksum(p)).collect();
        let mut rng = seeding::rng(7, &[]);
        let img = m.synthesize(&m.map_latent(&m.sample_z(&mut rng)).unwrap()).unwrap();
        let cfg = InversionConfig { init_mode: InitMode::Random, max_iters: 60, tol: 0.0, ..Default::default() };
        let res = invert(&img, &cfg, &m).unwrap();
        assert_eq!(res.loss_trace.len(), 60);
        assert!(res.final_loss() < res.initial_loss());
        assert_eq!(res.reconstruction, m.synthesize(&res.w_star).unwrap());
        let after: Vec<String> = [Part::Mapping, Part::Synthesis, Part::Encoder, Part::Features].iter().map(|&p| m.checksum(p)).collect();
        assert_eq!(before, after);

        let gd = InversionConfig { update_rule: UpdateRule::Gradient, ..cfg.clone() };
        assert!(invert(&img, &gd, &m).unwrap().final_loss() <= res.initial_loss());
        let restarts = InversionConfig { restarts: 2, ..cfg.clone() };
        assert!(invert(&img, &restarts, &m).unwrap().final_loss() <= res.final_loss());
        let loose = InversionConfig { tol: 0.5, ..cfg };
        let res = invert(&img, &loose, &m).unwrap();
        assert!(res.converged && res.loss_trace.len() < 60);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = ModelBundle::<f32>::new(arch(), 1).unwrap();
        let img = Image::filled(3, 16, 16, 0.0);
        let cfg = InversionConfig { max_iters: 0, init_mode: InitMode::Random, ..Default::default() };
        assert!(matches!(invert(&img, &cfg, &m), Err(Error::InvalidParams(_))));
        let cfg = InversionConfig { init_mode: InitMode::Random, ..Default::default() };
        assert!(matches!(invert(&Image::filled(3, 8, 8, 0.0), &cfg, &m), Err(Error::SizeMismatch { .. })));
    }
}
