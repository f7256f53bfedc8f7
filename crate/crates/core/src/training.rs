//! Adversarial generator training and latent-consistency encoder training.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::{softplus, Grads, Graph, Var};
use crate::image::Image;
use crate::io::write_csv;
use crate::models::{save_checkpoint, stack, ArchConfig, Discriminator, LatentW, LatentZ, ModelBundle};
use crate::optim::{grad_norm, Adam};
use crate::scalar::Scalar;
use crate::seeding::{self, stream};
use crate::tensor::Tensor;

/// Adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// Critic difference of means with no Lipschitz control.
    WassersteinAsWritten,
    /// `softplus(D(fake)) + softplus(-D(real))` for D and `softplus(-D(fake))` for G.
    NonsaturatingLogistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Mapping-network learning rate relative to `lr_g`.
    #[serde(default = "default_mapping_lr_mul")]
    pub mapping_lr_mul: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub r1_weight: f64,
    /// R1 is applied every this many steps with its weight scaled by the interval.
    pub r1_interval: usize,
    pub loss_form: LossForm,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_mapping_lr_mul() -> f64 {
    0.01
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            lr_g: 0.002,
            lr_d: 0.002,
            mapping_lr_mul: 0.01,
            beta1: 0.0,
            beta2: 0.99,
            r1_weight: 1.0,
            r1_interval: 4,
            loss_form: LossForm::NonsaturatingLogistic,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParams("steps and batch_size must be >= 1".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.mapping_lr_mul > 0.0) {
            return Err(Error::InvalidParams("learning rates must be positive".into()));
        }
        if !(self.r1_weight >= 0.0) || self.r1_interval == 0 {
            return Err(Error::InvalidParams("r1_weight must be >= 0 and r1_interval >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParams("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `(factor, every_n_steps)`: the learning rate is multiplied by `factor` every `every_n_steps`.
    pub lr_decay: (f64, usize),
    pub seed: u64,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self { steps: 10_000, batch_size: 32, lr: 1e-4, lr_decay: (0.2, 4000), seed: 0, checkpoint_every: 0, checkpoint_dir: None }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParams("steps and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParams("learning rate must be positive".into()));
        }
        let (factor, every) = self.lr_decay;
        if !(factor > 0.0 && factor <= 1.0) || every == 0 {
            return Err(Error::InvalidParams("lr decay factor must be in (0, 1] and period >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.0.powi((step / self.lr_decay.1) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanRecord {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Zero on steps without the penalty.
    pub r1: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub step: usize,
    pub loss_e: f64,
    pub loss_e_avg100: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog<R> {
    pub records: Vec<R>,
    pub checkpoints: Vec<PathBuf>,
}

impl<R> Default for TrainLog<R> {
    fn default() -> Self {
        Self { records: Vec::new(), checkpoints: Vec::new() }
    }
}

impl<R: Serialize> TrainLog<R> {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(&self.records, path)
    }
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Discriminator loss on critic scores.
pub fn d_loss(real: &[f64], fake: &[f64], form: LossForm) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match form {
        LossForm::WassersteinAsWritten => Ok(mean(fake)? - mean(real)?),
        LossForm::NonsaturatingLogistic => {
            let f: Vec<f64> = fake.iter().map(|&s| softplus(s)).collect();
            let r: Vec<f64> = real.iter().map(|&s| softplus(-s)).collect();
            Ok(mean(&f)? + mean(&r)?)
        }
    }
}

/// Generator loss on critic scores of generated images.
pub fn g_loss(fake: &[f64], form: LossForm) -> Result<f64> {
    match form {
        LossForm::WassersteinAsWritten => Ok(-mean(fake)?),
        LossForm::NonsaturatingLogistic => mean(&fake.iter().map(|&s| softplus(-s)).collect::<Vec<_>>()),
    }
}

fn d_loss_graph<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var, form: LossForm) -> Var {
    match form {
        LossForm::WassersteinAsWritten => {
            let f = g.mean(fake);
            let r = g.mean(real);
            g.sub(f, r)
        }
        LossForm::NonsaturatingLogistic => {
            let sf = g.softplus(fake);
            let f = g.mean(sf);
            let neg = g.scale(real, -T::one());
            let sr = g.softplus(neg);
            let r = g.mean(sr);
            g.add(f, r)
        }
    }
}

fn g_loss_graph<T: Scalar>(g: &mut Graph<T>, fake: Var, form: LossForm) -> Var {
    match form {
        LossForm::WassersteinAsWritten => {
            let f = g.mean(fake);
            g.scale(f, -T::one())
        }
        LossForm::NonsaturatingLogistic => {
            let neg = g.scale(fake, -T::one());
            let s = g.softplus(neg);
            g.mean(s)
        }
    }
}

/// R1 penalty `weight/2 * mean_i |grad_x D(x_i)|^2` on a real batch, and its gradient
/// with respect to every discriminator parameter (double backpropagation).
pub fn r1_penalty<T: Scalar>(disc: &Discriminator<T>, real: &Tensor<T>, weight: f64) -> (f64, Vec<Vec<T>>) {
    let mut g = Graph::new();
    let p = disc.params.bind(&mut g, true);
    let gx = disc.input_gradient(&mut g, &p, real);
    let sq = g.square(gx);
    let total = g.sum(sq);
    let r1 = g.scale(total, T::from_f64_lossy(0.5 * weight / real.dim(0) as f64));
    let mut grads = g.backward(r1);
    let out = p
        .iter()
        .zip(disc.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![T::zero(); t.len()]))
        .collect();
    (g.scalar(r1).to_f64_lossy(), out)
}

fn collect_grads<'a, T: Scalar>(grads: &'a Grads<T>, vars: &[Var]) -> Vec<Option<&'a [T]>> {
    vars.iter().map(|&v| grads.get(v)).collect()
}

fn sample_z_batch<T: Scalar, R: rand::Rng>(n: usize, d: usize, rng: &mut R) -> Tensor<T> {
    let zs: Vec<LatentZ<T>> = (0..n).map(|_| LatentZ::sample(d, rng)).collect();
    let rows: Vec<&[T]> = zs.iter().map(|z| z.values()).collect();
    stack(&rows)
}

fn checkpoint<T: Scalar>(bundle: &ModelBundle<T>, dir: &Option<PathBuf>, name: String, log: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = dir {
        let path = dir.join(name);
        save_checkpoint(bundle, &path)?;
        log.push(path);
    }
    Ok(())
}

/// Trains mapping, synthesis and discriminator from scratch on `corpus`.
///
/// Each real batch draws every crop from a uniformly chosen family at a random
/// position, so batches mix families and within-family crops.
pub fn train_gan<T: Scalar>(
    corpus: &Corpus,
    arch: &ArchConfig,
    cfg: &GanTrainConfig,
) -> Result<(ModelBundle<T>, TrainLog<GanRecord>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if corpus.crop_size() != arch.image_size {
        return Err(Error::SizeMismatch {
            expected: format!("crop size {}", arch.image_size),
            got: format!("crop size {}", corpus.crop_size()),
        });
    }
    let mut bundle = ModelBundle::<T>::new(arch.clone(), cfg.seed)?;
    bundle.seeds.insert("gan".into(), cfg.seed);
    let mut opt_d = Adam::<T>::new(cfg.lr_d, cfg.beta1, cfg.beta2);
    let mut opt_g = Adam::<T>::new(cfg.lr_g, cfg.beta1, cfg.beta2);
    let mut opt_m = Adam::<T>::new(cfg.lr_g * cfg.mapping_lr_mul, cfg.beta1, cfg.beta2);
    let mut log = TrainLog::default();
    let (b, d) = (cfg.batch_size, arch.latent_dim);

    for step in 0..cfg.steps {
        let mut batch_rng = seeding::rng(cfg.seed, &[stream::GAN_BATCH, step as u64]);
        let mut latent_rng = seeding::rng(cfg.seed, &[stream::GAN_LATENT, step as u64]);
        let reals: Vec<Image<T>> = (0..b).map(|_| corpus.random_crop(&mut batch_rng).cast()).collect();
        let real_refs: Vec<&Image<T>> = reals.iter().collect();
        let real_t = Image::batch(&real_refs);

        // discriminator update
        let z = sample_z_batch::<T, _>(b, d, &mut latent_rng);
        let fake_t = {
            let mut g = Graph::new();
            let mp = bundle.mapping.params.bind(&mut g, false);
            let zv = g.constant(z);
            let w = bundle.mapping.forward(&mut g, &mp, zv);
            let img = bundle.synthesis_graph(&mut g, w, false);
            g.value(img).clone()
        };
        let (loss_d, mut d_grads) = {
            let mut g = Graph::new();
            let p = bundle.discriminator.params.bind(&mut g, true);
            let xr = g.constant(real_t.clone());
            let xf = g.constant(fake_t);
            let sr = bundle.discriminator.forward(&mut g, &p, xr);
            let sf = bundle.discriminator.forward(&mut g, &p, xf);
            let l = d_loss_graph(&mut g, sr, sf, cfg.loss_form);
            let grads = g.backward(l);
            let owned: Vec<Vec<T>> = p
                .iter()
                .zip(bundle.discriminator.params.tensors())
                .map(|(&v, t)| grads.get(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![T::zero(); t.len()]))
                .collect();
            (g.scalar(l).to_f64_lossy(), owned)
        };
        let mut r1 = 0.0;
        if cfg.r1_weight > 0.0 && step % cfg.r1_interval == 0 {
            let weight = cfg.r1_weight * cfg.r1_interval as f64;
            let (value, rg) = r1_penalty(&bundle.discriminator, &real_t, weight);
            r1 = value;
            for (acc, extra) in d_grads.iter_mut().zip(rg) {
                for (a, e) in acc.iter_mut().zip(extra) {
                    *a += e;
                }
            }
        }
        let d_refs: Vec<Option<&[T]>> = d_grads.iter().map(|v| Some(v.as_slice())).collect();
        let grad_norm_d = grad_norm(&d_refs);
        opt_d.step(&mut bundle.discriminator.params.tensors_mut(), &d_refs);

        // generator update
        let z = sample_z_batch::<T, _>(b, d, &mut latent_rng);
        let (loss_g, grad_norm_g) = {
            let mut g = Graph::new();
            let mp = bundle.mapping.params.bind(&mut g, true);
            let zv = g.constant(z);
            let w = bundle.mapping.forward(&mut g, &mp, zv);
            let sp = bundle.synthesis.params.bind(&mut g, true);
            let img = bundle.synthesis.forward(&mut g, &sp, w);
            let dp = bundle.discriminator.params.bind(&mut g, false);
            let s = bundle.discriminator.forward(&mut g, &dp, img);
            let l = g_loss_graph(&mut g, s, cfg.loss_form);
            let grads = g.backward(l);
            let vars: Vec<Var> = mp.iter().chain(&sp).copied().collect();
            let refs = collect_grads(&grads, &vars);
            let norm = grad_norm(&refs);
            let (map_refs, syn_refs) = refs.split_at(mp.len());
            opt_m.step(&mut bundle.mapping.params.tensors_mut(), map_refs);
            opt_g.step(&mut bundle.synthesis.params.tensors_mut(), syn_refs);
            (g.scalar(l).to_f64_lossy(), norm)
        };

        if !(loss_d.is_finite() && loss_g.is_finite() && r1.is_finite()) || !bundle.all_finite() {
            return Err(Error::DivergenceDetected { step, last_good: log.checkpoints.last().cloned() });
        }
        log.records.push(GanRecord { step, loss_d, loss_g, r1, grad_norm_d, grad_norm_g });
        if step % 100 == 0 || step + 1 == cfg.steps {
            info!("gan step {step}: loss_d {loss_d:.4} loss_g {loss_g:.4} r1 {r1:.4}");
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoint(&bundle, &cfg.checkpoint_dir, format!("gan_step{:06}.ckpt", step + 1), &mut log.checkpoints)?;
        }
    }
    Ok((bundle, log))
}

/// Squared Euclidean distance `|w - w_hat|^2`.
pub fn latent_consistency_loss<T: Scalar>(w: &LatentW<T>, w_hat: &LatentW<T>) -> Result<f64> {
    if w.dim() != w_hat.dim() {
        return Err(Error::DimMismatch { expected: w.dim(), got: w_hat.dim() });
    }
    Ok(w.distance(w_hat).powi(2))
}

/// Mean over the batch of `|w - F(G(w))|^2`.
pub fn encoder_loss<T: Scalar>(ws: &[LatentW<T>], bundle: &ModelBundle<T>) -> Result<f64> {
    if ws.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let imgs = bundle.synthesize_batch(ws)?;
    let refs: Vec<&Image<T>> = imgs.iter().collect();
    let est = bundle.encode_batch(&refs)?;
    let mut total = 0.0;
    for (w, e) in ws.iter().zip(&est) {
        total += latent_consistency_loss(w, e)?;
    }
    Ok(total / ws.len() as f64)
}

/// Trains the encoder on freshly generated `(G(w), w)` pairs. The generator is frozen
/// and its checksum is verified after training.
pub fn train_encoder<T: Scalar>(
    mut bundle: ModelBundle<T>,
    cfg: &EncoderTrainConfig,
) -> Result<(ModelBundle<T>, TrainLog<EncoderRecord>)> {
    cfg.validate()?;
    let frozen = bundle.generator_checksum();
    let mut opt = Adam::<T>::with_lr(cfg.lr);
    let mut log = TrainLog::default();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(100);
    let (b, d) = (cfg.batch_size, bundle.latent_dim());
    bundle.seeds.insert("encoder".into(), cfg.seed);

    for step in 0..cfg.steps {
        let mut rng = seeding::rng(cfg.seed, &[stream::ENCODER_LATENT, step as u64]);
        let z = sample_z_batch::<T, _>(b, d, &mut rng);
        let mut g = Graph::new();
        let mp = bundle.mapping.params.bind(&mut g, false);
        let zv = g.constant(z);
        let w = bundle.mapping.forward(&mut g, &mp, zv);
        let img = bundle.synthesis_graph(&mut g, w, false);
        let ep = bundle.encoder.params.bind(&mut g, true);
        let w_hat = bundle.encoder.forward(&mut g, &ep, img);
        let diff = g.sub(w_hat, w);
        let sq = g.square(diff);
        let total = g.sum(sq);
        let loss = g.scale(total, T::from_f64_lossy(1.0 / b as f64));
        let grads = g.backward(loss);
        let refs = collect_grads(&grads, &ep);
        let norm = grad_norm(&refs);
        let lr = cfg.lr_at(step);
        opt.lr = lr;
        opt.step(&mut bundle.encoder.params.tensors_mut(), &refs);

        let loss_e = g.scalar(loss).to_f64_lossy();
        if !loss_e.is_finite() || !bundle.encoder.params.all_finite() {
            return Err(Error::DivergenceDetected { step, last_good: log.checkpoints.last().cloned() });
        }
        if window.len() == 100 {
            window.pop_front();
        }
        window.push_back(loss_e);
        let avg = window.iter().sum::<f64>() / window.len() as f64;
        log.records.push(EncoderRecord { step, loss_e, loss_e_avg100: avg, lr, grad_norm: norm });
        if step % 500 == 0 || step + 1 == cfg.steps {
            info!("encoder step {step}: loss {loss_e:.4} (avg100 {avg:.4}) lr {lr:.2e}");
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            bundle.encoder_trained = true;
            checkpoint(&bundle, &cfg.checkpoint_dir, format!("encoder_step{:06}.ckpt", step + 1), &mut log.checkpoints)?;
        }
    }
    if bundle.generator_checksum() != frozen {
        return Err(Error::FrozenParamsMutated("generator"));
    }
    bundle.encoder_trained = true;
    Ok((bundle, log))
}
