//! Subcommand implementations. Each writes into `<output_dir>/<command>/` and finishes
//! with a run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use texlab_core::corpus::{ingest_directory, procedural_manifest, Corpus, CorpusConfig, CorpusManifest};
use texlab_core::image::Image;
use texlab_core::inversion::{invert, InitMode, InversionConfig, LossMode};
use texlab_core::io::{load_png, save_latents, save_png, write_csv, write_json};
use texlab_core::latentlab::{
    estimate_mean_w, global_interpolate, gram_target_interpolate, local_interpolate, synthesize_crops, InterpolationPath,
    PixelOptConfig, TransformSpec,
};
use texlab_core::inversion::gram_loss;
use texlab_core::metrics::{render_histogram, stsim1, stsim2, ErrorDistribution};
use texlab_core::models::{load_checkpoint, save_checkpoint, ArchConfig};
use texlab_core::optim::UpdateRule;
use texlab_core::seeding::{self, stream};
use texlab_core::training::{train_encoder, train_gan, EncoderTrainConfig, GanTrainConfig, LossForm};
use texlab_core::{Bundle, Latent, Texture};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::protocols::{encoder_errors, evaluation_crops, score_methods, table, Method, TableRow};

pub const CORPUS_MANIFEST: &str = "make-corpus/manifest.json";
pub const GAN_CHECKPOINT: &str = "train-gan/gan.ckpt";
pub const BUNDLE_CHECKPOINT: &str = "train-encoder/bundle.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    MakeCorpus,
    TrainGan,
    TrainEncoder,
    Invert,
    Interpolate,
    Crops,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::MakeCorpus => "make-corpus",
            Command::TrainGan => "train-gan",
            Command::TrainEncoder => "train-encoder",
            Command::Invert => "invert",
            Command::Interpolate => "interpolate",
            Command::Crops => "crops",
            Command::Eval => "eval",
        }
    }
}

/// Output directory of one run plus its manifest in progress.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(cmd: Command, cfg: &RunConfig, deterministic: bool) -> CliResult<Self> {
        let dir = cfg.output_dir().join(cmd.name());
        std::fs::create_dir_all(&dir)?;
        let mut run = Self { dir, manifest: RunManifest::begin(cmd.name(), cfg, deterministic) };
        let cfg_path = run.path("config.cfg");
        cfg.save(&cfg_path)?;
        run.track(&cfg_path);
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn track(&mut self, path: &Path) {
        self.manifest.add_artifact(&self.dir, path);
    }

    fn png(&mut self, name: &str, img: &Texture) -> CliResult<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        save_png(img, &p)?;
        self.track(&p);
        Ok(())
    }

    fn csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> CliResult<()> {
        let p = self.path(name);
        write_csv(rows, &p)?;
        self.track(&p);
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let p = self.path(name);
        write_json(value, &p)?;
        self.track(&p);
        Ok(())
    }

    fn latents(&mut self, name: &str, ws: &[Latent]) -> CliResult<()> {
        let p = self.path(name);
        save_latents(ws, &p)?;
        self.track(&p);
        Ok(())
    }

    fn finish(self) -> CliResult<PathBuf> {
        self.manifest.finish(&self.dir)
    }
}

/// Runs `cmd`; returns the run directory.
pub fn run(cmd: Command, cfg: &RunConfig, deterministic: bool) -> CliResult<PathBuf> {
    let mut run = Run::start(cmd, cfg, deterministic)?;
    match cmd {
        Command::MakeCorpus => make_corpus(cfg, &mut run)?,
        Command::TrainGan => train_gan_cmd(cfg, &mut run)?,
        Command::TrainEncoder => train_encoder_cmd(cfg, &mut run)?,
        Command::Invert => invert_cmd(cfg, &mut run)?,
        Command::Interpolate => interpolate_cmd(cfg, &mut run)?,
        Command::Crops => crops_cmd(cfg, &mut run)?,
        Command::Eval => eval_cmd(cfg, &mut run)?,
    }
    let dir = run.dir.clone();
    run.finish()?;
    Ok(dir)
}

fn require(path: PathBuf, producer: &str) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, hint: format!("run `texlab {producer}` with the same output_dir first") })
    }
}

pub fn arch_config(cfg: &RunConfig) -> ArchConfig {
    ArchConfig {
        latent_dim: cfg.int("model.latent_dim"),
        image_size: cfg.int("corpus.crop_size"),
        channels: 3,
        synthesis_width: cfg.int("model.synthesis_width"),
        discriminator_width: cfg.int("model.discriminator_width"),
        encoder_width: cfg.int("model.encoder_width"),
        feature_channels: cfg.int_list("model.feature_channels"),
    }
}

pub fn corpus_config(cfg: &RunConfig) -> CorpusConfig {
    CorpusConfig {
        crop_size: cfg.int("corpus.crop_size"),
        base_size: cfg.int("corpus.base_size"),
        families_per_kind: cfg.int("corpus.families_per_kind"),
        crops_per_family: cfg.int("corpus.crops_per_family"),
        seed: cfg.seed(),
    }
}

pub fn gan_config(cfg: &RunConfig, checkpoint_dir: Option<PathBuf>) -> GanTrainConfig {
    GanTrainConfig {
        steps: cfg.int("gan.steps"),
        batch_size: cfg.int("gan.batch_size"),
        lr_g: cfg.float("gan.lr_g"),
        lr_d: cfg.float("gan.lr_d"),
        mapping_lr_mul: cfg.float("gan.mapping_lr_mul"),
        beta1: cfg.float("gan.beta1"),
        beta2: cfg.float("gan.beta2"),
        r1_weight: cfg.float("gan.r1_weight"),
        r1_interval: cfg.int("gan.r1_interval"),
        loss_form: match cfg.raw("gan.loss_form") {
            "wasserstein" => LossForm::WassersteinAsWritten,
            _ => LossForm::NonsaturatingLogistic,
        },
        seed: cfg.seed(),
        checkpoint_every: cfg.int("gan.checkpoint_every"),
        checkpoint_dir,
    }
}

pub fn encoder_config(cfg: &RunConfig, checkpoint_dir: Option<PathBuf>) -> EncoderTrainConfig {
    EncoderTrainConfig {
        steps: cfg.int("encoder.steps"),
        batch_size: cfg.int("encoder.batch_size"),
        lr: cfg.float("encoder.lr"),
        lr_decay: (cfg.float("encoder.lr_decay_factor"), cfg.int("encoder.lr_decay_every")),
        seed: cfg.seed(),
        checkpoint_every: cfg.int("encoder.checkpoint_every"),
        checkpoint_dir,
    }
}

pub fn inversion_config(cfg: &RunConfig) -> InversionConfig {
    InversionConfig {
        init_mode: match cfg.raw("invert.init") {
            "mean_w" => InitMode::MeanW,
            "random" => InitMode::Random,
            _ => InitMode::Encoder,
        },
        loss_mode: match cfg.raw("invert.loss") {
            "pixel" => LossMode::PixelL2,
            "content" => LossMode::Content,
            _ => LossMode::StyleGram,
        },
        max_iters: cfg.int("invert.max_iters"),
        lr: cfg.float("invert.lr"),
        tol: cfg.float("invert.tol"),
        seed: cfg.seed(),
        update_rule: match cfg.raw("invert.update_rule") {
            "gradient" => UpdateRule::Gradient,
            _ => UpdateRule::Adam,
        },
        restarts: cfg.int("invert.restarts"),
    }
}

/// `scale:<factor>`, `color:<r>,<g>,<b>` or `identity`.
pub fn parse_transform(text: &str) -> CliResult<TransformSpec> {
    let bad = || CliError::Usage(format!("cannot parse transform `{text}`; use scale:<f>, color:<r>,<g>,<b> or identity"));
    let text = text.trim();
    if text == "identity" {
        return Ok(TransformSpec::identity());
    }
    let (kind, args) = text.split_once(':').ok_or_else(bad)?;
    let nums = args.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?;
    match (kind, nums.as_slice()) {
        ("scale", [f]) => Ok(TransformSpec::Scale { factor: *f }),
        ("color", offsets) => Ok(TransformSpec::ColorPerturb { offsets: offsets.to_vec() }),
        _ => Err(bad()),
    }
}

pub fn load_corpus_manifest(cfg: &RunConfig) -> CliResult<CorpusManifest> {
    let p = require(cfg.output_dir().join(CORPUS_MANIFEST), "make-corpus")?;
    Ok(texlab_core::io::read_json(&p)?)
}

pub fn load_bundle(cfg: &RunConfig) -> CliResult<Bundle> {
    let p = require(cfg.output_dir().join(BUNDLE_CHECKPOINT), "train-encoder")?;
    Ok(load_checkpoint(&p, Some(&arch_config(cfg).hash()))?)
}

/// A generated texture from latent stream `stream_id` of the run seed.
fn generated(bundle: &Bundle, seed: u64, stream_id: u64) -> CliResult<(Latent, Texture)> {
    let mut rng = seeding::rng(seed, &[stream_id]);
    let w = bundle.map_latent(&bundle.sample_z(&mut rng))?;
    let img = bundle.synthesize(&w)?;
    Ok((w, img))
}

#[derive(Serialize)]
struct CropRow<'a> {
    family_id: &'a str,
    crop_index: usize,
    origin_y: usize,
    origin_x: usize,
}

fn make_corpus(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let input = cfg.string("corpus.input_dir");
    let manifest = if input.is_empty() {
        procedural_manifest(&corpus_config(cfg))?
    } else {
        ingest_directory(Path::new(&input), cfg.int("corpus.crop_size"), cfg.int("corpus.crops_per_family"), cfg.seed())?
    };
    let corpus = Corpus::build(&manifest)?;
    for fam in &corpus.families {
        run.png(&format!("families/{}.png", fam.family_id()), &fam.base_image)?;
    }
    for crop in corpus.crops() {
        run.png(&format!("crops/{}_{:03}.png", crop.family_id, crop.crop_index), &crop.pixels)?;
    }
    let rows: Vec<CropRow> = manifest
        .crops
        .iter()
        .map(|c| CropRow { family_id: &c.family_id, crop_index: c.crop_index, origin_y: c.origin.0, origin_x: c.origin.1 })
        .collect();
    run.csv("crops.csv", &rows)?;
    run.json("manifest.json", &manifest)?;
    log::info!("{} families, {} crops", manifest.families.len(), manifest.crops.len());
    Ok(())
}

/// Mean pairwise RMS pixel distance.
pub fn diversity(images: &[Texture]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            total += images[i].mse(&images[j]).sqrt();
            count += 1;
        }
    }
    total / count.max(1) as f64
}

fn train_gan_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let corpus = Corpus::build(&load_corpus_manifest(cfg)?)?;
    let ckpt_dir = (cfg.int("gan.checkpoint_every") > 0).then(|| run.path("checkpoints"));
    let (bundle, log) = train_gan::<f32>(&corpus, &arch_config(cfg), &gan_config(cfg, ckpt_dir))?;
    let p = run.path("gan.ckpt");
    save_checkpoint(&bundle, &p)?;
    run.track(&p);
    for c in &log.checkpoints {
        run.track(c);
    }
    let p = run.path("gan_log.csv");
    log.write_csv(&p)?;
    run.track(&p);
    let mut rng = seeding::rng(cfg.seed(), &[stream::EVAL]);
    let ws = (0..32).map(|_| bundle.map_latent(&bundle.sample_z(&mut rng))).collect::<Result<Vec<_>, _>>()?;
    let samples = bundle.synthesize_batch(&ws)?;
    run.png("samples.png", &Image::hstack(&samples[..8]))?;
    run.json("summary.json", &serde_json::json!({ "steps": log.records.len(), "sample_diversity": diversity(&samples) }))?;
    run.manifest.add_seed("gan", cfg.seed());
    Ok(())
}

fn train_encoder_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let p = require(cfg.output_dir().join(GAN_CHECKPOINT), "train-gan")?;
    let gan: Bundle = load_checkpoint(&p, Some(&arch_config(cfg).hash()))?;
    let ckpt_dir = (cfg.int("encoder.checkpoint_every") > 0).then(|| run.path("checkpoints"));
    let (mut bundle, log) = train_encoder(gan, &encoder_config(cfg, ckpt_dir))?;
    bundle.mean_w = Some(estimate_mean_w(&bundle, cfg.int("encoder.mean_w_samples"), cfg.seed())?);
    let p = run.path("bundle.ckpt");
    save_checkpoint(&bundle, &p)?;
    run.track(&p);
    for c in &log.checkpoints {
        run.track(c);
    }
    let p = run.path("encoder_log.csv");
    log.write_csv(&p)?;
    run.track(&p);
    let first = log.records.first().map(|r| r.loss_e_avg100).unwrap_or(f64::NAN);
    let last = log.records.last().map(|r| r.loss_e_avg100).unwrap_or(f64::NAN);
    run.json("summary.json", &serde_json::json!({ "initial_avg100": first, "final_avg100": last }))?;
    run.manifest.add_seed("encoder", cfg.seed());
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    loss: f64,
}

fn invert_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let input = cfg.string("invert.input");
    let target = if input.is_empty() {
        generated(&bundle, cfg.seed(), stream::EVAL)?.1
    } else {
        load_png(&require(PathBuf::from(input), "make-corpus")?)?
    };
    let res = invert(&target, &inversion_config(cfg), &bundle)?;
    run.png("target.png", &target)?;
    run.png("init.png", &bundle.synthesize(&res.w_init)?)?;
    run.png("reconstruction.png", &res.reconstruction)?;
    let trace: Vec<TraceRow> = res.loss_trace.iter().enumerate().map(|(iteration, &loss)| TraceRow { iteration, loss }).collect();
    run.csv("loss_trace.csv", &trace)?;
    run.latents("latents.txl", &[res.w_init.clone(), res.w_star.clone()])?;
    run.json(
        "result.json",
        &serde_json::json!({
            "initial_loss": res.initial_loss(),
            "final_loss": res.final_loss(),
            "iterations": res.loss_trace.len(),
            "converged": res.converged,
            "stop_reason": res.stop_reason,
            "stsim1": stsim1(&target, &res.reconstruction)?,
            "stsim2": stsim2(&target, &res.reconstruction)?,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct FrameRow {
    frame: usize,
    t: f64,
    gram_loss_to_previous: f64,
}

fn write_frames(run: &mut Run, frames: &[Texture], bundle: &Bundle) -> CliResult<()> {
    let n = frames.len();
    let mut rows = Vec::with_capacity(n);
    for (i, f) in frames.iter().enumerate() {
        run.png(&format!("frames/frame_{i:03}.png"), f)?;
        let prev = if i == 0 { 0.0 } else { gram_loss(&frames[i - 1], f, bundle)? };
        rows.push(FrameRow { frame: i, t: i as f64 / (n - 1).max(1) as f64, gram_loss_to_previous: prev });
    }
    run.csv("frames.csv", &rows)?;
    run.png("strip.png", &Image::hstack(frames))
}

fn write_path(run: &mut Run, path: &InterpolationPath, bundle: &Bundle) -> CliResult<()> {
    write_frames(run, &path.frames, bundle)?;
    run.latents("latents.txl", &path.latents)
}

fn interpolate_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let steps = cfg.int("interpolate.steps");
    let seed = cfg.seed();
    match cfg.raw("interpolate.mode") {
        "local" => {
            let spec = parse_transform(cfg.raw("interpolate.transform"))?;
            let (w, _) = generated(&bundle, seed, stream::INTERPOLATE)?;
            let (path, inv) = local_interpolate(&w, &spec, steps, &bundle, &inversion_config(cfg))?;
            write_path(run, &path, &bundle)?;
            run.json("inversion.json", &serde_json::json!({ "initial_loss": inv.initial_loss(), "final_loss": inv.final_loss() }))?;
        }
        "gram" => {
            if steps < 2 {
                return Err(CliError::Usage("interpolate.steps must be >= 2".into()));
            }
            let mut rng = seeding::rng(seed, &[stream::INTERPOLATE]);
            let za = bundle.sample_z(&mut rng);
            let zb = bundle.sample_z(&mut rng);
            let a = bundle.synthesize(&bundle.map_latent(&za)?)?;
            let b = bundle.synthesize(&bundle.map_latent(&zb)?)?;
            let pcfg = PixelOptConfig {
                iters: cfg.int("interpolate.pixel_iters"),
                lr: cfg.float("interpolate.pixel_lr"),
                seed,
                noise_std: cfg.float("interpolate.noise_std"),
            };
            let frames = (0..steps)
                .map(|i| gram_target_interpolate(&a, &b, i as f64 / (steps - 1) as f64, &bundle, &pcfg, None).map(|r| r.image))
                .collect::<Result<Vec<_>, _>>()?;
            write_frames(run, &frames, &bundle)?;
        }
        _ => write_path(run, &global_interpolate(&bundle, seed, steps)?, &bundle)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct CropSampleRow {
    index: usize,
    perturbation_norm: f64,
    refined_distance: f64,
    loss_before: f64,
    loss_after: f64,
}

fn crops_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let (w, original) = generated(&bundle, cfg.seed(), stream::PERTURB)?;
    let samples = synthesize_crops(&w, cfg.int("crops.count"), cfg.float("crops.sigma"), &bundle, &inversion_config(cfg), cfg.seed())?;
    run.png("original.png", &original)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        run.png(&format!("crops/crop_{i:03}.png"), &s.image)?;
        rows.push(CropSampleRow {
            index: i,
            perturbation_norm: s.w_perturbed.distance(&w),
            refined_distance: s.w_refined.distance(&w),
            loss_before: s.loss_before,
            loss_after: s.loss_after,
        });
    }
    run.csv("crops.csv", &rows)?;
    let images: Vec<Texture> = std::iter::once(original).chain(samples.iter().map(|s| s.image.clone())).collect();
    run.png("strip.png", &Image::hstack(&images))?;
    let latents: Vec<Latent> = std::iter::once(w).chain(samples.into_iter().map(|s| s.w_refined)).collect();
    run.latents("latents.txl", &latents)
}

#[derive(Serialize)]
struct SummaryRow {
    encoder_kind: &'static str,
    count: usize,
    mean: f64,
    min: f64,
    p1: f64,
    p50: f64,
    p99: f64,
    max: f64,
}

fn summary_row(kind: &'static str, d: &ErrorDistribution) -> SummaryRow {
    let s = d.summary();
    SummaryRow { encoder_kind: kind, count: s.count, mean: s.mean, min: s.min, p1: s.p1, p50: s.p50, p99: s.p99, max: s.max }
}

#[derive(Serialize)]
struct GeneratedRow {
    index: usize,
    stsim1_encoder: f64,
    stsim2_encoder: f64,
    initial_loss: f64,
    final_loss: f64,
}

/// Encoder re-synthesis scores and style-loss refinement on generated textures.
fn generated_scores(bundle: &Bundle, cfg: &RunConfig) -> CliResult<Vec<GeneratedRow>> {
    let mut rng = seeding::rng(cfg.seed(), &[stream::EVAL, 1]);
    let icfg = InversionConfig { init_mode: InitMode::Encoder, loss_mode: LossMode::StyleGram, ..inversion_config(cfg) };
    (0..cfg.int("eval.generated"))
        .map(|index| {
            let img = bundle.synthesize(&bundle.map_latent(&bundle.sample_z(&mut rng))?)?;
            let rec = bundle.synthesize(&bundle.encode(&img)?)?;
            let res = invert(&img, &icfg, bundle)?;
            Ok(GeneratedRow {
                index,
                stsim1_encoder: stsim1(&img, &rec)?,
                stsim2_encoder: stsim2(&img, &rec)?,
                initial_loss: res.initial_loss(),
                final_loss: res.final_loss(),
            })
        })
        .collect()
}

fn eval_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let protocol = cfg.string("eval.protocol");
    let want = |p: &str| protocol == "all" || protocol == p;
    let mut report = serde_json::Map::new();
    report.insert("config_hash".into(), cfg.hash().into());
    let mut methods: Vec<Method> = Vec::new();
    if want("table1") {
        methods.extend(Method::TABLE1);
    }
    if want("table2") {
        methods.extend(Method::TABLE2.iter().filter(|m| !methods.contains(m)).copied().collect::<Vec<_>>());
    }
    if !methods.is_empty() {
        let corpus = Corpus::build(&load_corpus_manifest(cfg)?)?;
        let crops = evaluation_crops(&corpus, cfg.int("eval.crops"));
        let scores = score_methods(&bundle, &crops, &methods, &inversion_config(cfg), cfg.seed())?;
        run.csv("crop_scores.csv", &scores)?;
        let mut tables: Vec<(&str, Vec<TableRow>)> = Vec::new();
        if want("table1") {
            tables.push(("table1", table(&scores, &Method::TABLE1, Method::table1_label)));
        }
        if want("table2") {
            tables.push(("table2", table(&scores, &Method::TABLE2, Method::table2_label)));
        }
        for (name, rows) in tables {
            run.csv(&format!("{name}.csv"), &rows)?;
            report.insert(name.into(), serde_json::to_value(&rows).map_err(texlab_core::Error::from)?);
        }
    }
    if want("table1") {
        let rows = generated_scores(&bundle, cfg)?;
        run.csv("generated_scores.csv", &rows)?;
        let n = rows.len().max(1) as f64;
        let refined = rows.iter().filter(|r| r.final_loss <= 0.2 * r.initial_loss).count();
        report.insert(
            "generated".into(),
            serde_json::json!({
                "count": rows.len(),
                "mean_stsim1_encoder": rows.iter().map(|r| r.stsim1_encoder).sum::<f64>() / n,
                "mean_stsim2_encoder": rows.iter().map(|r| r.stsim2_encoder).sum::<f64>() / n,
                "refined_to_0.2_fraction": refined as f64 / n,
            }),
        );
    }
    if want("fig9") {
        let (trained, random) = encoder_errors(&bundle, cfg.int("eval.error_samples"), cfg.seed())?;
        trained.write(&run.dir, "errors_trained")?;
        random.write(&run.dir, "errors_random_init")?;
        for stem in ["errors_trained", "errors_random_init"] {
            for ext in ["csv", "json"] {
                let p = run.path(&format!("{stem}.{ext}"));
                run.track(&p);
            }
        }
        let rows = [summary_row("trained", &trained), summary_row("random_init", &random)];
        run.csv("fig9_summary.csv", &rows)?;
        let p = run.path("fig9_histogram.png");
        render_histogram(&[&trained, &random], cfg.int("eval.histogram_bins"), &p)?;
        run.track(&p);
        report.insert(
            "fig9".into(),
            serde_json::json!({
                "trained": trained.summary(),
                "random_init": random.summary(),
                "separated": trained.percentile(99.0) < random.percentile(1.0),
            }),
        );
    }
    run.json("report.json", &report)
}
