//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//!
//! The desk-scale bundle is trained once through the `texlab` binary with the default
//! config and cached in `$TEXLAB_ACCEPTANCE_CACHE` (default: a directory under cargo's
//! target tmpdir). A cached run is reused only when its recorded config hash matches.
//!
//! Failing criteria are reported, not asserted: the process exits 0 so the rest of the
//! workspace tests still run. Set `TEXLAB_ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::Serialize;
use texlab_cli::commands::{diversity, BUNDLE_CHECKPOINT, CORPUS_MANIFEST};
use texlab_cli::manifest::{RunManifest, MANIFEST_FILE};
use texlab_cli::protocols::{encoder_errors, evaluation_crops, mean_scores, score_methods, Method};
use texlab_cli::RunConfig;
use texlab_core::corpus::{make_family, Corpus, CorpusManifest, KindParams};
use texlab_core::inversion::{gram_distance, gram_loss, gram_loss_grad_w, invert, resynthesize, InversionConfig};
use texlab_core::io::read_json;
use texlab_core::latentlab::{global_interpolate, synthesize_crops};
use texlab_core::metrics::{stsim1, stsim2};
use texlab_core::models::{load_checkpoint, FeatureLayer, FeatureMaps, LatentW};
use texlab_core::seeding::{self, stream};
use texlab_core::{Bundle, Bundle64, Latent, Texture};

const SEED: u64 = 0;

#[derive(Serialize)]
struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

#[derive(Default)]
struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    fn record(&mut self, id: usize, name: &'static str, pass: bool, detail: String, seconds: f64) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:02}] {name}: {detail} ({seconds:.1}s)");
        self.outcomes.push(Outcome { id, name, pass, detail, seconds });
    }
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_texlab")
}

fn texlab(out: &Path, args: &[&str]) {
    let status = Command::new(binary())
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .expect("spawn texlab");
    assert!(status.success(), "texlab {args:?} failed with {status}");
}

fn cache_dir() -> PathBuf {
    std::env::var_os("TEXLAB_ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn manifest(dir: &Path, cmd: &str) -> Option<RunManifest> {
    read_json(&dir.join(cmd).join(MANIFEST_FILE)).ok()
}

/// Trains (or reuses) the default desk-scale pipeline under `dir`.
fn ensure_trained(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set("output_dir", &dir.display().to_string()).unwrap();
    let fresh = |cmd: &str| manifest(dir, cmd).map_or(true, |m| m.config_hash != cfg.hash());
    let out = dir.to_str().unwrap();
    let mut stale = false;
    for cmd in ["make-corpus", "train-gan", "train-encoder"] {
        stale |= fresh(cmd);
        if stale {
            println!("acceptance: running `texlab {cmd}` into {out}");
            texlab(dir, &[cmd]);
        }
    }
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn generated(bundle: &Bundle, n: usize, seed: u64) -> (Vec<Latent>, Vec<Texture>) {
    let mut rng = seeding::rng(seed, &[stream::EVAL]);
    let ws: Vec<Latent> = (0..n).map(|_| bundle.map_latent(&bundle.sample_z(&mut rng)).unwrap()).collect();
    let imgs = bundle.synthesize_batch(&ws).unwrap();
    (ws, imgs)
}

fn c1_separation(s: &mut Suite, bundle: &Bundle) {
    let t = Instant::now();
    let (trained, random) = encoder_errors(bundle, 1000, SEED).unwrap();
    let (p99, p1) = (trained.percentile(99.0), random.percentile(1.0));
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("trained p99 {p99:.4} vs random-init p1 {p1:.4}, trained median {:.4}", trained.percentile(50.0));
    s.record(1, "encoder separation", p99 < p1 && secs < 120.0, detail, secs);
}

fn c2_generated_inversion(s: &mut Suite, bundle: &Bundle) {
    let t = Instant::now();
    let (_, imgs) = generated(bundle, 50, SEED + 1);
    let scores: Vec<f64> = imgs.iter().map(|x| stsim1(x, &resynthesize(x, bundle).unwrap()).unwrap()).collect();
    let m = mean(&scores);
    let secs = t.elapsed().as_secs_f64();
    s.record(2, "generated-texture encoder re-synthesis", m >= 0.90 && secs < 120.0, format!("mean STSIM-1 {m:.4} over 50"), secs);
}

fn c3_c4_tables(s: &mut Suite, bundle: &Bundle, corpus: &Corpus) {
    let crops = evaluation_crops(corpus, 20);
    let base = InversionConfig::default();
    let timed = |methods: &[Method]| {
        let t = Instant::now();
        let scores = score_methods(bundle, &crops, methods, &base, SEED).unwrap();
        (scores, t.elapsed().as_secs_f64())
    };
    let (shared, t_shared) = timed(&[Method::Encoder, Method::EncoderOpt]);
    let (inits, t_inits) = timed(&[Method::MeanWOpt, Method::RandomOpt]);
    let (losses, t_losses) = timed(&[Method::PixelL2, Method::Content]);
    let all: Vec<_> = shared.into_iter().chain(inits).chain(losses).collect();
    let m = |method| mean_scores(&all, method).0;
    let (enc, enc_opt, mean_w, random) = (m(Method::Encoder), m(Method::EncoderOpt), m(Method::MeanWOpt), m(Method::RandomOpt));
    let secs = t_shared + t_inits;
    let pass = enc_opt >= enc && enc_opt >= mean_w && mean_w >= random - 0.01 && enc_opt - random >= 0.01 && secs < 1800.0;
    let detail = format!("Encoder {enc:.4}, Encoder+Opt {enc_opt:.4}, MeanW+Opt {mean_w:.4}, Random+Opt {random:.4}");
    s.record(3, "initialization ordering", pass, detail, secs);

    let (pixel, content) = (m(Method::PixelL2), m(Method::Content));
    let secs = t_shared + t_losses;
    let pass = enc_opt - pixel >= 0.02 && enc_opt - content >= 0.02 && secs < 1800.0;
    let detail = format!("style {enc_opt:.4}, pixel-L2 {pixel:.4}, content {content:.4}");
    s.record(4, "loss ordering", pass, detail, secs);
}

fn c5_refinement(s: &mut Suite, bundle: &Bundle) {
    let t = Instant::now();
    let (_, imgs) = generated(bundle, 50, SEED + 2);
    let ratios: Vec<f64> = imgs
        .iter()
        .map(|x| {
            let r = invert(x, &InversionConfig::default(), bundle).unwrap();
            r.final_loss() / r.initial_loss().max(f64::MIN_POSITIVE)
        })
        .collect();
    let ok = ratios.iter().filter(|&&r| r <= 0.2).count();
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("{ok}/50 runs reach final <= 0.2 x initial, median ratio {:.4}", median(&ratios));
    s.record(5, "Gram-loss refinement", ok * 100 >= 80 * 50 && secs < 600.0, detail, secs);
}

fn c6_gradient(s: &mut Suite, bundle: &Bundle, corpus: &Corpus) {
    let t = Instant::now();
    let b64: Bundle64 = bundle.cast();
    let target = evaluation_crops(corpus, 3)[1].pixels.cast::<f64>();
    let w = b64.encode(&target).unwrap();
    let (_, grad) = gram_loss_grad_w(&w, &target, &b64).unwrap();
    let loss_at = |v: &[f64]| gram_loss(&b64.synthesize(&LatentW::new(v.to_vec())).unwrap(), &target, &b64).unwrap();
    let h = 1e-6;
    let d = w.dim();
    let mut worst: f64 = 0.0;
    for k in 0..5u64 {
        let i = (seeding::derive(SEED, &[k]) % d as u64) as usize;
        let (mut up, mut down) = (w.values().to_vec(), w.values().to_vec());
        up[i] += h;
        down[i] -= h;
        let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        let rel = if scale < 1e-14 { 0.0 } else { (fd - grad[i]).abs() / scale };
        worst = worst.max(rel);
    }
    let secs = t.elapsed().as_secs_f64();
    s.record(6, "gradient correctness", worst <= 1e-3 && secs < 60.0, format!("max relative error {worst:.2e} over 5 coordinates"), secs);
}

fn c7_gram_oracle(s: &mut Suite) {
    let t = Instant::now();
    let layer = |rows: [[f64; 4]; 2]| FeatureLayer { channels: 2, side: 2, values: rows.iter().flatten().copied().collect() };
    let a = FeatureMaps { layers: vec![layer([[1.0; 4], [0.0; 4]])] };
    let b = FeatureMaps { layers: vec![layer([[0.0; 4], [1.0; 4]])] };
    let d = gram_distance(&a, &b);
    s.record(7, "hand-computed Gram oracle", (d - 0.5).abs() <= 1e-9, format!("loss {d:.12} (expected 0.5)"), t.elapsed().as_secs_f64());
}

fn c8_interpolation(s: &mut Suite, bundle: &Bundle) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for p in 0..20u64 {
        let path = global_interpolate(bundle, seeding::derive(SEED, &[stream::INTERPOLATE, p]), 16).unwrap();
        let steps: Vec<f64> = path.frames.windows(2).map(|f| gram_loss(&f[0], &f[1], bundle).unwrap()).collect();
        let max = steps.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max / median(&steps).max(f64::MIN_POSITIVE));
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("worst path max/median adjacent Gram loss {worst:.3} (limit 3)");
    s.record(8, "interpolation smoothness", worst <= 3.0 && secs < 300.0, detail, secs);
}

fn c9_crops(s: &mut Suite, bundle: &Bundle) {
    let t = Instant::now();
    let (ws, _) = generated(bundle, 1, SEED + 3);
    let w = &ws[0];
    let cfg = InversionConfig::default();
    let exact = synthesize_crops(w, 3, 0.0, bundle, &cfg, SEED).unwrap().iter().all(|c| c.w_refined == *w);
    let sigma = 0.1;
    let radius = 5.0 * sigma * (w.dim() as f64).sqrt();
    let samples = synthesize_crops(w, 20, sigma, bundle, &cfg, SEED).unwrap();
    let within = samples.iter().all(|c| c.w_refined.distance(w) <= radius);
    let improved = samples.iter().filter(|c| c.loss_after < c.loss_before).count();
    let far = samples.iter().map(|c| c.w_refined.distance(w)).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = exact && within && improved * 100 >= 80 * 20 && secs < 600.0;
    let detail = format!("sigma=0 exact {exact}; max distance {far:.3} <= {radius:.3}: {within}; improved {improved}/20");
    s.record(9, "crop synthesis", pass, detail, secs);
}

fn c10_metric(s: &mut Suite, bundle: &Bundle, corpus: &Corpus) {
    let t = Instant::now();
    let crops = corpus.crops();
    let (_, gen) = generated(bundle, 50, SEED + 4);
    let pool: Vec<&Texture> = crops.iter().map(|c| &c.pixels).chain(gen.iter()).collect();
    let (mut refl, mut sym, mut range) = (0.0f64, 0.0f64, true);
    for k in 0..100u64 {
        let i = (seeding::derive(SEED, &[stream::EVAL, k, 0]) % pool.len() as u64) as usize;
        let j = (seeding::derive(SEED, &[stream::EVAL, k, 1]) % pool.len() as u64) as usize;
        let (a, b) = (pool[i], pool[j]);
        for f in [stsim1, stsim2] {
            let ab = f(a, b).unwrap();
            refl = refl.max((f(a, a).unwrap() - 1.0).abs());
            sym = sym.max((ab - f(b, a).unwrap()).abs());
            range &= (0.0..=1.0).contains(&ab);
        }
    }
    let board = KindParams::Checkerboard { period: 8, color_a: [0.8, -0.2, 0.1], color_b: [-0.6, 0.4, -0.9] };
    let base = make_family("acceptance", &board, (192, 192), 48, SEED).unwrap().base_image;
    let a = base.window(5, 7, 32);
    let shift = (1.0 - stsim1(&a, &base.window(5, 15, 32)).unwrap()).abs();
    let secs = t.elapsed().as_secs_f64();
    let pass = refl <= 1e-9 && sym <= 1e-9 && range && shift <= 1e-3 && secs < 120.0;
    let detail = format!("reflexivity {refl:.1e}, symmetry {sym:.1e}, in [0,1] {range}, full-period shift {shift:.1e}");
    s.record(10, "metric properties", pass, detail, secs);
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism(s: &mut Suite, scratch: &Path) {
    let t = Instant::now();
    let settings = [
        "corpus.families_per_kind=1",
        "corpus.crops_per_family=4",
        "gan.steps=12",
        "gan.batch_size=4",
        "encoder.steps=12",
        "encoder.batch_size=4",
        "encoder.mean_w_samples=64",
        "invert.max_iters=15",
        "interpolate.steps=4",
        "crops.count=2",
        "eval.crops=2",
        "eval.generated=2",
        "eval.error_samples=20",
    ];
    let mut common: Vec<&str> = vec!["--deterministic", "--seed", "7"];
    for kv in &settings {
        common.extend(["--set", kv]);
    }
    let cmds: [&[&str]; 9] = [
        &["make-corpus"],
        &["train-gan"],
        &["train-encoder"],
        &["invert"],
        &["interpolate", "--mode", "global"],
        &["interpolate", "--mode", "local"],
        &["crops"],
        &["eval"],
        &["interpolate", "--mode", "gram"],
    ];
    let runs: Vec<PathBuf> = (0..2).map(|r| scratch.join(format!("run{r}"))).collect();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for cmd in cmds {
        for run in &runs {
            let mut args: Vec<&str> = cmd.to_vec();
            args.extend(&common);
            if cmd[0] == "interpolate" {
                args.extend(["--set", "interpolate.pixel_iters=10"]);
            }
            texlab(run, &args);
        }
        let sub = cmd[0];
        for f in csv_files(&runs[0].join(sub)) {
            let (a, b) = (std::fs::read(runs[0].join(sub).join(&f)).unwrap(), std::fs::read(runs[1].join(sub).join(&f)).ok());
            compared += 1;
            if b.as_deref() != Some(a.as_slice()) {
                mismatches.push(format!("{sub}/{}", f.display()));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("{compared} CSV files over 7 subcommands, mismatches: {mismatches:?}");
    s.record(11, "determinism", mismatches.is_empty() && compared > 0, detail, secs);
}

fn c12_training(s: &mut Suite, dir: &Path, bundle: &Bundle) {
    #[derive(serde::Deserialize)]
    struct GanRow {
        loss_d: f64,
        loss_g: f64,
        r1: f64,
    }
    #[derive(serde::Deserialize)]
    struct EncRow {
        loss_e: f64,
        loss_e_avg100: f64,
    }
    fn rows<R: serde::de::DeserializeOwned>(p: PathBuf) -> Vec<R> {
        csv::Reader::from_path(p).unwrap().deserialize().map(|r| r.unwrap()).collect()
    }
    let gan: Vec<GanRow> = rows(dir.join("train-gan/gan_log.csv"));
    let enc: Vec<EncRow> = rows(dir.join("train-encoder/encoder_log.csv"));
    let finite = gan.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite() && r.r1.is_finite())
        && enc.iter().all(|r| r.loss_e.is_finite());
    let (_, samples) = generated(bundle, 32, SEED + 5);
    let div = diversity(&samples);
    let (first, last) = (enc[0].loss_e_avg100, enc[enc.len() - 1].loss_e_avg100);
    let wall = |cmd| manifest(dir, cmd).map_or(f64::NAN, |m| m.finished_unix - m.started_unix);
    let secs = wall("train-gan") + wall("train-encoder");
    let pass = gan.len() >= 3000 && finite && div > 0.05 && last < 0.5 * first && secs < 3600.0;
    let detail = format!(
        "{} GAN steps, losses finite {finite}, sample diversity {div:.4}, encoder avg100 {first:.3} -> {last:.3}",
        gan.len()
    );
    s.record(12, "training smoke", pass, detail, secs);
}

fn main() {
    let dir = cache_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = ensure_trained(&dir);
    let bundle: Bundle = load_checkpoint(&dir.join(BUNDLE_CHECKPOINT), None).unwrap();
    let corpus_manifest: CorpusManifest = read_json(&dir.join(CORPUS_MANIFEST)).unwrap();
    let corpus = Corpus::build(&corpus_manifest).unwrap();
    println!("acceptance: bundle {} (config {})", dir.join(BUNDLE_CHECKPOINT).display(), &cfg.hash()[..12]);

    let mut suite = Suite::default();
    let scratch = tempfile::tempdir().unwrap();
    let checks: [(usize, &'static str, &dyn Fn(&mut Suite)); 11] = [
        (1, "encoder separation", &|s| c1_separation(s, &bundle)),
        (2, "generated-texture encoder re-synthesis", &|s| c2_generated_inversion(s, &bundle)),
        (3, "initialization and loss ordering", &|s| c3_c4_tables(s, &bundle, &corpus)),
        (5, "Gram-loss refinement", &|s| c5_refinement(s, &bundle)),
        (6, "gradient correctness", &|s| c6_gradient(s, &bundle, &corpus)),
        (7, "hand-computed Gram oracle", &|s| c7_gram_oracle(s)),
        (8, "interpolation smoothness", &|s| c8_interpolation(s, &bundle)),
        (9, "crop synthesis", &|s| c9_crops(s, &bundle)),
        (10, "metric properties", &|s| c10_metric(s, &bundle, &corpus)),
        (11, "determinism", &|s| c11_determinism(s, scratch.path())),
        (12, "training smoke", &|s| c12_training(s, &dir, &bundle)),
    ];
    for (id, name, check) in checks {
        if std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut suite))).is_err() {
            suite.record(id, name, false, "check panicked".into(), 0.0);
        }
    }

    suite.outcomes.sort_by_key(|o| o.id);
    let passed = suite.outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", suite.outcomes.len());
    let report = dir.join("acceptance_report.json");
    texlab_core::io::write_json(&suite.outcomes, &report).unwrap();
    println!("acceptance: report written to {}", report.display());
    let strict = std::env::var("TEXLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < suite.outcomes.len() {
        std::process::exit(1);
    }
}
