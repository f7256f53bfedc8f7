use proptest::prelude::*;
use texlab_core::corpus::{Corpus, CorpusConfig};
use texlab_core::image::Image;
use texlab_core::inversion::{invert, InitMode, InversionConfig};
use texlab_core::metrics::{stsim1, stsim2};
use texlab_core::models::{load_checkpoint, save_checkpoint, ArchConfig, ModelBundle};
use texlab_core::seeding::rng;
use texlab_core::{Bundle, Bundle64};

fn tiny_arch() -> ArchConfig {
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

fn noise_image(seed: u64) -> Image<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    Image::from_fn(3, 16, 16, |_, _, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) * 2.0 - 1.0
    })
}

#[test]
fn checkpoint_roundtrip_preserves_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.ckpt");
    let bundle = Bundle::new(tiny_arch(), 3).unwrap();
    save_checkpoint(&bundle, &path).unwrap();
    let back: Bundle = load_checkpoint(&path, None).unwrap();
    let w = bundle.map_latent(&bundle.sample_z(&mut rng(1, &[]))).unwrap();
    assert_eq!(bundle.synthesize(&w).unwrap().data(), back.synthesize(&w).unwrap().data());
}

#[test]
fn f64_bundle_inverts_its_own_sample() {
    let bundle = Bundle64::new(tiny_arch(), 9).unwrap();
    let w = bundle.map_latent(&bundle.sample_z(&mut rng(2, &[]))).unwrap();
    let target = bundle.synthesize(&w).unwrap();
    let cfg = InversionConfig { init_mode: InitMode::Random, max_iters: 60, ..Default::default() };
    let res = invert(&target, &cfg, &bundle).unwrap();
    assert!(res.final_loss() <= res.initial_loss());
    assert!(res.final_loss().is_finite());
}

#[test]
fn corpus_crops_are_in_range() {
    let cfg = CorpusConfig { families_per_kind: 1, crops_per_family: 2, ..Default::default() };
    let corpus = Corpus::procedural(&cfg).unwrap();
    assert!(!corpus.is_empty());
    for c in corpus.crops() {
        let (lo, hi) = c.pixels.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
        assert_eq!(c.pixels.height(), corpus.crop_size());
    }
}

#[test]
fn f32_and_f64_bundles_share_initial_weights() {
    let a = ModelBundle::<f32>::new(tiny_arch(), 4).unwrap();
    let b = ModelBundle::<f64>::new(tiny_arch(), 4).unwrap();
    let w = b.map_latent(&b.sample_z(&mut rng(5, &[]))).unwrap();
    let wa = a.map_latent(&a.sample_z(&mut rng(5, &[]))).unwrap();
    let (ia, ib) = (a.synthesize(&wa).unwrap(), b.synthesize(&w).unwrap());
    let diff = ia.data().iter().zip(ib.data()).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-4, "{diff}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stsim_is_bounded_and_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (noise_image(s1), noise_image(s2));
        for f in [stsim1::<f64>, stsim2::<f64>] {
            let ab = f(&a, &b).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((ab - f(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((f(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
