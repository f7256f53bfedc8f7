use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_arch() -> ArchConfig {
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

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn same_seed_same_weights() {
    let a = ModelBundle::<f32>::new(ArchConfig::default(), 5).unwrap();
    let b = ModelBundle::<f32>::new(ArchConfig::default(), 5).unwrap();
    let c = ModelBundle::<f32>::new(ArchConfig::default(), 6).unwrap();
    for part in [Part::Mapping, Part::Synthesis, Part::Discriminator, Part::Encoder, Part::Features] {
        assert_eq!(a.checksum(part), b.checksum(part));
        assert_ne!(a.checksum(part), c.checksum(part));
    }
}

#[test]
fn default_shapes() {
    let arch = ArchConfig::default();
    assert_eq!(arch.synthesis_channels(), vec![32, 32, 16, 16]);
    assert_eq!(arch.discriminator_channels(), vec![16, 32, 32, 32]);
    assert_eq!(arch.encoder_channels(), vec![32, 64, 128, 128]);
}

#[test]
fn wrong_dims_are_rejected() {
    let m = ModelBundle::<f32>::new(small_arch(), 0).unwrap();
    let err = m.synthesize(&LatentW::zeros(7)).unwrap_err();
    assert!(matches!(err, Error::DimMismatch { expected: 8, got: 7 }));
    assert!(matches!(m.map_latent(&LatentZ::zeros(9)), Err(Error::DimMismatch { .. })));
    let img = Image::filled(3, 8, 8, 0.0f32);
    assert!(matches!(m.encode(&img), Err(Error::SizeMismatch { .. })));
    assert!(matches!(m.discriminate(&img), Err(Error::SizeMismatch { .. })));
    assert!(matches!(m.extract_features(&Image::filled(1, 16, 16, 0.0)), Err(Error::SizeMismatch { .. })));
}

#[test]
fn identity_mapping_returns_z() {
    let m = ModelBundle::<f32>::new(small_arch(), 0).unwrap().with_identity_mapping();
    let z = m.sample_z(&mut rng(1));
    assert_eq!(m.map_latent(&z).unwrap().values(), z.values());
}

#[test]
fn synthesis_is_bounded_and_sized() {
    let m = ModelBundle::<f32>::new(ArchConfig::default(), 3).unwrap();
    let mut r = rng(2);
    let ws: Vec<_> = (0..100).map(|_| m.map_latent(&m.sample_z(&mut r)).unwrap()).collect();
    for img in m.synthesize_batch(&ws).unwrap() {
        assert_eq!((img.channels(), img.height(), img.width()), (3, 32, 32));
        let (lo, hi) = img.min_max();
        assert!(lo >= -1.0 && hi <= 1.0);
    }
}

#[test]
fn discriminator_scores_a_batch() {
    let m = ModelBundle::<f32>::new(ArchConfig::default(), 3).unwrap();
    let mut r = rng(4);
    let ws: Vec<_> = (0..16).map(|_| m.map_latent(&m.sample_z(&mut r)).unwrap()).collect();
    let imgs = m.synthesize_batch(&ws).unwrap();
    let refs: Vec<&Image<f32>> = imgs.iter().collect();
    let scores = m.discriminate_batch(&refs).unwrap();
    assert_eq!(scores.len(), 16);
    assert!(scores.iter().all(|s| s.is_finite()));
    assert_eq!(m.encode_batch(&refs).unwrap().len(), 16);
}

#[test]
fn features_of_constant_image() {
    let m = ModelBundle::<f64>::new(ArchConfig::default(), 0).unwrap();
    let maps = m.extract_features(&Image::filled(3, 32, 32, 0.3)).unwrap();
    assert_eq!(maps.layers.len(), 4);
    for w in maps.layers.windows(2) {
        assert!(w[1].side < w[0].side);
    }
    // interior of the first layer is constant per channel
    let l0 = &maps.layers[0];
    let s = l0.side;
    for c in 0..l0.channels {
        let plane = &l0.values[c * s * s..(c + 1) * s * s];
        let v0 = plane[s + 1];
        for y in 1..s - 1 {
            for x in 1..s - 1 {
                assert!((plane[y * s + x] - v0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn exact_inverse_pair_round_trips() {
    let m = ModelBundle::<f32>::new(ArchConfig::default(), 0).unwrap().with_exact_inverse_pair();
    let w = LatentW::new((0..32).map(|i| (i as f32 - 16.0) / 8.0).collect());
    let img = m.synthesize(&w).unwrap();
    assert_eq!(m.encode(&img).unwrap(), w);
}

#[test]
fn cast_preserves_outputs() {
    let m = ModelBundle::<f32>::new(small_arch(), 1).unwrap();
    let m64: ModelBundle<f64> = m.cast();
    let w = m.map_latent(&m.sample_z(&mut rng(0))).unwrap();
    let a = m.synthesize(&w).unwrap();
    let b = m64.synthesize(&w.cast()).unwrap();
    assert!(a.cast::<f64>().mse(&b) < 1e-10);
}

/// Compares analytic parameter gradients of `loss` with central differences at a few coordinates.
fn check_param_grads(store: &ParamStore<f64>, loss: impl Fn(&ParamStore<f64>, bool) -> (f64, Vec<Vec<f64>>)) {
    let (_, grads) = loss(store, true);
    let mut r = rng(99);
    let mut checked = 0;
    for (ti, t) in store.tensors().iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let idx = rand::Rng::gen_range(&mut r, 0..t.len());
        let h = 1e-5;
        let mut plus = store.clone();
        plus.tensors_mut()[ti].data_mut()[idx] += h;
        let mut minus = store.clone();
        minus.tensors_mut()[ti].data_mut()[idx] -= h;
        let fd = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
        let an = grads[ti][idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        assert!(rel <= 1e-3, "{} [{idx}]: analytic {an} vs numeric {fd}", store.names()[ti]);
        checked += 1;
        if checked == 5 {
            break;
        }
    }
    assert!(checked >= 1);
}

/// Scalar probe `sum(out * proj)` with a fixed random projection.
fn probe(g: &mut Graph<f64>, out: Var) -> Var {
    let shape = g.value(out).shape().to_vec();
    let proj = g.constant(Tensor::randn(&shape, 1.0, &mut rng(7)));
    let m = g.mul(out, proj);
    g.sum(m)
}

fn collect(g: &Graph<f64>, loss: Var, vars: &[Var], want: bool) -> (f64, Vec<Vec<f64>>) {
    let value = g.scalar(loss);
    if !want {
        return (value, Vec::new());
    }
    let grads = g.backward(loss);
    (value, vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect())
}

#[test]
fn mapping_gradients_match_finite_differences() {
    let arch = small_arch();
    let m = MappingNet::<f64>::new(arch.latent_dim, &mut rng(1));
    let z = Tensor::randn(&[3, arch.latent_dim], 1.0, &mut rng(2));
    check_param_grads(&m.params, |store, want| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let zv = g.constant(z.clone());
        let out = m.forward(&mut g, &p, zv);
        let l = probe(&mut g, out);
        collect(&g, l, &p, want)
    });
}

#[test]
fn synthesis_gradients_match_finite_differences() {
    let arch = small_arch();
    let s = SynthesisNet::<f64>::new(&arch, &mut rng(1));
    let w = Tensor::randn(&[2, arch.latent_dim], 1.0, &mut rng(2));
    check_param_grads(&s.params, |store, want| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let wv = g.constant(w.clone());
        let out = s.forward(&mut g, &p, wv);
        let l = probe(&mut g, out);
        collect(&g, l, &p, want)
    });
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let arch = small_arch();
    let d = Discriminator::<f64>::new(&arch, &mut rng(1));
    let x = Tensor::randn(&[2, 3, 16, 16], 0.5, &mut rng(2));
    check_param_grads(&d.params, |store, want| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = d.forward(&mut g, &p, xv);
        let l = probe(&mut g, out);
        collect(&g, l, &p, want)
    });
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let arch = small_arch();
    let e = Encoder::<f64>::new(&arch, &mut rng(1));
    let x = Tensor::randn(&[2, 3, 16, 16], 0.5, &mut rng(2));
    check_param_grads(&e.params, |store, want| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let out = e.forward(&mut g, &p, xv);
        let l = probe(&mut g, out);
        collect(&g, l, &p, want)
    });
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = ModelBundle::<f32>::new(small_arch(), 11).unwrap();
    m.mean_w = Some(LatentW::new(vec![0.5; 8]));
    save_checkpoint(&m, &path).unwrap();
    let back: ModelBundle<f32> = load_checkpoint(&path, Some(&small_arch().hash())).unwrap();
    for part in [Part::Mapping, Part::Synthesis, Part::Discriminator, Part::Encoder, Part::Features] {
        assert_eq!(back.checksum(part), m.checksum(part));
    }
    assert_eq!(back.mean_w, m.mean_w);
    assert_eq!(back.seeds, m.seeds);

    let debug = ModelBundle::<f32>::new(small_arch(), 0).unwrap().with_identity_mapping().with_exact_inverse_pair();
    save_checkpoint(&debug, &path).unwrap();
    let back: ModelBundle<f32> = load_checkpoint(&path, None).unwrap();
    assert_eq!(back.mapping.kind, MappingKind::Identity);
    assert!(back.encoder_trained);
}

#[test]
fn checkpoint_hash_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ModelBundle::<f32>::new(small_arch(), 0).unwrap(), &path).unwrap();
    let err = load_checkpoint::<f32>(&path, Some(&ArchConfig::default().hash())).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    assert!(matches!(load_checkpoint::<f64>(&path, None), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path, None), Err(Error::Checkpoint(_))));
}

#[test]
fn param_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phi.bin");
    let other = ModelBundle::<f32>::new(small_arch(), 42).unwrap();
    write_param_file(&other.features().params, &path).unwrap();
    let store = read_param_file::<f32>(&path).unwrap();
    let m = ModelBundle::<f32>::new(small_arch(), 0).unwrap().with_feature_weights(&store).unwrap();
    assert_eq!(m.checksum(Part::Features), other.checksum(Part::Features));
}
