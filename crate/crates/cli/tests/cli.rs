use std::path::Path;
use std::process::{Command, Output};

use texlab_cli::manifest::{RunManifest, MANIFEST_FILE};
use texlab_cli::{run_cli, RunConfig};
use texlab_core::io::read_json;

const TINY: &[&str] = &[
    "--set",
    "corpus.families_per_kind=1",
    "--set",
    "corpus.crops_per_family=3",
    "--set",
    "gan.steps=3",
    "--set",
    "gan.batch_size=2",
    "--set",
    "encoder.steps=3",
    "--set",
    "encoder.batch_size=2",
    "--set",
    "encoder.mean_w_samples=16",
    "--set",
    "invert.max_iters=3",
    "--set",
    "interpolate.steps=3",
    "--set",
    "interpolate.pixel_iters=3",
    "--set",
    "crops.count=2",
    "--set",
    "eval.crops=2",
    "--set",
    "eval.generated=2",
    "--set",
    "eval.error_samples=10",
];

fn texlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texlab"))
        .args(args)
        .args(TINY)
        .arg("--output-dir")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn texlab")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("texlab").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run_cli(args(&["make-corpus", "--output-dir", out, "--set", "gan.stepz=4"]), Vec::new());
    assert_eq!(code, 1);
    let o = texlab(dir.path(), &["make-corpus", "--set", "gan.stepz=4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gan.stepz"), "{}", stderr(&o));
}

#[test]
fn bad_config_file_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 3\ngan.steps = many\n").unwrap();
    let o = texlab(dir.path(), &["make-corpus", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gan.steps"), "{}", stderr(&o));
}

#[test]
fn env_overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let env = vec![("TEXLAB_CORPUS__CROPS_PER_FAMILY".to_string(), "2".to_string())];
    let code = run_cli(args(&["make-corpus", "--output-dir", out, "--set", "corpus.families_per_kind=1"]), env);
    assert_eq!(code, 0);
    let m: RunManifest = read_json(&dir.path().join("make-corpus").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.config["corpus.crops_per_family"], "2");
    let bad = vec![("TEXLAB_NOT__A_KEY".to_string(), "1".to_string())];
    assert_eq!(run_cli(args(&["make-corpus", "--output-dir", out]), bad), 1);
}

#[test]
fn missing_artifacts_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train-gan", "train-encoder", "invert", "eval"] {
        let o = texlab(dir.path(), &[cmd]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr(&o).contains("texlab"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn make_corpus_is_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        assert!(texlab(d.path(), &["make-corpus", "--deterministic"]).status.success());
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join("make-corpus").join(f)).unwrap();
    assert_eq!(read(&dirs[0], "crops.csv"), read(&dirs[1], "crops.csv"));
    assert_eq!(read(&dirs[0], "manifest.json"), read(&dirs[1], "manifest.json"));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 8] = [
        &["make-corpus"],
        &["train-gan"],
        &["train-encoder"],
        &["invert", "--init", "mean_w"],
        &["interpolate", "--mode", "local", "--transform", "color:0.1,0,-0.1"],
        &["crops", "--sigma", "0.05"],
        &["eval", "--protocol", "all"],
        &["interpolate", "--mode", "gram"],
    ];
    for s in steps {
        let o = texlab(d, s);
        assert!(o.status.success(), "{s:?}: {}", stderr(&o));
        let run_dir = String::from_utf8_lossy(&o.stdout).trim().to_string();
        let m: RunManifest = read_json(&Path::new(&run_dir).join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.command, s[0]);
        for a in &m.artifacts {
            assert!(Path::new(&run_dir).join(a).exists(), "{a}");
        }
        let replay = RunConfig::load(&Path::new(&run_dir).join("config.cfg")).unwrap();
        assert_eq!(replay.hash(), m.config_hash);
    }
    for f in ["eval/table1.csv", "eval/generated_scores.csv", "eval/table2.csv", "eval/fig9_summary.csv", "invert/loss_trace.csv", "crops/crops.csv"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let table1 = std::fs::read_to_string(d.join("eval/table1.csv")).unwrap();
    assert!(table1.contains("Encoder+Opt."));
}

#[test]
fn bad_transform_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for s in [&["make-corpus"][..], &["train-gan"], &["train-encoder"]] {
        assert!(texlab(dir.path(), s).status.success());
    }
    let o = texlab(dir.path(), &["interpolate", "--mode", "local", "--transform", "warp:3"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
