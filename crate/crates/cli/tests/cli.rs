use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use ogae_core::data::{encode_idx_images, encode_idx_labels, read_npy};

const SIDE: usize = 28;

/// Digit-dependent blobs with noise, small enough for seconds-long runs.
fn fake_split(counts: &[(u8, usize)], seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for &(digit, n) in counts {
        for _ in 0..n {
            let cy = 8.0 + digit as f64;
            let cx = 18.0 - digit as f64;
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = 255.0 * (-d2 / 20.0).exp() + rng.random_range(0.0..30.0);
                    pixels.push(v.min(255.0) as u8);
                }
            }
            labels.push(digit);
        }
    }
    (pixels, labels)
}

fn write_fake_mnist(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    fs::create_dir_all(dir).unwrap();
    let (train_px, train_lab) = fake_split(&[(3, 30), (8, 20), (4, 6)], 1);
    let (test_px, test_lab) = fake_split(&[(3, 10), (8, 10), (4, 4)], 2);
    fs::write(dir.join("train-images-idx3-ubyte"), encode_idx_images(train_lab.len(), SIDE, SIDE, &train_px)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), encode_idx_labels(&train_lab)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), encode_idx_images(test_lab.len(), SIDE, SIDE, &test_px)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), encode_idx_labels(&test_lab)).unwrap();
    (train_px, train_lab)
}

fn write_config(dir: &Path, mnist: &Path, extra_experiment: Value) -> PathBuf {
    let mut experiment = serde_json::json!({ "strict_counts": false });
    if let (Value::Object(e), Value::Object(x)) = (&mut experiment, extra_experiment) {
        e.extend(x);
    }
    let config = serde_json::json!({
        "data": { "mnist_dir": mnist, "experiment": experiment },
        "train": { "epochs": 2, "batch_size": 10, "patience": null, "gamma": 0.05, "guidance": { "lambda": 1.0 } },
        "bootstrap": { "resamples": 40 }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn ogae(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ogae"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(out: &Path, config: &Path) {
    for step in ["corrupt", "train", "fit-svm", "score", "evaluate", "report"] {
        ok(&ogae(&[step], Some(config), out));
    }
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = ogae(&["corrupt"], Some(&tmp.path().join("nope.json")), &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_mnist_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("no-mnist"), serde_json::json!({}));
    let o = ogae(&["corrupt"], Some(&cfg), &tmp.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MNIST"));
}

#[test]
fn steps_out_of_order_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let mnist = tmp.path().join("mnist");
    write_fake_mnist(&mnist);
    let cfg = write_config(tmp.path(), &mnist, serde_json::json!({}));
    let out = tmp.path().join("run");
    for step in ["train", "fit-svm", "score", "evaluate", "report"] {
        assert_eq!(ogae(&[step], Some(&cfg), &out).status.code(), Some(2), "{step} on an empty directory");
    }
    ok(&ogae(&["corrupt"], Some(&cfg), &out));
    assert_eq!(ogae(&["fit-svm"], Some(&cfg), &out).status.code(), Some(2));
    assert_eq!(ogae(&["score"], Some(&cfg), &out).status.code(), Some(2));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_ogae")).args(["train", "--jobs", "many"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let tmp = TempDir::new().unwrap();
    let mnist = tmp.path().join("mnist");
    write_fake_mnist(&mnist);
    let config = serde_json::json!({
        "data": { "mnist_dir": mnist, "experiment": { "strict_counts": false } },
        "train": { "epochs": 3, "batch_size": 10, "learning_rate": 1e300, "patience": null },
        "methods": ["ae-recons"]
    });
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let out = tmp.path().join("run");
    ok(&ogae(&["corrupt"], Some(&cfg), &out));
    let o = ogae(&["train"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn identity_corruption_caches_the_source_pixels() {
    let tmp = TempDir::new().unwrap();
    let mnist = tmp.path().join("mnist");
    let (px, labels) = write_fake_mnist(&mnist);
    let cfg = write_config(
        tmp.path(),
        &mnist,
        serde_json::json!({ "train_corruptions": [{ "kind": "identity" }] }),
    );
    let out = tmp.path().join("run");
    ok(&ogae(&["corrupt"], Some(&cfg), &out));

    let splits: Value = serde_json::from_str(&fs::read_to_string(out.join("data/splits.json")).unwrap()).unwrap();
    let mut seen = 0;
    for name in ["train", "earlystop"] {
        let arr = read_npy(&out.join(format!("data/{name}.npy"))).unwrap();
        let sources = splits["splits"][name]["source_index"].as_array().unwrap();
        for (k, src) in sources.iter().enumerate() {
            let src = src.as_u64().unwrap() as usize;
            assert_eq!(labels[src], 3);
            let cached = &arr.data[k * SIDE * SIDE..(k + 1) * SIDE * SIDE];
            let raw = &px[src * SIDE * SIDE..(src + 1) * SIDE * SIDE];
            for (c, r) in cached.iter().zip(raw) {
                assert_eq!(*c, *r as f64 / 255.0);
            }
            seen += 1;
        }
    }
    assert_eq!(seen, 30);
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_is_reproducible_and_guards_its_artifacts() {
    let tmp = TempDir::new().unwrap();
    let mnist = tmp.path().join("mnist");
    write_fake_mnist(&mnist);
    let cfg = write_config(tmp.path(), &mnist, serde_json::json!({}));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_pipeline(&a, &cfg);
    run_pipeline(&b, &cfg);

    let ma = manifest(&a);
    let mb = manifest(&b);
    assert_eq!(ma["format"], "ogae-run/1");
    let methods = ma["methods"].as_object().unwrap();
    assert_eq!(methods.len(), 4);
    for (name, m) in methods {
        let test = &m["metrics"]["test"];
        for key in ["auroc", "aupr", "auroc30", "partial_auc"] {
            let v = test[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{name} {key} = {v}");
        }
        assert_eq!(m["metrics"], mb["methods"][name]["metrics"], "{name} metrics differ between runs");
    }
    assert_eq!(ma["artifacts"], mb["artifacts"], "artifact hashes differ between runs");

    // 50 images of the two digits under three test corruptions.
    let csv = fs::read_to_string(a.join("scores/ogae-ocsvm.test.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,label,score"));
    assert_eq!(lines.count(), 3 * 50);
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    for name in ["ae-recons", "ae-ocsvm", "ogae-ocsvm", "ogae-recons"] {
        assert!(report.contains(name), "{report}");
    }

    // ae-recons and ae-ocsvm share one trained model.
    assert_eq!(
        ma["artifacts"]["models/ae-recons.ckpt"]["sha256"],
        ma["artifacts"]["models/ae-ocsvm.ckpt"]["sha256"]
    );

    let path = a.join("scores/ae-recons.test.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("mnist-train:0:stripe,0,0.5\n");
    fs::write(&path, text).unwrap();
    let o = ogae(&["report"], Some(&cfg), &a);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("changed"));
}

#[test]
fn seed_flag_changes_models_but_not_data() {
    let tmp = TempDir::new().unwrap();
    let mnist = tmp.path().join("mnist");
    write_fake_mnist(&mnist);
    let cfg = write_config(tmp.path(), &mnist, serde_json::json!({}));
    let mut hashes = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(format!("s{seed}"));
        for step in ["corrupt", "train"] {
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_ogae"));
            cmd.args([step, "--seed", seed, "--config"]).arg(&cfg).arg("--out").arg(&out);
            ok(&cmd.output().unwrap());
        }
        let m = manifest(&out);
        hashes.push((m["artifacts"]["data/train.npy"].clone(), m["artifacts"]["models/ae-recons.ckpt"].clone()));
    }
    assert_eq!(hashes[0].0, hashes[1].0);
    assert_ne!(hashes[0].1, hashes[1].1);
}
