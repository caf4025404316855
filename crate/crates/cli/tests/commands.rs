use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn theory(dir: &TempDir, spec: &str) -> (Output, PathBuf) {
    let cfg = write_spec(dir.path(), "spec.toml", spec);
    let out = dir.path().join("out");
    let o = run(&["theory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

const UNIFORM: &str = "seed = 0\n[data]\nn_c = 3\ns_c = 400\nseq_len = 15\nn_classes = 1000\n";

#[test]
fn theory_reproduces_reference_constants() {
    let dir = TempDir::new().unwrap();
    let (o, out) = theory(&dir, UNIFORM);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = json(&out.join("prediction.json"));
    assert!((p["h"]["c"].as_f64().unwrap() - 1.42214).abs() < 1e-5);
    assert!(p["hstar"]["c"].as_f64().is_some());

    let dir = TempDir::new().unwrap();
    let (o, out) = theory(&dir, &UNIFORM.replace("n_classes = 1000", "n_classes = 50"));
    assert!(o.status.success());
    assert!((json(&out.join("prediction.json"))["h"]["c"].as_f64().unwrap() - 0.61602).abs() < 1e-5);
}

#[test]
fn theory_emits_ordered_radii_or_exit_3() {
    let dir = TempDir::new().unwrap();
    let tiny = "seed = 0\n[data]\nn_c = 2\ns_c = 3\nseq_len = 2\nn_classes = 4\ndistribution = \"zipf\"\n\
                [train]\nd = 4\nlambda = 0.01\n[theory]\ntype3 = true\n";
    let (o, out) = theory(&dir, tiny);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let radii: Vec<f64> = json(&out.join("prediction.json"))["type3"]["radii"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(radii.len(), 3);
    assert!(radii.windows(2).all(|r| r[0] > r[1]));

    let dir = TempDir::new().unwrap();
    let big = format!("{}distribution = \"zipf\"\n[theory]\ntype3 = true\n", UNIFORM);
    let (o, out) = theory(&dir, &big);
    assert_eq!(o.status.code(), Some(3));
    let p = json(&out.join("prediction.json"));
    assert_eq!(p["uniqueness_bound"]["holds"], Value::Bool(false));
    assert!(p["type3"].is_null());
}

const TINY: &str = "seed = 4\n[data]\nn_c = 2\ns_c = 2\nseq_len = 2\nn_classes = 4\ndistribution = \"zipf\"\n\
                    [train]\nd = 4\nlambda = 0.01\n[verify]\nfd_instances = 3\n";

#[test]
fn verify_full_instance_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_spec(dir.path(), "spec.toml", TINY);
    let out = dir.path().join("v");
    let o = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("verify.json"));
    for check in report["checks"].as_array().unwrap() {
        assert_eq!(check["status"], "pass", "{check}");
    }
}

#[test]
fn verify_partial_latents_fails_symmetry() {
    let dir = TempDir::new().unwrap();
    let cfg = write_spec(dir.path(), "spec.toml", &TINY.replace("n_classes = 4", "n_classes = 3"));
    let out = dir.path().join("v");
    let o = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report = json(&out.join("verify.json"));
    let sym = &report["checks"][0];
    assert_eq!(sym["name"], "symmetry");
    assert_eq!(sym["detail"]["holds"], Value::Bool(false));
    assert!(sym["detail"]["worst_violation"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = run(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));

    let cfg = write_spec(dir.path(), "spec.toml", TINY);
    let junk = dir.path().join("weights.bin");
    std::fs::write(&junk, b"not a weights file").unwrap();
    let out = dir.path().join("v");
    let o = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--weights",
        junk.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

const SMALL_TRAIN: &str = "seed = 9\n[data]\nn_c = 3\ns_c = 6\nseq_len = 4\nn_classes = 20\n\
                           [train]\nd = 12\nbatch_size = 20\nmax_epochs = 150\n";

fn train(dir: &Path, spec: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_spec(dir, "spec.toml", spec);
    let out = dir.join("run");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (run(&args), out)
}

#[test]
fn train_writes_artifacts_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (oa, out_a) = train(a.path(), SMALL_TRAIN, &[]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let (ob, out_b) = train(b.path(), SMALL_TRAIN, &["--threads", "1"]);
    assert!(ob.status.success());
    for f in ["weights.bin", "history.csv", "report.json", "words.csv", "dataset.csv"] {
        let (x, y) = (std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
    let report = json(&out_a.join("report.json"));
    assert!(report["test_accuracy"].as_f64().unwrap() >= 0.9, "{report}");
    assert_eq!(report["comparison"][0]["metric"], "embedding_norm_mean");
    let history = std::fs::read_to_string(out_a.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_risk\n1,"));
    let dataset = std::fs::read_to_string(out_a.join("dataset.csv")).unwrap();
    assert_eq!(dataset.lines().count(), 1 + 20 * 5);

    let c = TempDir::new().unwrap();
    let (oc, out_c) = train(c.path(), SMALL_TRAIN, &["--seed", "10"]);
    assert!(oc.status.success());
    assert!(std::fs::read(out_a.join("weights.bin")).unwrap() != std::fs::read(out_c.join("weights.bin")).unwrap());
}

#[test]
fn report_recomputes_diagnostics_from_weights() {
    let dir = TempDir::new().unwrap();
    let (o, out) = train(dir.path(), SMALL_TRAIN, &[]);
    assert!(o.status.success());
    let trained = json(&out.join("report.json"));
    let cfg = dir.path().join("spec.toml");
    let r = run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let again = json(&out.join("report.json"));
    assert_eq!(again["metadata"]["command"], "report");
    assert_eq!(again["test_accuracy"], trained["test_accuracy"]);
    assert_eq!(again["collapse"], trained["collapse"]);

    // dimensions that disagree with the config are rejected
    let other = write_spec(dir.path(), "other.toml", &SMALL_TRAIN.replace("d = 12", "d = 13"));
    let r = run(&["report", "--config", other.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn divergence_exits_1() {
    let dir = TempDir::new().unwrap();
    let spec = SMALL_TRAIN.replace("max_epochs = 150", "max_epochs = 50\nlearning_rate = 1000.0\nlambda = 1.0");
    let (o, _) = train(dir.path(), &spec, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            collapse_lab_cli::ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn tiny_config_verifies_and_solves() {
    let dir = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny_verify.toml");
    let out = dir.path().join("t");
    for cmd in ["verify", "theory"] {
        let o = run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
