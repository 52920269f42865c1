use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddssm::experiment::ExperimentConfig;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddssm"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs_dir().join("hutchinson.toml")).unwrap();
    let text = text.replace("t_end = 100.0", "t_end = 40.0").replace("train = 6", "train = 3");
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut names = Vec::new();
    for e in fs::read_dir(configs_dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg: ExperimentConfig = toml::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            names.push(cfg.name);
        }
    }
    names.sort();
    let want = [
        "cushing-bifurcation",
        "hutchinson",
        "mackey-glass",
        "microchaos-zoh",
        "rossler-delay",
        "traffic-parametric",
        "two-neuron",
    ];
    assert_eq!(names, want);
}

#[test]
fn fit_on_empty_directory_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let cfg = configs_dir().join("hutchinson.toml");
    let out = run(&[
        "fit",
        "-c",
        cfg.to_str().unwrap(),
        "--data",
        empty.to_str().unwrap(),
        "-o",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no train_"));
}

#[test]
fn invalid_field_named_in_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs_dir().join("hutchinson.toml")).unwrap().replace("k = 5", "k = 0");
    let path = tmp.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = run(&["simulate", "-c", path.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embedding"), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(&path, "name = 1").unwrap();
    let out = run(&["spectrum", "-c", path.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_oracle_system_rejected() {
    assert_eq!(run(&["oracle", "--system", "mackey-glass"]).status.code(), Some(2));
}

#[test]
fn oracle_json_carries_cubic_coefficients() {
    let out = run(&["oracle", "--system", "hutchinson"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let b20 = &v["beta"]["20"];
    assert!((b20[0].as_f64().unwrap() * 100.0 - 7.2).abs() < 0.36);
    assert!((b20[1].as_f64().unwrap() * 100.0 + 4.2).abs() < 0.21);
    assert_eq!(v["beta"].as_object().unwrap().len(), 7);
}

#[test]
fn systems_list_is_json() {
    let out = run(&["systems", "list"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().unwrap().iter().any(|e| e["name"] == "cushing"));
}

fn pipeline(cfg: &Path, root: &Path) {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (sim, fit, pred) = (root.join("sim"), root.join("fit"), root.join("pred"));
    for args in [
        vec!["simulate".into(), "-c".into(), s(cfg), "-o".into(), s(&sim)],
        vec!["fit".into(), "-c".into(), s(cfg), "--data".into(), s(&sim), "-o".into(), s(&fit)],
        vec![
            "predict".into(),
            "-c".into(),
            s(cfg),
            "--data".into(),
            s(&sim),
            "--model".into(),
            s(&fit.join("model.json")),
            "-o".into(),
            s(&pred),
        ],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn pipeline_reruns_are_byte_identical_and_manifests_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    for stage in ["sim", "fit", "pred"] {
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(a.join(stage).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 1);
        let outputs = manifest["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        let mut listed: Vec<String> = Vec::new();
        for o in outputs {
            let name = o["path"].as_str().unwrap();
            let bytes = fs::read(a.join(stage).join(name)).unwrap();
            assert_eq!(o["sha256"].as_str().unwrap(), hex(&bytes), "{stage}/{name}");
            assert_eq!(bytes, fs::read(b.join(stage).join(name)).unwrap(), "{stage}/{name} differs between runs");
            listed.push(name.to_string());
        }
        // everything in the directory besides the manifest is listed
        for e in fs::read_dir(a.join(stage)).unwrap() {
            let n = e.unwrap().file_name().into_string().unwrap();
            assert!(n == "manifest.json" || listed.contains(&n), "{stage}/{n} missing from manifest");
        }
    }
    let nmte = fs::read_to_string(a.join("pred/nmte.csv")).unwrap();
    assert!(nmte.starts_with("trajectory,nmte,diverged\n"));
}

#[test]
fn thread_count_variable_is_checked() {
    let out = bin().env("DDSSM_THREADS", "zero").args(["systems", "list"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().env("DDSSM_THREADS", "2").args(["systems", "list"]).output().unwrap();
    assert!(out.status.success());
}
