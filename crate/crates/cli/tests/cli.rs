use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "synth": {"n_train": 2, "n_test": 1, "frame_size": 16, "square_size": 4, "clip_len_source": 16},
  "sampling": {"clip_len": 4, "temporal_stride": 2, "crop_size": 12},
  "basic_aug": {"crop_size": 12},
  "model": {"blocks": [
    {"out_channels": 4, "spatial_stride": 2, "temporal_stride": 1},
    {"out_channels": 8, "spatial_stride": 2, "temporal_stride": 2}
  ], "embed_dim": 8},
  "objective": {"bank_size": 8},
  "train": {"batch_size": 3, "epochs": 2},
  "probe": {"epochs": 5}
}"#;

fn vtdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtdl")).args(args).env_remove("VTDL_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn synth(dir: &Path, cfg: &str) -> String {
    let data = dir.join("data");
    let o = vtdl(&["synth", "--config", cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    data.to_str().unwrap().to_string()
}

fn subdirs(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count()
}

#[test]
fn synth_with_defaults_writes_every_video() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = vtdl(&["synth", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(subdirs(&out), 4 * (128 + 32));
    let labels: Value = serde_json::from_slice(&fs::read(out.join("labels.json")).unwrap()).unwrap();
    assert_eq!(labels.as_object().unwrap().len(), 640);
    assert_eq!(fs::read_dir(out.join("train_0000")).unwrap().count(), 64);
}

#[test]
fn synth_is_reproducible_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let labels = |dir: &str, extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vtdl"));
        cmd.args(["synth", "--config", &cfg, "--out", dir]).args(extra).env_remove("VTDL_SEED");
        if let Some(seed) = env {
            cmd.env("VTDL_SEED", seed);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(Path::new(dir).join("labels.json")).unwrap()
    };
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let a = labels(&p("a"), &[], None);
    assert_eq!(labels(&p("a"), &[], None), a);
    assert_eq!(labels(&p("b"), &[], None), a);
    let seeded = labels(&p("c"), &["--seed", "7"], None);
    assert_eq!(labels(&p("d"), &[], Some("7")), seeded);
    assert_eq!(labels(&p("e"), &["--seed", "7"], Some("3")), seeded);
    assert_ne!(labels(&p("f"), &[], Some("3")), seeded);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"train\": {\n    \"epochs\": ,\n  }\n}");
    let o = vtdl(&["synth", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(stderr(&o).contains("column"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), r#"{"sampling": {"tua": 2}}"#);
    assert_eq!(vtdl(&["synth", "--config", &cfg, "--out", out]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), r#"{"synth": {"square_size": 40}}"#);
    assert_eq!(vtdl(&["synth", "--config", &cfg, "--out", out]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_vtdl")).args(["synth", "--out", out]).env("VTDL_SEED", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(out).exists());
}

#[test]
fn io_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = vtdl(&["synth", "--config", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let missing = tmp.path().join("missing.json");
    assert_eq!(vtdl(&["synth", "--config", missing.to_str().unwrap(), "--out", "x"]).status.code(), Some(3));
}

#[test]
fn pretrain_then_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = synth(tmp.path(), &cfg);
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = vtdl(&["pretrain", "--config", &cfg, "--data", &data, "--out", run_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = String::from_utf8(o.stdout).unwrap().trim().to_string();
    assert!(Path::new(&ckpt).join("manifest.json").exists());

    // 8 training videos, batch 3, 2 epochs
    let log = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2 * 3);
    for line in log.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "loss", "lr", "mean_pos_sim", "mean_neg_sim"] {
            assert!(rec.get(key).is_some(), "{key} missing from {line}");
        }
    }

    // resuming a finished run is a no-op
    let manifest = fs::read(Path::new(&ckpt).join("manifest.json")).unwrap();
    let o = vtdl(&["pretrain", "--data", &data, "--out", run_s, "--resume", &ckpt]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(Path::new(&ckpt).join("manifest.json")).unwrap(), manifest);
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap(), log);

    let probe = |extra: &[&str]| -> Value {
        let mut args = vec!["probe", "--checkpoint", &ckpt, "--data", &data];
        args.extend_from_slice(extra);
        let o = vtdl(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let r = probe(&[]);
    assert!(r["top1"].as_f64().is_some());
    assert_eq!(r["confusion"].as_array().unwrap().len(), 4);
    let total: u64 = r["confusion"].as_array().unwrap().iter().flat_map(|row| row.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 4);
    assert!(probe(&["--control"])["top1"].as_f64().is_some());
    assert_eq!(probe(&["--one-hot-features"])["top1"].as_f64(), Some(1.0));
}

#[test]
fn pretrain_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = synth(tmp.path(), &cfg);
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = vtdl(&["pretrain", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap(), "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let ckpt = out.join("latest");
        let mut files: Vec<_> = fs::read_dir(&ckpt).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        manifests.push(files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn data_errors_exit_4_naming_the_video() {
    let tmp = tempfile::tempdir().unwrap();
    let short = TINY.replace("\"clip_len_source\": 16", "\"clip_len_source\": 3");
    let cfg = write_config(tmp.path(), &short);
    let data = synth(tmp.path(), &cfg);
    let out = tmp.path().join("run");
    let o = vtdl(&["pretrain", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("train_0000"), "{}", stderr(&o));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = vtdl(&["pretrain", "--config", &cfg, "--data", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = synth(tmp.path(), &cfg);
    let ckpt = tmp.path().join("ckpt");
    fs::create_dir(&ckpt).unwrap();
    fs::write(ckpt.join("manifest.json"), "{\"format\": 1}").unwrap();
    let o = vtdl(&["probe", "--checkpoint", ckpt.to_str().unwrap(), "--data", &data]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn preview_triplet_writes_members_and_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let data = synth(tmp.path(), &cfg);
    let out = tmp.path().join("preview");
    let o = vtdl(&["preview-triplet", "--config", &cfg, "--data", &data, "--video", "train_0001", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for member in ["anchor", "positive", "negative"] {
        assert_eq!(fs::read_dir(out.join(member)).unwrap().count(), 4, "{member}");
    }
    let record: Value = serde_json::from_slice(&fs::read(out.join("augmentation_record.json")).unwrap()).unwrap();
    let ops = |member: &str| -> Vec<Value> { record[member]["transforms"].as_array().unwrap().clone() };
    let tca = ["internal_mix", "external_mix", "cutout"];
    let alphas: Vec<f64> = ops("positive").iter().filter_map(|t| t.get("alpha").and_then(Value::as_f64)).collect();
    assert_eq!(alphas.len(), 2, "{record}");
    assert!(alphas.iter().all(|a| (0.5..=1.0).contains(a)));
    for member in ["anchor", "negative"] {
        assert!(ops(member).iter().all(|t| !tca.contains(&t["op"].as_str().unwrap())), "{record}");
    }
    assert_eq!(record["t_a"], record["t_p"]);

    let o = vtdl(&["preview-triplet", "--config", &cfg, "--data", &data, "--video", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn default_config_round_trips() {
    let o = vtdl(&["default-config"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["lr0"], 0.01);
    assert_eq!(v["train"]["m"], 0.99);
    assert_eq!(v["sampling"]["tau"], 2);
    assert_eq!(v["tca"]["alpha_range"], serde_json::json!([0.5, 1.0]));
}

#[test]
fn selfcheck_rejects_unknown_faults() {
    let o = vtdl(&["selfcheck", "--fault", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

// Walks the published schema alongside the live defaults.
fn schema_matches(schema: &Value, value: &Value, path: &str) {
    match value {
        Value::Object(map) => {
            let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{path}: no properties"));
            let mut want: Vec<_> = map.keys().collect();
            let mut have: Vec<_> = props.keys().collect();
            want.sort();
            have.sort();
            assert_eq!(want, have, "{path}");
            for (k, v) in map {
                schema_matches(&props[k], v, &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(&schema["default"], value, "{path}"),
    }
}

#[test]
fn published_schema_tracks_defaults() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let o = vtdl(&["default-config"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    schema_matches(&schema, &v, "config");
}
