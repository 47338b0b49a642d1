use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use behave::model::{ModelConfig, Objective};
use behave::seqio::load_sequences;
use behave::train::TrainConfig;

fn behave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_behave"))
        .args(args)
        .env_remove("BEHAVE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = behave(args);
    assert!(
        out.status.success(),
        "behave {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn gen_tiny(dir: &Path) {
    ok(&["gen-data", "--out", s(dir), "--families", "all", "--count", "6", "--frames", "10", "--seed", "7"]);
}

fn tiny_train_config(dir: &Path, epochs: usize) -> PathBuf {
    let cfg = TrainConfig {
        model: ModelConfig {
            joints: 17,
            frames: 10,
            latent: 4,
            hidden: 8,
            aux_hidden: 8,
        },
        objective: Objective::Full,
        epochs,
        batch_size: 8,
        lr: 1e-3,
        decay_epochs: vec![],
        gamma_kl_init: 0.01,
        ..TrainConfig::default()
    };
    let p = dir.join("train-config.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_tiny(&a);
    gen_tiny(&b);
    for f in ["train.jsonl", "test.jsonl", "stats.json", "dataset.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let ma: serde_json::Value = serde_json::from_slice(&read(&a.join("manifest.json"))).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&read(&b.join("manifest.json"))).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["command"], "gen-data");
    assert_eq!(ma["seed"], 7);
    assert_eq!(load_sequences(&a.join("train.jsonl")).unwrap().len() + load_sequences(&a.join("test.jsonl")).unwrap().len(), 36);
}

#[test]
fn usage_errors_exit_2_name_the_flag_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let r = behave(&["gen-data", "--out", s(&out_dir), "--bogus", "1"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--bogus"));
    let r = behave(&["gen-data", "--out", s(&out_dir), "--families", "juggling"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--families"));
    let r = behave(&["train", "--out", s(&out_dir)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--data"));
    let r = behave(&["train", "--data", "x", "--objective", "magic", "--out", s(&out_dir)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--objective"));
    let r = behave(&["render", "--input", "x.jsonl", "--view", "diagonal", "--out", s(&out_dir)]);
    assert_eq!(r.status.code(), Some(2));
    // --ckpt does not apply to gen-data
    let r = behave(&["gen-data", "--out", s(&out_dir), "--ckpt", "c"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out_dir.exists());
    assert_eq!(behave(&[]).status.code(), Some(2));
    assert_eq!(behave(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_1_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let r = behave(&["render", "--input", s(&tmp.path().join("missing.jsonl")), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.jsonl"));
    let r = behave(&["transfer", "--ckpt", "nope.ckpt", "--source", "a", "--target-frame", "b", "--out", "o"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn the_data_directory_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let cfg = tiny_train_config(tmp.path(), 1);
    let run = tmp.path().join("run");
    let r = Command::new(env!("CARGO_BIN_EXE_behave"))
        .args(["train", "--config", s(&cfg), "--out", s(&run)])
        .env("BEHAVE_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(run.join("last.ckpt").exists());
}

#[test]
fn resumed_cli_training_matches_uninterrupted_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let two = tiny_train_config(tmp.path(), 2);
    let (straight, split) = (tmp.path().join("straight"), tmp.path().join("split"));
    ok(&["train", "--data", s(&data), "--config", s(&two), "--out", s(&straight)]);
    ok(&["train", "--data", s(&data), "--config", s(&two), "--epochs", "1", "--out", s(&split)]);
    let first = split.join("last.ckpt");
    let resumed = tmp.path().join("resumed");
    ok(&["train", "--data", s(&data), "--config", s(&two), "--ckpt", s(&first), "--out", s(&resumed)]);
    assert_eq!(read(&straight.join("last.ckpt")), read(&resumed.join("last.ckpt")));
}

#[test]
fn the_full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    let data = p("data");
    gen_tiny(&data);
    let train_file = data.join("train.jsonl");
    let train_digest = read(&train_file);
    let cfg = tiny_train_config(tmp.path(), 2);
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&p("full"))]);
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--objective", "cae", "--out", s(&p("cae"))]);
    let ckpt = p("full").join("last.ckpt");
    assert!(p("full").join("log.jsonl").exists() && p("full").join("manifest.json").exists());

    ok(&["train-flow", "--data", s(&data), "--ckpt", s(&ckpt), "--blocks", "2", "--epochs", "1", "--out", s(&p("flow.ckpt"))]);
    assert!(p("flow.ckpt.manifest.json").exists());

    // transfer: one source → one n-frame sequence
    let seqs = load_sequences(&train_file).unwrap();
    behave::seqio::save_sequences(&p("s.jsonl"), &seqs[..1]).unwrap();
    behave::seqio::save_sequences(&p("t.jsonl"), &seqs[5..6]).unwrap();
    ok(&["transfer", "--ckpt", s(&ckpt), "--source", s(&p("s.jsonl")), "--target-frame", s(&p("t.jsonl")), "--out", s(&p("o.jsonl"))]);
    let o = load_sequences(&p("o.jsonl")).unwrap();
    assert_eq!(o.len(), 1);
    assert_eq!(o[0].frames(), 10);
    // the output starts from (a decoding of) the target posture, in world coordinates
    assert!(o[0].data().iter().all(|v| v.is_finite() && v.abs() < 10.0));

    ok(&["sample", "--ckpt", s(&ckpt), "--flow", s(&p("flow.ckpt")), "--start", s(&p("t.jsonl")), "--count", "3", "--seed", "4", "--out", s(&p("samples.jsonl"))]);
    assert_eq!(load_sequences(&p("samples.jsonl")).unwrap().len(), 3);
    ok(&["sample-loop", "--ckpt", s(&ckpt), "--start", s(&p("t.jsonl")), "--segments", "3", "--out", s(&p("loop.jsonl"))]);
    assert_eq!(load_sequences(&p("loop.jsonl")).unwrap()[0].frames(), 30);
    ok(&["interpolate", "--ckpt", s(&ckpt), "--from", s(&p("s.jsonl")), "--to", s(&p("t.jsonl")), "--out", s(&p("interp.jsonl"))]);
    assert_eq!(load_sequences(&p("interp.jsonl")).unwrap().len(), 6);

    let report = ok(&[
        "eval-transfer", "--data", s(&data), "--models", "full,cae", "--ckpt-dir", s(tmp.path()), "--pairs", "5", "--no-re", "--out", s(&p("ev")),
    ]);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("full") && text.contains("cae") && text.contains("TDE@10"));
    let json: serde_json::Value = serde_json::from_slice(&read(&p("ev").join("report.json"))).unwrap();
    assert_eq!(json["transfer"].as_array().unwrap().len(), 2);
    assert!(json["transfer"][0]["action_accuracy"].is_number());

    ok(&["eval-diversity", "--data", s(&data), "--ckpt", s(&ckpt), "--flow", s(&p("flow.ckpt")), "--sizes", "2,3", "--starts", "2", "--out", s(&p("div"))]);
    let div: serde_json::Value = serde_json::from_slice(&read(&p("div").join("report.json"))).unwrap();
    assert_eq!(div["diversity"].as_array().unwrap().len(), 4);

    let rc = p("rc.json");
    std::fs::write(&rc, r#"{"hidden":8,"iterations":5,"batch_size":8,"lr":0.05,"momentum":0.9,"split":0.8,"seed":0}"#).unwrap();
    ok(&["eval-realism", "--data", s(&data), "--ckpt", s(&ckpt), "--flow", s(&p("flow.ckpt")), "--count", "20", "--config", s(&rc), "--out", s(&p("real"))]);
    let real: serde_json::Value = serde_json::from_slice(&read(&p("real").join("report.json"))).unwrap();
    let kinds: Vec<&str> = real["realism"]["accuracy"].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(kinds, ["flow", "prior", "self", "transfer"]);

    ok(&["nn", "--data", s(&data), "--ckpt", s(&ckpt), "--query", s(&p("s.jsonl")), "--k", "3", "--out", s(&p("nn.json"))]);
    let nn: serde_json::Value = serde_json::from_slice(&read(&p("nn.json"))).unwrap();
    assert_eq!(nn["neighbors"][0]["id"], seqs[0].id.as_str());
    ok(&["nn", "--data", s(&data), "--metric", "posture", "--query", s(&p("s.jsonl")), "--out", s(&p("nn2.json"))]);
    let nn2: serde_json::Value = serde_json::from_slice(&read(&p("nn2.json"))).unwrap();
    assert_eq!(nn2["neighbors"][0]["distance"], 0.0);
    assert_eq!(nn2["neighbors"].as_array().unwrap().len(), 5);

    ok(&["render", "--input", s(&p("o.jsonl")), "--out", s(&p("svg"))]);
    assert!(p("svg").join("frame-0009.svg").exists() && p("svg").join("animated.svg").exists());

    // inputs are never modified
    assert_eq!(read(&train_file), train_digest);
}

#[test]
fn evaluation_reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let cfg = tiny_train_config(tmp.path(), 1);
    let run = tmp.path().join("m");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run)]);
    // the second run reads a copy elsewhere: reports must not depend on paths
    let ckpt = run.join("last.ckpt");
    let copy = tmp.path().join("copy.ckpt");
    std::fs::copy(&ckpt, &copy).unwrap();
    for (dir, model) in [("e1", &ckpt), ("e2", &copy)] {
        ok(&["eval-transfer", "--data", s(&data), "--ckpt", s(model), "--pairs", "4", "--steps", "1,5,10", "--seed", "3", "--out", s(&tmp.path().join(dir))]);
    }
    for f in ["report.json", "report.txt"] {
        assert_eq!(read(&tmp.path().join("e1").join(f)), read(&tmp.path().join("e2").join(f)));
    }
}

#[test]
fn a_one_frame_sequence_renders_one_still() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = behave::PoseSequence::new("one", None, 1, 17, vec![0.0; 51]).unwrap();
    let f = tmp.path().join("one.jsonl");
    behave::seqio::save_sequences(&f, &[seq]).unwrap();
    ok(&["render", "--input", s(&f), "--fps", "10", "--out", s(&tmp.path().join("r"))]);
    let mut names: Vec<String> = std::fs::read_dir(tmp.path().join("r")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["animated.svg", "frame-0000.svg", "manifest.json"]);
}
