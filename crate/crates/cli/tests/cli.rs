use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vattr_core::data::toy::{Formant, ToyCorpusConfig};
use vattr_core::data::{load_manifest, write_manifest};
use vattr_core::wav::write_wav;
use vattr_core::Waveform;

fn vattr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vattr")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_spec(dir: &Path) -> PathBuf {
    let mut cfg = ToyCorpusConfig::reference();
    cfg.corpus.n_per_class = 8;
    cfg.corpus.duration = 0.5;
    cfg.corpus.speakers = 4;
    let path = dir.join("spec.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn toygen(dir: &Path, name: &str) -> PathBuf {
    let spec = small_spec(dir);
    let out = dir.join(name);
    ok(&vattr(&["toygen", "--spec", s(&spec), "--out", s(&out), "--seed", "7"]));
    out
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn toygen_writes_corpus_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = toygen(tmp.path(), "corpus");
    let records = load_manifest(corpus.join("manifest.csv")).unwrap();
    assert_eq!(records.len(), 32);
    assert!(records.iter().all(|r| r.resolve_audio(&corpus).exists()));
    let echo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(corpus.join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo["command"], "toygen");
    assert_eq!(echo["args"]["seed"], 7);
}

#[test]
fn toygen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = toygen(tmp.path(), "a");
    let b = toygen(tmp.path(), "b");
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != Path::new("config_echo.json")).collect()
    };
    assert_eq!(strip(read_tree(&a)), strip(read_tree(&b)));
}

#[test]
fn invalid_pole_radius_names_the_class() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ToyCorpusConfig::reference();
    cfg.class.get_mut("A08").unwrap().formants[0] = Formant {
        freq: 600.0,
        bandwidth: None,
        radius: Some(1.2),
    };
    let spec = tmp.path().join("bad.toml");
    std::fs::write(&spec, cfg.to_toml()).unwrap();
    let out = vattr(&["toygen", "--spec", s(&spec), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("A08") && err.contains("radius"), "{err}");
    assert!(!tmp.path().join("c").join("manifest.csv").exists());
}

#[test]
fn extract_logmel_and_bicoherence() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = toygen(tmp.path(), "corpus");
    let manifest = corpus.join("manifest.csv");
    let cache = tmp.path().join("cache");
    ok(&vattr(&["extract", "--manifest", s(&manifest), "--kind", "logmel", "--cache-dir", s(&cache)]));
    let m = vattr_core::features::read_feature_cache(cache.join("logmel").join("A01_0000.vafx")).unwrap();
    assert_eq!(m.num_features(), 80);
    assert!(cache.join("logmel").join("config_echo.json").exists());

    ok(&vattr(&["extract", "--manifest", s(&manifest), "--kind", "bicoherence", "--cache-dir", s(&cache)]));
    let grid = std::fs::read_to_string(cache.join("bicoherence").join("A17_0003.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines.len(), 1 + 129);
    assert!(lines.iter().all(|l| l.split(',').count() == 1 + 129));
    let summary = std::fs::read_to_string(cache.join("bicoherence").join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 32);
}

#[test]
fn silent_file_is_skipped_with_vad() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = toygen(tmp.path(), "corpus");
    let mut records = load_manifest(corpus.join("manifest.csv")).unwrap();
    records.truncate(2);
    let silent = corpus.join("wav").join(format!("{}.wav", records[1].utterance_id));
    write_wav(&silent, &Waveform::new(vec![0.0; 8000], 16000).unwrap()).unwrap();
    let manifest = corpus.join("two.csv");
    write_manifest(&manifest, &records).unwrap();
    let cache = tmp.path().join("cache");
    let out = vattr(&[
        "extract",
        "--manifest",
        s(&manifest),
        "--kind",
        "logmel",
        "--cache-dir",
        s(&cache),
        "--remove-silence",
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&records[1].utterance_id));
    assert!(cache.join("logmel").join(format!("{}.vafx", records[0].utterance_id)).exists());
    assert!(!cache.join("logmel").join(format!("{}.vafx", records[1].utterance_id)).exists());
}

#[test]
fn intermediate_fusion_needs_both_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = toygen(tmp.path(), "corpus");
    let manifest = corpus.join("manifest.csv");
    let cache = tmp.path().join("cache");
    ok(&vattr(&["extract", "--manifest", s(&manifest), "--kind", "logmel", "--cache-dir", s(&cache)]));
    let out = vattr(&[
        "train",
        "--manifest",
        s(&manifest),
        "--arch",
        "fuse-intermediate",
        "--cache-dir",
        s(&cache),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lpr") && err.contains("extract"), "{err}");
}

#[test]
fn missing_manifest_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vattr(&["train", "--manifest", s(&tmp.path().join("none.csv")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_user_error() {
    assert_eq!(vattr(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(vattr(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_and_evaluate_with_late_fusion() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = toygen(tmp.path(), "corpus");
    let manifest = corpus.join("manifest.csv");
    let runs = tmp.path().join("runs");
    let (lms, lpr) = (runs.join("lms"), runs.join("lpr"));
    ok(&vattr(&[
        "train", "--manifest", s(&manifest), "--arch", "lms", "--epochs", "2", "--seed", "3", "--out", s(&lms),
    ]));
    for f in ["model.vamd", "split.json", "train_log.csv", "train_report.json", "config_echo.json"] {
        assert!(lms.join(f).exists(), "{f}");
    }
    let split = lms.join("split.json");
    ok(&vattr(&[
        "train", "--manifest", s(&manifest), "--split", s(&split), "--arch", "lpr", "--epochs", "1", "--out",
        s(&lpr),
    ]));

    let single = tmp.path().join("single");
    ok(&vattr(&[
        "eval", "--manifest", s(&manifest), "--split", s(&split), "--model", s(&lms.join("model.vamd")), "--out",
        s(&single),
    ]));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(single.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["system"], "LMS-DNN");
    assert!(report["fusion_weights"].is_null());
    assert_eq!(report["train_set_evaluation"], false);

    let fused = tmp.path().join("fused");
    ok(&vattr(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--split",
        s(&split),
        "--model",
        s(&lpr.join("model.vamd")),
        "--model",
        s(&lms.join("model.vamd")),
        "--late-fuse",
        "0.5",
        "0.5",
        "--out",
        s(&fused),
    ]));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fused.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["system"], "LPR+LMS-DNN*");
    assert_eq!(report["fusion_weights"], serde_json::json!([0.5, 0.5]));
    let jsonl = std::fs::read_to_string(fused.join("model0_attention.jsonl")).unwrap();
    assert_eq!(vattr_model::validate_attention_jsonl(&jsonl).unwrap(), report["num_utterances"].as_u64().unwrap() as usize);

    // a saved echo replays the run, with command-line flags taking precedence
    let replay = tmp.path().join("replay");
    ok(&vattr(&["eval", "--config", s(&fused.join("config_echo.json")), "--out", s(&replay)]));
    assert_eq!(
        std::fs::read(fused.join("report.json")).unwrap(),
        std::fs::read(replay.join("report.json")).unwrap()
    );

    let on_train = tmp.path().join("on_train");
    let out = vattr(&[
        "eval", "--manifest", s(&manifest), "--split", s(&split), "--model", s(&lms.join("model.vamd")),
        "--partition", "train", "--out", s(&on_train),
    ]);
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(on_train.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["train_set_evaluation"], true);
    assert!(String::from_utf8_lossy(&out.stdout).contains("WARNING"));

    let out = vattr(&[
        "eval", "--manifest", s(&manifest), "--split", s(&split), "--model", s(&lms.join("model.vamd")),
        "--late-fuse", "0.5", "0.5", "--out", s(&tmp.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
