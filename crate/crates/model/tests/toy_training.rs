use vattr_core::data::toy::{generate_toy_corpus, ToyCorpusConfig, ToyUtterance};
use vattr_core::data::{make_split, Partition, SplitRequest};
use vattr_core::Waveform;
use vattr_model::*;

fn corpus() -> Vec<ToyUtterance> {
    let mut cfg = ToyCorpusConfig::reference();
    cfg.corpus.n_per_class = 10;
    cfg.corpus.duration = 0.6;
    generate_toy_corpus(&cfg, 21).unwrap()
}

fn examples(utts: &[ToyUtterance], ids: &[String], cfg: &ModelConfig) -> Vec<Example> {
    utts.iter()
        .filter(|u| ids.contains(&u.record.utterance_id))
        .map(|u| Example {
            id: u.record.utterance_id.clone(),
            label: u.record.algorithm_class.index(),
            input: prepare_input(&u.waveform, cfg.arch, &cfg.input).unwrap(),
        })
        .collect()
}

fn run(seed: u64) -> (AttributionModel, TrainReport, Vec<Example>) {
    let utts = corpus();
    let records: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
    let split = make_split(&records, &SplitRequest::Cs1, 4).unwrap();
    let cfg = ModelConfig::new(Arch::Lms, seed);
    let train_set = examples(&utts, split.partition(Partition::Train), &cfg);
    let val_set = examples(&utts, split.partition(Partition::Val), &cfg);
    let eval_set = examples(&utts, split.partition(Partition::Eval), &cfg);
    let mut model = AttributionModel::new(cfg).unwrap();
    let tc = TrainConfig {
        epochs: 6,
        seed,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &train_set, &val_set, &tc, |_| {}).unwrap();
    (model, report, eval_set)
}

#[test]
fn training_is_reproducible_and_learns() {
    let (model, a, eval_set) = run(2);
    let (_, b, _) = run(2);
    assert_eq!(a, b);
    let first = a.history[0].train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
    let s = score(&model, &eval_set, 8).unwrap();
    assert!(s.accuracy > 25.0, "eval accuracy {}", s.accuracy);
    let best = &a.history[a.best_epoch - 1];
    let val = a.history.iter().map(|h| h.val_accuracy).fold(0.0, f64::max);
    assert_eq!(best.val_accuracy, val);
}

#[test]
fn checkpoint_restores_identical_inference_and_tone_is_classified() {
    let (model, _, eval_set) = run(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.vamd");
    model.save(&path).unwrap();
    let loaded = AttributionModel::load(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    for e in eval_set.iter().take(4) {
        let (p, q) = (model.predict(&e.input).unwrap(), loaded.predict(&e.input).unwrap());
        assert_eq!(p, q);
    }
    let tone = Waveform::new(
        (0..9600).map(|i| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin()).collect(),
        16000,
    )
    .unwrap();
    let p = loaded.classify(&tone).unwrap();
    assert_eq!(p.logits.len(), 18);
    assert!(p.argmax() < 18);
    assert!(AttributionModel::load(&dir.path().join("missing")).is_err());
}
