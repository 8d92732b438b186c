use vattr_core::data::toy::{generate_toy_corpus, ToyCorpusConfig};
use vattr_core::data::AlgorithmClass;
use vattr_core::features::{detect_pulses, local_jitter, local_shimmer, PulseConfig};
use vattr_core::lp::{lp_residual, EXPERIMENT_LP_ORDER};
use vattr_core::{FrameGrid, Window};

fn small_corpus() -> ToyCorpusConfig {
    let mut cfg = ToyCorpusConfig::reference();
    cfg.corpus.n_per_class = 6;
    cfg
}

/// Frame-averaged `|r[k]| / r[0]` for lags `1..=max_lag`, over frames whose
/// energy of `reference` is at least 1% of its loudest frame.
fn mean_abs_autocorr(x: &[f64], reference: &[f64], max_lag: usize) -> Vec<f64> {
    let grid = FrameGrid::new(400, 160, Window::Rectangular).unwrap();
    let n = grid.num_frames(x.len());
    let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    let ref_e: Vec<f64> = (0..n).map(|i| energy(&reference[i * 160..i * 160 + 400])).collect();
    let loudest = ref_e.iter().cloned().fold(0.0, f64::max);
    let mut acc = vec![0.0; max_lag];
    let mut count = 0;
    for (i, &e) in ref_e.iter().enumerate() {
        if e < 0.01 * loudest {
            continue;
        }
        let f = &x[i * 160..i * 160 + 400];
        let r0 = energy(f);
        for k in 1..=max_lag {
            let rk: f64 = f[..400 - k].iter().zip(&f[k..]).map(|(a, b)| a * b).sum();
            acc[k - 1] += (rk / r0).abs();
        }
        count += 1;
    }
    acc.iter().map(|a| a / count as f64).collect()
}

#[test]
fn residual_is_whiter_than_speech() {
    let corpus = generate_toy_corpus(&small_corpus(), 3).unwrap();
    for u in &corpus {
        let res = lp_residual(&u.waveform, EXPERIMENT_LP_ORDER, 400, 160).unwrap();
        let speech = mean_abs_autocorr(&u.waveform.samples, &u.waveform.samples, EXPERIMENT_LP_ORDER);
        let resid = mean_abs_autocorr(&res.samples, &u.waveform.samples, EXPERIMENT_LP_ORDER);
        // single lags can sit on a zero crossing of the speech autocorrelation,
        // so the comparison is over the whole lag range
        let s: f64 = speech.iter().sum();
        let r: f64 = resid.iter().sum();
        assert!(r < 0.5 * s, "{}: residual {r} vs speech {s}", u.record.utterance_id);
    }
}

#[test]
fn detected_pulses_track_the_excitation() {
    let corpus = generate_toy_corpus(&small_corpus(), 4).unwrap();
    for u in corpus.iter().filter(|u| u.record.algorithm_class != AlgorithmClass::NATURAL) {
        let res = lp_residual(&u.waveform, EXPERIMENT_LP_ORDER, 400, 160).unwrap();
        let found = detect_pulses(&res, &PulseConfig::default()).unwrap();
        let truth = &u.pulses;
        // residual peaks trail the glottal instants by the filter's phase lag
        // of a few samples
        let hits = truth
            .peak_indices()
            .iter()
            .filter(|&&t| found.peak_indices().iter().any(|&f| f.abs_diff(t) <= 4))
            .count();
        assert!(hits * 10 >= truth.len() * 9, "{}: {hits}/{}", u.record.utterance_id, truth.len());
        let jt = local_jitter(truth).unwrap();
        let jf = local_jitter(&found).unwrap();
        assert!((jt - jf).abs() < 1.0, "{}: jitter {jt} vs {jf}", u.record.utterance_id);
    }
}

#[test]
fn perturbation_statistics_order_the_classes() {
    let corpus = generate_toy_corpus(&small_corpus(), 5).unwrap();
    let mean = |class: &str, f: fn(&vattr_core::features::PulseTrain) -> vattr_core::Result<f64>| {
        let class: AlgorithmClass = class.parse().unwrap();
        let v: Vec<f64> = corpus
            .iter()
            .filter(|u| u.record.algorithm_class == class)
            .map(|u| f(&u.pulses).unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean("Natural", local_jitter) > mean("A08", local_jitter));
    assert!(mean("A08", local_jitter) > mean("A01", local_jitter));
    assert!(mean("Natural", local_shimmer) > mean("A01", local_shimmer));
}
