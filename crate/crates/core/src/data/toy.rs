//! Controllable source-filter synthesizer for desk-scale ground truth.
//!
//! An impulse train with perturbed periods and amplitudes (optionally mixed
//! with white noise) drives an all-pole formant filter. Each class recipe
//! fixes the excitation statistics and formants; simulated speakers scale
//! the formant frequencies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, UtteranceRecord};
use super::taxonomy::AlgorithmClass;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::features::PulseTrain;
use crate::wav::write_wav;

/// Expected local jitter of i.i.d. `u ~ U[-w, w]` relative perturbations is
/// `100 * E|u_i - u_{i+1}| = 100 * 2w/3` percent, so `w = 1.5 * pct / 100`.
pub fn perturbation_width(target_pct: f64) -> f64 {
    1.5 * target_pct / 100.0
}

/// A resonance given by center frequency and either bandwidth or an explicit
/// pole radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq: f64,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
}

impl Formant {
    pub fn new(freq: f64, bandwidth: f64) -> Self {
        Self {
            freq,
            bandwidth: Some(bandwidth),
            radius: None,
        }
    }

    pub fn pole_radius(&self, sample_rate: u32) -> f64 {
        match (self.radius, self.bandwidth) {
            (Some(r), _) => r,
            (None, Some(bw)) => (-std::f64::consts::PI * bw / sample_rate as f64).exp(),
            (None, None) => 0.0,
        }
    }
}

/// Synthesis recipe for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub class: AlgorithmClass,
    pub sample_rate: u32,
    pub f0: f64,
    pub jitter_pct: f64,
    pub shimmer_pct: f64,
    pub formants: Vec<Formant>,
    /// White-noise standard deviation relative to the nominal pulse amplitude.
    pub noise_mix: f64,
    /// Silence before and after the voiced region, seconds.
    pub silence_pad: f64,
    /// Voiced duration, seconds.
    pub duration: f64,
    pub seed: u64,
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| Err(Error::InvalidArgument(format!("class {}: {why}", self.class)));
        if self.sample_rate == 0 {
            return fail("sample rate must be positive".into());
        }
        if !(self.f0 > 0.0 && self.f0 < self.sample_rate as f64 / 2.0) {
            return fail(format!("f0 {} Hz out of range", self.f0));
        }
        if !(self.jitter_pct >= 0.0 && self.shimmer_pct >= 0.0 && self.noise_mix >= 0.0) {
            return fail("jitter, shimmer and noise mix must be nonnegative".into());
        }
        if perturbation_width(self.jitter_pct) >= 0.5 || perturbation_width(self.shimmer_pct) >= 1.0 {
            return fail("perturbation too large for a pulse train".into());
        }
        if !(self.duration > 0.0 && self.silence_pad >= 0.0) {
            return fail("duration must be positive and padding nonnegative".into());
        }
        for f in &self.formants {
            let r = f.pole_radius(self.sample_rate);
            if !(r > 0.0 && r < 1.0) {
                return fail(format!(
                    "formant at {} Hz has pole radius {r}, must lie strictly inside the unit circle",
                    f.freq
                ));
            }
            if !(f.freq > 0.0 && f.freq < self.sample_rate as f64 / 2.0) {
                return fail(format!("formant frequency {} Hz out of range", f.freq));
            }
        }
        Ok(())
    }

    /// Denominator `1 + d_1 z^-1 + ...` of the all-pole formant filter,
    /// without the leading 1.
    fn denominator(&self) -> Vec<f64> {
        let mut poly = vec![1.0];
        for f in &self.formants {
            let r = f.pole_radius(self.sample_rate);
            let theta = 2.0 * std::f64::consts::PI * f.freq / self.sample_rate as f64;
            let section = [1.0, -2.0 * r * theta.cos(), r * r];
            let mut next = vec![0.0; poly.len() + 2];
            for (i, &p) in poly.iter().enumerate() {
                for (j, &s) in section.iter().enumerate() {
                    next[i + j] += p * s;
                }
            }
            poly = next;
        }
        poly[1..].to_vec()
    }
}

/// Peak level of synthesized utterances.
const OUTPUT_PEAK: f64 = 0.5;

/// Synthesizes one utterance and returns the exact pulses used.
///
/// Periods are `round(fs/f0 * (1 + u_i))` and amplitudes `1 + v_i` with
/// `u, v` uniform, widths from [`perturbation_width`]. Pulse draws come
/// first from the seeded generator, so recipes differing only in formants
/// share their pulse trains. Output is scaled to a fixed peak; the returned
/// amplitudes are the excitation amplitudes before filtering.
pub fn synthesize_toy_utterance(spec: &ToySpec) -> Result<(Waveform, PulseTrain)> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let pad = (spec.silence_pad * fs).round() as usize;
    let voiced = (spec.duration * fs).round() as usize;
    let total = 2 * pad + voiced;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let nominal = fs / spec.f0;
    let jw = perturbation_width(spec.jitter_pct);
    let sw = perturbation_width(spec.shimmer_pct);
    let mut indices = Vec::new();
    let mut amplitudes = Vec::new();
    let mut pos = pad + rng.random_range(0..nominal.round() as usize);
    while pos < pad + voiced {
        indices.push(pos);
        let v: f64 = if sw > 0.0 { rng.random_range(-sw..=sw) } else { 0.0 };
        amplitudes.push(1.0 + v);
        let u: f64 = if jw > 0.0 { rng.random_range(-jw..=jw) } else { 0.0 };
        pos += ((nominal * (1.0 + u)).round() as usize).max(1);
    }

    let mut excitation = vec![0.0; total];
    for (&i, &a) in indices.iter().zip(&amplitudes) {
        excitation[i] = a;
    }
    if spec.noise_mix > 0.0 {
        let normal = Normal::new(0.0, spec.noise_mix).expect("positive std");
        for e in &mut excitation[pad..pad + voiced] {
            *e += normal.sample(&mut rng);
        }
    }

    let den = spec.denominator();
    let mut y = vec![0.0; total];
    for n in 0..total {
        let mut acc = excitation[n];
        for (k, &d) in den.iter().enumerate() {
            if k + 1 > n {
                break;
            }
            acc -= d * y[n - k - 1];
        }
        y[n] = acc;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = OUTPUT_PEAK / peak;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok((Waveform::new(y, spec.sample_rate)?, PulseTrain::new(indices, amplitudes)?))
}

/// Per-class recipe as written in a toy corpus config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecipe {
    pub f0: f64,
    #[serde(default)]
    pub jitter_pct: f64,
    #[serde(default)]
    pub shimmer_pct: f64,
    #[serde(default)]
    pub noise_mix: f64,
    pub formants: Vec<Formant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub duration: f64,
    #[serde(default)]
    pub silence_pad: f64,
    pub n_per_class: usize,
    pub speakers: usize,
    /// Maximum relative formant shift of a simulated speaker.
    #[serde(default = "default_speaker_spread")]
    pub speaker_spread: f64,
}

fn default_rate() -> u32 {
    16000
}

fn default_speaker_spread() -> f64 {
    0.1
}

/// Toy corpus config: a `[corpus]` section plus one `[class.<label>]`
/// section per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCorpusConfig {
    pub corpus: CorpusSection,
    pub class: BTreeMap<String, ClassRecipe>,
}

impl ToyCorpusConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("toy spec: {e}")))?;
        cfg.class_specs()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validated per-class specs, ordered by class index.
    pub fn class_specs(&self) -> Result<Vec<ToySpec>> {
        if self.class.len() < 2 {
            return Err(Error::InvalidArgument("a toy corpus needs at least 2 classes".into()));
        }
        let mut specs = Vec::with_capacity(self.class.len());
        for (label, r) in &self.class {
            let class: AlgorithmClass = label.parse()?;
            let spec = ToySpec {
                class,
                sample_rate: self.corpus.sample_rate,
                f0: r.f0,
                jitter_pct: r.jitter_pct,
                shimmer_pct: r.shimmer_pct,
                formants: r.formants.clone(),
                noise_mix: r.noise_mix,
                silence_pad: self.corpus.silence_pad,
                duration: self.corpus.duration,
                seed: 0,
            };
            spec.validate()?;
            specs.push(spec);
        }
        specs.sort_by_key(|s| s.class);
        if specs.windows(2).any(|w| w[0].class == w[1].class) {
            return Err(Error::InvalidArgument("two class sections name the same merged class".into()));
        }
        Ok(specs)
    }

    /// The four-class corpus used by the desk-scale experiments: one
    /// natural-like class with noisy, strongly perturbed excitation and three
    /// vocoder-like classes.
    pub fn reference() -> Self {
        let vowel = |f: [(f64, f64); 4]| f.iter().map(|&(a, b)| Formant::new(a, b)).collect::<Vec<_>>();
        let mut class = BTreeMap::new();
        class.insert(
            "Natural".to_string(),
            ClassRecipe {
                f0: 118.0,
                jitter_pct: 1.5,
                shimmer_pct: 6.0,
                noise_mix: 0.04,
                formants: vowel([(730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0), (3400.0, 250.0)]),
            },
        );
        class.insert(
            "A01".to_string(),
            ClassRecipe {
                f0: 136.0,
                jitter_pct: 0.05,
                shimmer_pct: 0.5,
                noise_mix: 0.0,
                formants: vowel([(530.0, 60.0), (1840.0, 90.0), (2480.0, 120.0), (3500.0, 200.0)]),
            },
        );
        class.insert(
            "A08".to_string(),
            ClassRecipe {
                f0: 102.0,
                jitter_pct: 0.3,
                shimmer_pct: 2.0,
                noise_mix: 0.01,
                formants: vowel([(660.0, 80.0), (1720.0, 100.0), (2410.0, 150.0), (3300.0, 220.0)]),
            },
        );
        class.insert(
            "A17".to_string(),
            ClassRecipe {
                f0: 154.0,
                jitter_pct: 0.8,
                shimmer_pct: 1.0,
                noise_mix: 0.02,
                formants: vowel([(300.0, 50.0), (870.0, 80.0), (2240.0, 140.0), (3200.0, 210.0)]),
            },
        );
        ToyCorpusConfig {
            corpus: CorpusSection {
                sample_rate: 16000,
                duration: 1.0,
                silence_pad: 0.05,
                n_per_class: 50,
                speakers: 10,
                speaker_spread: 0.1,
            },
            class,
        }
    }
}

/// One generated utterance, kept in memory.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub record: UtteranceRecord,
    pub waveform: Waveform,
    pub pulses: PulseTrain,
}

fn utterance_seed(seed: u64, class: AlgorithmClass, index: usize) -> u64 {
    // splitmix64 over the tuple; decorrelates neighbouring utterances
    let mut z = seed
        ^ (class.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates the corpus in memory. Utterance `i` of each class belongs to
/// speaker `i % speakers`; every speaker scales formants by a fixed factor.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Result<Vec<ToyUtterance>> {
    let specs = cfg.class_specs()?;
    let n_spk = cfg.corpus.speakers.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = cfg.corpus.speaker_spread;
    let factors: Vec<f64> = (0..n_spk)
        .map(|_| 1.0 + if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..cfg.corpus.n_per_class).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(c, i)| {
            let base = &specs[c];
            let speaker = i % n_spk;
            let mut spec = base.clone();
            spec.seed = utterance_seed(seed, base.class, i);
            for f in &mut spec.formants {
                f.freq *= factors[speaker];
            }
            let (waveform, pulses) = synthesize_toy_utterance(&spec)?;
            let id = format!("{}_{i:04}", base.class.slug());
            Ok(ToyUtterance {
                record: UtteranceRecord {
                    audio_path: PathBuf::from("wav").join(format!("{id}.wav")),
                    utterance_id: id,
                    algorithm_class: base.class,
                    speaker_id: format!("spk{speaker:02}"),
                },
                waveform,
                pulses,
            })
        })
        .collect()
}

/// Writes WAVs under `out_dir/wav/` and `out_dir/manifest.csv`.
pub fn build_toy_corpus(cfg: &ToyCorpusConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let out_dir = out_dir.as_ref();
    let utts = generate_toy_corpus(cfg, seed)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    utts.par_iter()
        .map(|u| write_wav(out_dir.join(&u.record.audio_path), &u.waveform))
        .collect::<Result<Vec<()>>>()?;
    let records: Vec<UtteranceRecord> = utts.into_iter().map(|u| u.record).collect();
    write_manifest(out_dir.join("manifest.csv"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{local_jitter, local_shimmer};

    fn spec(jitter: f64, shimmer: f64, seed: u64) -> ToySpec {
        ToySpec {
            class: AlgorithmClass::NATURAL,
            sample_rate: 16000,
            f0: 100.0,
            jitter_pct: jitter,
            shimmer_pct: shimmer,
            formants: vec![Formant::new(700.0, 100.0), Formant::new(1200.0, 120.0)],
            noise_mix: 0.0,
            silence_pad: 0.0,
            duration: 1.0,
            seed,
        }
    }

    #[test]
    fn unperturbed_periods() {
        let (_, p) = synthesize_toy_utterance(&spec(0.0, 0.0, 1)).unwrap();
        assert!(p.periods().iter().all(|&t| t == 160.0));
        assert!(p.peak_amplitudes().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn calibrated_perturbation() {
        let mut s = spec(2.0, 4.0, 9);
        s.duration = 15.0;
        let (_, p) = synthesize_toy_utterance(&s).unwrap();
        assert!(p.len() > 1000);
        let j = local_jitter(&p).unwrap();
        let sh = local_shimmer(&p).unwrap();
        assert!((j - 2.0).abs() < 0.2, "jitter {j}");
        assert!((sh - 4.0).abs() < 0.4, "shimmer {sh}");
    }

    #[test]
    fn pulses_ignore_formants() {
        let a = spec(1.0, 3.0, 5);
        let mut b = a.clone();
        b.formants = vec![Formant::new(400.0, 60.0)];
        b.class = "A01".parse().unwrap();
        let (wa, pa) = synthesize_toy_utterance(&a).unwrap();
        let (wb, pb) = synthesize_toy_utterance(&b).unwrap();
        assert_eq!(pa, pb);
        assert_ne!(wa, wb);
    }

    #[test]
    fn unstable_pole_is_rejected() {
        let mut s = spec(0.0, 0.0, 0);
        s.formants.push(Formant {
            freq: 900.0,
            bandwidth: None,
            radius: Some(1.02),
        });
        let err = synthesize_toy_utterance(&s).unwrap_err().to_string();
        assert!(err.contains("Natural") && err.contains("radius"), "{err}");
    }

    #[test]
    fn config_round_trip() {
        let cfg = ToyCorpusConfig::reference();
        let back = ToyCorpusConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(ToyCorpusConfig::parse("[corpus]\nduration = 1.0\nn_per_class = 3\nspeakers = 1\n[class.A20]\nf0 = 100.0\nformants = []\n[class.A01]\nf0 = 100.0\nformants = []\n").is_err());
    }

    #[test]
    fn corpus_size_and_reproducibility() {
        let mut cfg = ToyCorpusConfig::reference();
        cfg.corpus.n_per_class = 5;
        cfg.corpus.duration = 0.2;
        let a = generate_toy_corpus(&cfg, 42).unwrap();
        let b = generate_toy_corpus(&cfg, 42).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.waveform, y.waveform);
            assert_eq!(x.record, y.record);
        }
    }
}
