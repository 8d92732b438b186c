//! Train/validation/evaluation partitions.
//!
//! CS1 spreads every class 40/10/50 over the three partitions. CS2 holds out
//! evaluation speakers entirely; train and validation share only a declared
//! set of common speakers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::UtteranceRecord;
use super::taxonomy::AlgorithmClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Cs1,
    Cs2,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Eval,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" | "validation" => Ok(Partition::Val),
            "eval" | "evaluation" => Ok(Partition::Eval),
            other => Err(Error::InvalidArgument(format!("unknown partition {other:?}"))),
        }
    }
}

/// How to build a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitRequest {
    Cs1,
    Cs2 {
        /// Speakers whose utterances appear in both train and validation.
        common_speakers: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: SplitName,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub eval: Vec<String>,
    /// Evaluation speakers never occur in train or validation.
    pub speaker_disjoint_eval: bool,
    /// Speakers shared by train and validation (CS2 only).
    pub common_speakers: Vec<String>,
}

impl SplitSpec {
    pub fn partition(&self, p: Partition) -> &[String] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Eval => &self.eval,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub fn make_split(records: &[UtteranceRecord], request: &SplitRequest, seed: u64) -> Result<SplitSpec> {
    let mut by_class: BTreeMap<AlgorithmClass, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.algorithm_class).or_default().push(r);
    }
    for (class, recs) in &by_class {
        if recs.len() < 3 {
            return Err(Error::InfeasibleSplit(format!(
                "class {class} has {} utterances, need at least 3",
                recs.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = match request {
        SplitRequest::Cs1 => cs1(&by_class, &mut rng, seed),
        SplitRequest::Cs2 { common_speakers } => cs2(records, &by_class, *common_speakers, &mut rng, seed)?,
    };
    spec.train.sort();
    spec.val.sort();
    spec.eval.sort();
    Ok(spec)
}

fn cs1(
    by_class: &BTreeMap<AlgorithmClass, Vec<&UtteranceRecord>>,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> SplitSpec {
    let mut spec = SplitSpec {
        name: SplitName::Cs1,
        seed,
        train: Vec::new(),
        val: Vec::new(),
        eval: Vec::new(),
        speaker_disjoint_eval: false,
        common_speakers: Vec::new(),
    };
    for recs in by_class.values() {
        let mut ids: Vec<&str> = recs.iter().map(|r| r.utterance_id.as_str()).collect();
        ids.sort_unstable();
        ids.shuffle(rng);
        let n = ids.len();
        let n_train = ((0.4 * n as f64).round() as usize).max(1);
        let n_val = ((0.1 * n as f64).round() as usize).max(1);
        spec.train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        spec.val.extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        spec.eval.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    spec
}

fn cs2(
    records: &[UtteranceRecord],
    by_class: &BTreeMap<AlgorithmClass, Vec<&UtteranceRecord>>,
    n_common: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<SplitSpec> {
    let mut speakers: Vec<&str> = records
        .iter()
        .map(|r| r.speaker_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() < 3 {
        return Err(Error::InfeasibleSplit(format!(
            "speaker-disjoint split needs at least 3 speakers, found {}",
            speakers.len()
        )));
    }
    if n_common + 2 > speakers.len() {
        return Err(Error::InfeasibleSplit(format!(
            "{n_common} common speakers leave no room for evaluation and training speakers among {}",
            speakers.len()
        )));
    }
    speakers.shuffle(rng);
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *count.entry(r.speaker_id.as_str()).or_default() += 1;
    }

    // Evaluation speakers until about half of the utterances are held out.
    let total = records.len();
    let mut eval_spk = BTreeSet::new();
    let mut held = 0;
    for &s in &speakers {
        if held * 2 >= total || speakers.len() - eval_spk.len() <= n_common + 1 {
            break;
        }
        eval_spk.insert(s);
        held += count[s];
    }
    let rest: Vec<&str> = speakers.iter().copied().filter(|s| !eval_spk.contains(s)).collect();
    let common: BTreeSet<&str> = rest[..n_common].iter().copied().collect();
    let exclusive = &rest[n_common..];
    // Two thirds of the exclusive speakers train, the rest validate; with
    // no common speakers validation needs at least one of its own.
    let mut n_val_only = exclusive.len() / 3;
    if n_common == 0 {
        n_val_only = n_val_only.max(1);
    }
    if exclusive.len() <= n_val_only {
        n_val_only = exclusive.len().saturating_sub(1);
    }
    let val_only: BTreeSet<&str> = exclusive[exclusive.len() - n_val_only..].iter().copied().collect();

    let mut spec = SplitSpec {
        name: SplitName::Cs2,
        seed,
        train: Vec::new(),
        val: Vec::new(),
        eval: Vec::new(),
        speaker_disjoint_eval: true,
        common_speakers: common.iter().map(|s| s.to_string()).collect(),
    };
    for recs in by_class.values() {
        let mut common_recs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in recs {
            let spk = r.speaker_id.as_str();
            let id = r.utterance_id.clone();
            if eval_spk.contains(spk) {
                spec.eval.push(id);
            } else if val_only.contains(spk) {
                spec.val.push(id);
            } else if common.contains(spk) {
                common_recs.entry(spk).or_default().push(r.utterance_id.as_str());
            } else {
                spec.train.push(id);
            }
        }
        for ids in common_recs.values_mut() {
            ids.sort_unstable();
            ids.shuffle(rng);
            let n_train = (2 * ids.len()).div_ceil(3).min(ids.len().saturating_sub(1)).max(1);
            spec.train.extend(ids[..n_train.min(ids.len())].iter().map(|s| s.to_string()));
            spec.val.extend(ids[n_train.min(ids.len())..].iter().map(|s| s.to_string()));
        }
    }

    let class_of: BTreeMap<&str, AlgorithmClass> = records
        .iter()
        .map(|r| (r.utterance_id.as_str(), r.algorithm_class))
        .collect();
    for (name, part) in [("train", &spec.train), ("validation", &spec.val), ("evaluation", &spec.eval)] {
        let covered: BTreeSet<AlgorithmClass> = part.iter().map(|id| class_of[id.as_str()]).collect();
        if let Some(missing) = by_class.keys().find(|c| !covered.contains(c)) {
            return Err(Error::InfeasibleSplit(format!(
                "speaker-disjoint {name} partition has no utterances of class {missing}"
            )));
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(classes: &[&str], per_class: usize, speakers: usize) -> Vec<UtteranceRecord> {
        let mut out = Vec::new();
        for c in classes {
            let class: AlgorithmClass = c.parse().unwrap();
            for i in 0..per_class {
                out.push(UtteranceRecord {
                    utterance_id: format!("{}_{i:04}", class.slug()),
                    audio_path: format!("{i}.wav").into(),
                    algorithm_class: class,
                    speaker_id: format!("spk{:02}", i % speakers),
                });
            }
        }
        out
    }

    fn count(ids: &[String], prefix: &str) -> usize {
        ids.iter().filter(|s| s.starts_with(prefix)).count()
    }

    #[test]
    fn cs1_exact_proportions() {
        let recs = corpus(&["A01", "A02", "Natural"], 100, 5);
        let s = make_split(&recs, &SplitRequest::Cs1, 3).unwrap();
        for p in ["A01_", "A02_", "Natural_"] {
            assert_eq!(count(&s.train, p), 40);
            assert_eq!(count(&s.val, p), 10);
            assert_eq!(count(&s.eval, p), 50);
        }
        assert_eq!(s, make_split(&recs, &SplitRequest::Cs1, 3).unwrap());
        assert_ne!(s, make_split(&recs, &SplitRequest::Cs1, 4).unwrap());
    }

    #[test]
    fn cs1_small_classes_cover_all_partitions() {
        let recs = corpus(&["A01", "A02"], 3, 2);
        let s = make_split(&recs, &SplitRequest::Cs1, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.eval.len()), (2, 2, 2));
        assert!(make_split(&corpus(&["A01"], 2, 2), &SplitRequest::Cs1, 0).is_err());
    }

    #[test]
    fn cs2_is_speaker_disjoint() {
        let recs = corpus(&["A01", "A08", "A17", "Natural"], 50, 10);
        let s = make_split(&recs, &SplitRequest::Cs2 { common_speakers: 2 }, 11).unwrap();
        let spk: BTreeMap<&str, &str> = recs
            .iter()
            .map(|r| (r.utterance_id.as_str(), r.speaker_id.as_str()))
            .collect();
        let set = |ids: &[String]| ids.iter().map(|i| spk[i.as_str()]).collect::<BTreeSet<_>>();
        let (tr, va, ev) = (set(&s.train), set(&s.val), set(&s.eval));
        assert!(ev.is_disjoint(&tr) && ev.is_disjoint(&va));
        let shared: Vec<String> = tr.intersection(&va).map(|s| s.to_string()).collect();
        assert_eq!(shared, s.common_speakers);
        assert_eq!(shared.len(), 2);
    }

    #[test]
    fn cs2_infeasible() {
        let recs = corpus(&["A01", "A02"], 10, 2);
        assert!(matches!(
            make_split(&recs, &SplitRequest::Cs2 { common_speakers: 0 }, 0),
            Err(Error::InfeasibleSplit(_))
        ));
        // speaker k only ever produces class k: no partition can hold every class
        let mut recs = corpus(&["A01", "A02", "A03"], 6, 1);
        for r in &mut recs {
            r.speaker_id = r.algorithm_class.label().to_string();
        }
        assert!(make_split(&recs, &SplitRequest::Cs2 { common_speakers: 0 }, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn splits_partition_the_corpus(per_class in 3usize..40, speakers in 3usize..8, seed in any::<u64>(), cs2 in any::<bool>()) {
            let recs = corpus(&["A01", "A10", "Natural"], per_class, speakers);
            let req = if cs2 { SplitRequest::Cs2 { common_speakers: 1 } } else { SplitRequest::Cs1 };
            if let Ok(s) = make_split(&recs, &req, seed) {
                let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.eval).cloned().collect();
                all.sort();
                let mut expect: Vec<String> = recs.iter().map(|r| r.utterance_id.clone()).collect();
                expect.sort();
                prop_assert_eq!(all, expect);
            } else {
                prop_assert!(cs2);
            }
        }
    }
}
