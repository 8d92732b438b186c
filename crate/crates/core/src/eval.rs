//! Attribution metrics: accuracy, generator-grouped confusion, ROC and EER.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{AlgorithmClass, GeneratorFamily};
use crate::error::{Error, Result};

/// Percentage of predictions equal to the truth.
pub fn algorithm_accuracy<L: PartialEq>(predictions: &[L], truths: &[L]) -> Result<f64> {
    check_lengths(predictions.len(), truths.len())?;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / truths.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} predictions but {b} truths")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    Ok(())
}

pub fn parse_labels<S: AsRef<str>>(labels: &[S]) -> Result<Vec<AlgorithmClass>> {
    labels.iter().map(|l| l.as_ref().parse()).collect()
}

/// Per-class accuracy keyed by class label, over classes present in `truths`.
pub fn per_class_accuracy(predictions: &[AlgorithmClass], truths: &[AlgorithmClass]) -> Result<BTreeMap<String, f64>> {
    check_lengths(predictions.len(), truths.len())?;
    let mut tally: BTreeMap<AlgorithmClass, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truths) {
        let e = tally.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(c, (ok, n))| (c.label().to_string(), 100.0 * ok as f64 / n as f64))
        .collect())
}

/// Row-normalized confusion over generator families (row = truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfusion {
    pub families: Vec<GeneratorFamily>,
    pub counts: Vec<Vec<usize>>,
    pub normalized: Vec<Vec<f64>>,
    /// `false` rows had no true samples and are all zero.
    pub supported: Vec<bool>,
}

impl GeneratorConfusion {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for f in &self.families {
            let _ = write!(out, ",{f}");
        }
        out.push_str(",support\n");
        for (i, f) in self.families.iter().enumerate() {
            let _ = write!(out, "{f}");
            for v in &self.normalized[i] {
                let _ = write!(out, ",{v:.6}");
            }
            let support: usize = self.counts[i].iter().sum();
            if self.supported[i] {
                let _ = writeln!(out, ",{support}");
            } else {
                out.push_str(",no support\n");
            }
        }
        out
    }
}

pub fn confusion_by_generator(predictions: &[AlgorithmClass], truths: &[AlgorithmClass]) -> Result<GeneratorConfusion> {
    check_lengths(predictions.len(), truths.len())?;
    let families = GeneratorFamily::ALL.to_vec();
    let n = families.len();
    let mut counts = vec![vec![0usize; n]; n];
    for (p, t) in predictions.iter().zip(truths) {
        counts[t.family().index()][p.family().index()] += 1;
    }
    let mut normalized = vec![vec![0.0; n]; n];
    let mut supported = vec![false; n];
    for i in 0..n {
        let total: usize = counts[i].iter().sum();
        if total > 0 {
            supported[i] = true;
            for j in 0..n {
                normalized[i][j] = counts[i][j] as f64 / total as f64;
            }
        }
    }
    Ok(GeneratorConfusion {
        families,
        counts,
        normalized,
        supported,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called spoof. The first point uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub eer: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.9},{:.9},{}", p.fpr, p.tpr, p.threshold);
        }
        out
    }
}

/// ROC over every distinct score and the equal error rate.
///
/// `is_spoof[i]` marks positives; larger scores mean "more spoof". The EER
/// is where the ROC convex hull crosses `FPR = 1 - TPR`, interpolating
/// linearly between adjacent hull vertices.
pub fn roc_eer(scores: &[f64], is_spoof: &[bool]) -> Result<RocCurve> {
    check_lengths(scores.len(), is_spoof.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = is_spoof.iter().filter(|&&s| s).count();
    let n_neg = is_spoof.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs both spoof and natural examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if is_spoof[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: thr,
        });
    }
    let eer = hull_eer(&points);
    Ok(RocCurve { points, eer })
}

fn hull_eer(points: &[RocPoint]) -> f64 {
    // points are already sorted by fpr then tpr ascending
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in points {
        let q = (p.fpr, p.tpr);
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(q);
    }
    for w in hull.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        let denom = (x2 - x1) + (y2 - y1);
        if denom <= 0.0 {
            continue;
        }
        let t = (1.0 - y1 - x1) / denom;
        if (0.0..=1.0).contains(&t) {
            return x1 + t * (x2 - x1);
        }
    }
    0.5
}

/// Binary spoof score from 18-way logits: `1 - P(Natural)`.
pub fn spoof_score(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let p_nat = (logits[AlgorithmClass::NATURAL.index()] - m).exp() / z;
    1.0 - p_nat
}

/// Everything an evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub partition: String,
    pub train_set_evaluation: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_weights: Option<[f64; 2]>,
    pub num_utterances: usize,
    pub overall_accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion: GeneratorConfusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<RocCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
    pub failures: Vec<String>,
}

impl EvalReport {
    /// Builds the report from per-utterance predictions and 18-way logits.
    pub fn build(
        system: &str,
        partition: &str,
        predictions: &[AlgorithmClass],
        truths: &[AlgorithmClass],
        logits: &[Vec<f64>],
    ) -> Result<Self> {
        let overall_accuracy = algorithm_accuracy(predictions, truths)?;
        let per_class_accuracy = per_class_accuracy(predictions, truths)?;
        let confusion = confusion_by_generator(predictions, truths)?;
        let scores: Vec<f64> = logits.iter().map(|l| spoof_score(l)).collect();
        let spoof: Vec<bool> = truths.iter().map(|t| !t.is_natural()).collect();
        let roc = roc_eer(&scores, &spoof).ok();
        Ok(Self {
            system: system.to_string(),
            partition: partition.to_string(),
            train_set_evaluation: partition == "train",
            fusion_weights: None,
            num_utterances: truths.len(),
            overall_accuracy,
            per_class_accuracy,
            confusion,
            eer: roc.as_ref().map(|r| r.eer),
            roc,
            failures: Vec::new(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system: {}", self.system);
        let _ = writeln!(out, "partition: {}", self.partition);
        if self.train_set_evaluation {
            out.push_str("WARNING: train-set evaluation\n");
        }
        if let Some([a, b]) = self.fusion_weights {
            let _ = writeln!(out, "late fusion weights: {a} {b}");
        }
        let _ = writeln!(out, "utterances: {}", self.num_utterances);
        let _ = writeln!(out, "algorithm accuracy: {:.2}%", self.overall_accuracy);
        for (label, acc) in &self.per_class_accuracy {
            let _ = writeln!(out, "  {label:<8} {acc:6.2}%");
        }
        match self.eer {
            Some(eer) => {
                let _ = writeln!(out, "spoof EER: {eer:.6}");
            }
            None => out.push_str("spoof EER: n/a (single-class partition)\n"),
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "failed utterances: {}", self.failures.join(", "));
        }
        out
    }
}
