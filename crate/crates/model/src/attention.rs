//! Attention maps, their binarization into salient regions, and the JSON
//! lines export.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Maps hidden-frame indices to sample positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    /// Center of frame 0's receptive field, in samples.
    pub first_center: f64,
    /// Samples between consecutive frames.
    pub step: f64,
    pub sample_rate: u32,
}

impl TimeAxis {
    pub fn center(&self, frame: usize) -> f64 {
        self.first_center + frame as f64 * self.step
    }

    /// Frame nearest to sample position `pos`, clamped to `[0, frames)`.
    pub fn nearest(&self, pos: f64, frames: usize) -> usize {
        let k = ((pos - self.first_center) / self.step).round();
        (k.max(0.0) as usize).min(frames.saturating_sub(1))
    }

    /// Seconds spanned by frame `t`: one step wide around its center.
    pub fn span_secs(&self, t: usize) -> (f64, f64) {
        let c = self.center(t);
        let sr = self.sample_rate as f64;
        (((c - self.step / 2.0) / sr).max(0.0), (c + self.step / 2.0) / sr)
    }
}

/// Attention weights of one head for one utterance, `channels x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub head: usize,
    pub channels: usize,
    pub frames: usize,
    pub weights: Vec<f64>,
    pub axis: TimeAxis,
}

impl AttentionMap {
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.weights[channel * self.frames..(channel + 1) * self.frames]
    }

    pub fn channel_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.frames];
        for c in 0..self.channels {
            m.iter_mut().zip(self.row(c)).for_each(|(a, w)| *a += w);
        }
        m.iter_mut().for_each(|v| *v /= self.channels as f64);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedAttention {
    pub mean: Vec<f64>,
    pub mask: Vec<bool>,
    /// Merged runs of selected frames, in seconds.
    pub intervals: Vec<(f64, f64)>,
}

/// Averages over channels and keeps frames strictly above the time mean.
pub fn binarize_attention(map: &AttentionMap) -> BinarizedAttention {
    let mean = map.channel_mean();
    let threshold = mean.iter().sum::<f64>() / mean.len().max(1) as f64;
    let mask: Vec<bool> = mean.iter().map(|&m| m > threshold).collect();
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut t = 0;
    while t < mask.len() {
        if !mask[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < mask.len() && mask[t] {
            t += 1;
        }
        let (s, _) = map.axis.span_secs(start);
        let (_, e) = map.axis.span_secs(t - 1);
        intervals.push((s, e));
    }
    BinarizedAttention { mean, mask, intervals }
}

/// One exported line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionRecord {
    pub utterance_id: String,
    pub head: usize,
    pub mean_attention: Vec<f64>,
    pub mask: Vec<bool>,
    pub intervals: Vec<[f64; 2]>,
}

impl AttentionRecord {
    pub fn new(utterance_id: &str, map: &AttentionMap) -> Self {
        let b = binarize_attention(map);
        Self {
            utterance_id: utterance_id.to_string(),
            head: map.head,
            mean_attention: b.mean,
            mask: b.mask,
            intervals: b.intervals.into_iter().map(|(s, e)| [s, e]).collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Structural checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Attention(format!("{}: {m}", self.utterance_id)));
        if self.utterance_id.is_empty() {
            return fail("empty utterance id".into());
        }
        if self.mean_attention.is_empty() || self.mean_attention.len() != self.mask.len() {
            return fail("mask and mean attention lengths differ or are empty".into());
        }
        if self.mean_attention.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("mean attention must be finite and nonnegative".into());
        }
        let threshold = self.mean_attention.iter().sum::<f64>() / self.mean_attention.len() as f64;
        if self.mean_attention.iter().zip(&self.mask).any(|(&m, &k)| (m > threshold) != k) {
            return fail("mask disagrees with the mean-over-time threshold".into());
        }
        let runs = self.mask.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(self.mask[0]);
        if runs != self.intervals.len() {
            return fail(format!("{} selected runs but {} intervals", runs, self.intervals.len()));
        }
        let mut prev_end = 0.0;
        for &[s, e] in &self.intervals {
            if !(s.is_finite() && e.is_finite()) || s < prev_end || e <= s {
                return fail(format!("interval [{s}, {e}] is not ordered and disjoint"));
            }
            prev_end = e;
        }
        Ok(())
    }
}

/// Parses and validates a JSON lines export; returns the record count.
pub fn validate_attention_jsonl(text: &str) -> Result<usize> {
    let mut n = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: AttentionRecord = serde_json::from_str(line)
            .map_err(|e| ModelError::Attention(format!("line {}: {e}", i + 1)))?;
        rec.validate()?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis() -> TimeAxis {
        TimeAxis {
            first_center: 1079.5,
            step: 64.0,
            sample_rate: 16000,
        }
    }

    fn map(weights: Vec<f64>, channels: usize) -> AttentionMap {
        let frames = weights.len() / channels;
        AttentionMap {
            head: 0,
            channels,
            frames,
            weights,
            axis: axis(),
        }
    }

    #[test]
    fn uniform_attention_selects_nothing() {
        let b = binarize_attention(&map(vec![0.25; 8], 2));
        assert_eq!(b.mask, vec![false; 4]);
        assert!(b.intervals.is_empty());
    }

    #[test]
    fn dominant_frame_is_selected_alone() {
        let w = vec![0.01, 0.97, 0.01, 0.01, 0.02, 0.94, 0.02, 0.02];
        let b = binarize_attention(&map(w, 2));
        assert_eq!(b.mask, vec![false, true, false, false]);
        assert_eq!(b.mask.len(), 4);
        let (s, e) = b.intervals[0];
        assert!((s - (1079.5 + 32.0) / 16000.0).abs() < 1e-12);
        assert!((e - (1079.5 + 96.0) / 16000.0).abs() < 1e-12);
    }

    #[test]
    fn records_round_trip_and_validate() {
        let w = vec![0.1, 0.3, 0.3, 0.1, 0.2];
        let rec = AttentionRecord::new("u1", &map(w, 1));
        assert_eq!(rec.intervals.len(), 1);
        let text = format!("{}\n{}\n", rec.to_json_line(), rec.to_json_line());
        assert_eq!(validate_attention_jsonl(&text).unwrap(), 2);
        let mut broken = rec.clone();
        broken.mask[0] = true;
        assert!(broken.validate().is_err());
        assert!(validate_attention_jsonl("{\"utterance_id\":\"x\"}").is_err());
        let extra = rec.to_json_line().replace('}', ",\"z\":1}");
        assert!(validate_attention_jsonl(&extra).is_err());
    }

    #[test]
    fn nearest_frame_clamps() {
        let a = axis();
        assert_eq!(a.nearest(0.0, 10), 0);
        assert_eq!(a.nearest(a.center(3) + 20.0, 10), 3);
        assert_eq!(a.nearest(a.center(3) + 40.0, 10), 4);
        assert_eq!(a.nearest(1e9, 10), 9);
    }
}
