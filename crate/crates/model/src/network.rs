use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vattr_core::features::FeatureKind;
use vattr_core::{FeatureMatrix, FrameGrid, Matrix, ResidualSignal, Waveform, Window};
use vattr_nn::checkpoint::{load_checkpoint, restore_params, save_checkpoint};
use vattr_nn::{Conv1d, Dense, Graph, LayerNorm, ParamStore, Tensor, Var};

use crate::attention::{AttentionMap, TimeAxis};
use crate::config::{Arch, BlockSpec, ModelConfig};
use crate::error::{ModelError, Result};
use crate::input::{prepare_input, Batch, ModelInput, Padded};

#[derive(Debug, Clone)]
struct Block {
    conv: Conv1d,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct Head {
    encoder: Conv1d,
    decoder: Conv1d,
}

/// Frame encoder(s), attentive statistics pooling and segment classifier.
#[derive(Debug, Clone)]
pub struct AttributionModel {
    config: ModelConfig,
    store: ParamStore<f32>,
    front_end: Vec<Block>,
    lpr_encoder: Vec<Block>,
    lms_encoder: Vec<Block>,
    heads: Vec<Head>,
    segment_hidden: Dense,
    segment_out: Dense,
}

/// Handles into a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub embedding: Var,
    /// `[B, d, T']` per head.
    pub attention: Vec<Var>,
    /// Pooled hidden `[B, d, T']`.
    pub hidden: Var,
    pub lpr_hidden: Option<Var>,
    pub lms_hidden: Option<Var>,
    /// Valid hidden frames per item.
    pub lengths: Vec<usize>,
    pub axis: TimeAxis,
}

/// Inference result for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
    pub attention: Vec<AttentionMap>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn build_blocks(
    store: &mut ParamStore<f32>,
    prefix: &str,
    mut in_channels: usize,
    specs: &[BlockSpec],
    rng: &mut ChaCha8Rng,
) -> Vec<Block> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!("{prefix}.{i}");
            let conv = Conv1d::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                s.out_channels,
                s.kernel,
                s.stride,
                s.dilation,
                rng,
            );
            let norm = LayerNorm::new(store, &format!("{name}.norm"), s.out_channels);
            in_channels = s.out_channels;
            Block { conv, norm }
        })
        .collect()
}

impl AttributionModel {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (mut front_end, mut lpr_encoder, mut lms_encoder) = (Vec::new(), Vec::new(), Vec::new());
        if config.arch.uses_residual() {
            front_end = build_blocks(&mut store, "front_end", 1, &config.front_end, &mut rng);
            let fe_out = config.front_end.last().unwrap().out_channels;
            lpr_encoder = build_blocks(&mut store, "lpr_encoder", fe_out, &config.lpr_encoder, &mut rng);
        }
        if config.arch.uses_logmel() {
            lms_encoder = build_blocks(&mut store, "lms_encoder", config.input.n_mels, &config.lms_encoder, &mut rng);
        }
        let d = config.fused_hidden();
        let heads = (0..config.num_heads)
            .map(|h| Head {
                encoder: Conv1d::new(&mut store, &format!("head.{h}.encoder"), d, config.bottleneck, 1, 1, 1, &mut rng),
                decoder: Conv1d::new(&mut store, &format!("head.{h}.decoder"), config.bottleneck, d, 1, 1, 1, &mut rng),
            })
            .collect();
        let segment_hidden = Dense::new(&mut store, "segment.0", config.embedding_dim(), config.segment_hidden, &mut rng);
        let segment_out = Dense::new(&mut store, "segment.1", config.segment_hidden, config.num_classes, &mut rng);
        Ok(Self {
            config,
            store,
            front_end,
            lpr_encoder,
            lms_encoder,
            heads,
            segment_hidden,
            segment_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(path, &self.config.to_json(), &self.store)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (echo, params) = load_checkpoint(path)?;
        let config = ModelConfig::from_json(&echo)?;
        let mut model = Self::new(config)?;
        restore_params(&mut model.store, &params)?;
        Ok(model)
    }

    /// Frame axis of the residual branch output.
    pub fn lpr_axis(&self) -> TimeAxis {
        let (rf, stride) = self.config.lpr_receptive_field();
        TimeAxis {
            first_center: (rf as f64 - 1.0) / 2.0,
            step: stride as f64,
            sample_rate: self.config.input.sample_rate,
        }
    }

    /// Frame axis of the log-mel branch output, in samples.
    pub fn lms_axis(&self) -> TimeAxis {
        let (rf, stride) = self.config.lms_receptive_field_frames();
        let hop = self.config.input.mel_hop as f64;
        let last_start = (rf - 1) as f64 * hop;
        TimeAxis {
            first_center: (last_start + self.config.input.mel_frame as f64 - 1.0) / 2.0,
            step: stride as f64 * hop,
            sample_rate: self.config.input.sample_rate,
        }
    }

    fn run_blocks(
        &self,
        g: &mut Graph<f32>,
        blocks: &[Block],
        mut x: Var,
        mut lengths: Vec<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Vec<usize>)> {
        for b in blocks {
            let y = b.conv.forward(g, &self.store, x)?;
            let y = g.relu(y);
            let y = g.dropout(y, self.config.dropout, rng)?;
            x = b.norm.forward(g, &self.store, y)?;
            lengths = lengths.iter().map(|&t| b.conv.output_len(t).unwrap_or(0)).collect();
        }
        Ok((x, lengths))
    }

    fn branch(
        &self,
        g: &mut Graph<f32>,
        padded: &Padded,
        blocks: &[&[Block]],
        min_len: usize,
        what: &'static str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Vec<usize>)> {
        if let Some(&got) = padded.lengths.iter().min() {
            if got < min_len {
                return Err(ModelError::TooShort {
                    what,
                    needed: min_len,
                    got,
                });
            }
        }
        let mut x = g.input(padded.tensor.clone());
        let mut lengths = padded.lengths.clone();
        for stack in blocks {
            (x, lengths) = self.run_blocks(g, stack, x, lengths, rng)?;
        }
        Ok((x, lengths))
    }

    /// Builds the forward pass for a batch. `rng` drives dropout when `g`
    /// is in training mode.
    pub fn forward(&self, g: &mut Graph<f32>, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<ForwardOutput> {
        let lpr = match &batch.residual {
            Some(p) if self.config.arch.uses_residual() => {
                let (rf, _) = self.config.lpr_receptive_field();
                Some(self.branch(g, p, &[&self.front_end, &self.lpr_encoder], rf, "residual (samples)", rng)?)
            }
            _ => None,
        };
        let lms = match &batch.logmel {
            Some(p) if self.config.arch.uses_logmel() => {
                let (rf, _) = self.config.lms_receptive_field_frames();
                Some(self.branch(g, p, &[&self.lms_encoder], rf, "log-mel input (frames)", rng)?)
            }
            _ => None,
        };
        let (hidden, lengths, axis) = match (self.config.arch, &lpr, &lms) {
            (Arch::Lpr, Some((h, l)), _) => (*h, l.clone(), self.lpr_axis()),
            (Arch::Lms, _, Some((h, l))) => (*h, l.clone(), self.lms_axis()),
            (Arch::FuseIntermediate, Some((hl, ll)), Some((hm, lm))) => {
                let (h, l) = self.align_and_concat(g, (*hl, ll), (*hm, lm))?;
                (h, l, self.lpr_axis())
            }
            (arch, _, _) => return Err(ModelError::MissingInput(format!("batch lacks inputs for {arch}"))),
        };
        if let Some(&t) = lengths.iter().min() {
            if t < 2 {
                return Err(ModelError::TooShort {
                    what: "hidden sequence for attentive pooling (frames)",
                    needed: 2,
                    got: t,
                });
            }
        }
        let mut pooled = Vec::with_capacity(2 * self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let e = head.encoder.forward(g, &self.store, hidden)?;
            let e = g.relu(e);
            let scores = head.decoder.forward(g, &self.store, e)?;
            let a = g.softmax_time(scores, Some(&lengths))?;
            let (mean, var) = attentive_statistics(g, hidden, a)?;
            pooled.push(mean);
            pooled.push(var);
            attention.push(a);
        }
        let embedding = g.concat(&pooled)?;
        let z = self.segment_hidden.forward(g, &self.store, embedding)?;
        let z = g.relu(z);
        let logits = self.segment_out.forward(g, &self.store, z)?;
        if !g.value(logits).is_finite() {
            return Err(ModelError::NonFinite("logits contain NaN or infinity".into()));
        }
        Ok(ForwardOutput {
            logits,
            embedding,
            attention,
            hidden,
            lpr_hidden: lpr.map(|(h, _)| h),
            lms_hidden: lms.map(|(h, _)| h),
            lengths,
            axis,
        })
    }

    /// Resamples the coarser branch onto the finer branch's frames by
    /// nearest center and concatenates channels (residual branch first).
    fn align_and_concat(
        &self,
        g: &mut Graph<f32>,
        lpr: (Var, &[usize]),
        lms: (Var, &[usize]),
    ) -> Result<(Var, Vec<usize>)> {
        let (la, ma) = (self.lpr_axis(), self.lms_axis());
        let lpr_is_finer = la.step <= ma.step;
        let (fine, coarse, fine_axis, coarse_axis) = if lpr_is_finer { (lpr, lms, la, ma) } else { (lms, lpr, ma, la) };
        let t_fine = g.value(fine.0).shape()[2];
        let t_coarse = g.value(coarse.0).shape()[2];
        if coarse.1.iter().chain(fine.1).any(|&t| t == 0) {
            return Err(ModelError::MissingInput("one branch produced no frames to align".into()));
        }
        let idx: Vec<usize> = (0..t_fine).map(|j| coarse_axis.nearest(fine_axis.center(j), t_coarse)).collect();
        let aligned = g.gather_time(coarse.0, &idx)?;
        // idx is nondecreasing, so each item's usable frames form a prefix
        let lengths = fine
            .1
            .iter()
            .zip(coarse.1)
            .map(|(&tf, &tc)| idx[..tf].iter().take_while(|&&k| k < tc).count())
            .collect();
        let parts = if lpr_is_finer { [fine.0, aligned] } else { [aligned, fine.0] };
        Ok((g.concat(&parts)?, lengths))
    }

    /// Deterministic inference on one utterance.
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        let batch = Batch::collate(&[input], self.config.arch)?;
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, &batch, &mut rng)?;
        let to64 = |v: Var| g.value(v).data().iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let frames = out.lengths[0];
        let attention = out
            .attention
            .iter()
            .enumerate()
            .map(|(head, &a)| {
                let t = g.value(a);
                let (d, t_pad) = (t.shape()[1], t.shape()[2]);
                let weights = t
                    .data()
                    .chunks(t_pad)
                    .flat_map(|row| row[..frames].iter().map(|&w| w as f64))
                    .collect();
                AttentionMap {
                    head,
                    channels: d,
                    frames,
                    weights,
                    axis: out.axis,
                }
            })
            .collect();
        Ok(Prediction {
            logits: to64(out.logits),
            embedding: to64(out.embedding),
            attention,
        })
    }

    /// Feature preparation plus [`Self::predict`].
    pub fn classify(&self, w: &Waveform) -> Result<Prediction> {
        let input = prepare_input(w, self.config.arch, &self.config.input)?;
        self.predict(&input)
    }

    /// Receptive field and stride of the front end alone, in samples.
    pub fn front_end_receptive_field(&self) -> (usize, usize) {
        let layers: Vec<_> = self.config.front_end.iter().map(BlockSpec::layer).collect();
        vattr_nn::effective_receptive_field(&layers).unwrap_or((1, 1))
    }

    /// Front end applied to an already prepared `[1, T]` input; returns
    /// `[channels, frames]`.
    pub fn front_end_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if !self.config.arch.uses_residual() {
            return Err(ModelError::Config(format!("{} has no residual front end", self.config.arch)));
        }
        let input = ModelInput {
            residual: Some(x.clone()),
            logmel: None,
        };
        let padded = Batch::collate(&[&input], Arch::Lpr)?.residual.unwrap();
        let (rf, _) = self.front_end_receptive_field();
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, _) = self.branch(&mut g, &padded, &[&self.front_end], rf, "residual (samples)", &mut rng)?;
        let t = g.value(h);
        Ok(Tensor::new(&t.shape()[1..], t.data().to_vec())?)
    }

    /// Output of the learned residual front end, `64 x T`.
    pub fn front_end_features(&self, residual: &ResidualSignal) -> Result<FeatureMatrix> {
        let input = ModelInput::from_parts(Some(residual), None);
        let t = self.front_end_tensor(input.residual.as_ref().unwrap())?;
        let (rf, stride) = self.front_end_receptive_field();
        let data = Matrix::from_vec(t.shape()[0], t.shape()[1], t.data().iter().map(|&v| v as f64).collect())?;
        Ok(FeatureMatrix {
            data,
            kind: FeatureKind::LearnedResidual,
            frame_grid: FrameGrid::new(rf, stride, Window::Rectangular)?,
        })
    }

    /// Replaces all parameters with a snapshot taken from [`Self::params`].
    pub fn set_params(&mut self, snapshot: &ParamStore<f32>) -> Result<()> {
        for id in self.store.ids() {
            let v: &Tensor<f32> = snapshot.value(id);
            if v.shape() != self.store.value(id).shape() {
                return Err(ModelError::Config("parameter snapshot does not fit this model".into()));
            }
            *self.store.value_mut(id) = v.clone();
        }
        Ok(())
    }
}

/// Attention-weighted mean and variance over time of `hidden: [B, d, T]`
/// given weights `attention` of the same shape; each is `[B, d]`.
pub fn attentive_statistics(g: &mut Graph<f32>, hidden: Var, attention: Var) -> Result<(Var, Var)> {
    let weighted = g.mul(attention, hidden)?;
    let mean = g.sum_time(weighted)?;
    let centred = g.sub_time(hidden, mean)?;
    let sq = g.mul(centred, centred)?;
    let wsq = g.mul(attention, sq)?;
    // a convex combination of squares, so never negative
    let var = g.sum_time(wsq)?;
    Ok((mean, var))
}

/// Equal-length weighted average of two logit vectors.
pub fn late_fuse(a: &[f64], b: &[f64], weights: [f64; 2]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(ModelError::Config(format!("cannot fuse {} logits with {}", a.len(), b.len())));
    }
    let [wa, wb] = weights;
    if wa < 0.0 || wb < 0.0 || ((wa + wb) - 1.0).abs() > 1e-9 {
        return Err(ModelError::Config(format!(
            "fusion weights {wa}, {wb} must be nonnegative and sum to 1"
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}
