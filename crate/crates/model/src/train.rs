use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vattr_nn::{Adam, Graph};

use crate::error::{ModelError, Result};
use crate::input::{Batch, ModelInput};
use crate::network::{argmax, AttributionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Drives shuffling and dropout.
    pub seed: u64,
    /// Stop once validation accuracy has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: vattr_nn::optim::DEFAULT_LEARNING_RATE,
            seed: 0,
            patience: None,
        }
    }
}

/// A labelled training or evaluation item.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub input: ModelInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    /// 1-based epoch whose parameters the model holds afterwards.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub loss: f64,
    pub accuracy: f64,
}

fn batch_of<'a>(examples: &'a [Example], idx: &[usize]) -> (Vec<&'a ModelInput>, Vec<usize>) {
    idx.iter().map(|&i| (&examples[i].input, examples[i].label)).unzip()
}

fn correct(logits: &[f32], classes: usize, labels: &[usize]) -> usize {
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()) == l)
        .count()
}

/// Mean loss and accuracy (percent) in inference mode.
pub fn score(model: &AttributionModel, examples: &[Example], batch_size: usize) -> Result<Scores> {
    if examples.is_empty() {
        return Err(ModelError::MissingInput("nothing to score".into()));
    }
    let order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut loss_sum, mut hits) = (0.0, 0);
    for idx in order.chunks(batch_size.max(1)) {
        let (inputs, labels) = batch_of(examples, idx);
        let batch = Batch::collate(&inputs, model.arch())?;
        let mut g = Graph::new(false);
        let out = model.forward(&mut g, &batch, &mut rng)?;
        let loss = g.cross_entropy(out.logits, &labels)?;
        loss_sum += g.value(loss).data()[0] as f64 * idx.len() as f64;
        hits += correct(g.value(out.logits).data(), model.config().num_classes, &labels);
    }
    Ok(Scores {
        loss: loss_sum / examples.len() as f64,
        accuracy: 100.0 * hits as f64 / examples.len() as f64,
    })
}

/// Adam training with per-epoch validation. The model ends up holding the
/// parameters of the epoch with the best validation accuracy (ties go to
/// the lower validation loss).
pub fn train(
    model: &mut AttributionModel,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::MissingInput("training and validation sets must be nonempty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(ModelError::Config("epochs, batch size and learning rate must be positive".into()));
    }
    let classes = model.config().num_classes;
    if let Some(bad) = train_set.iter().chain(val_set).find(|e| e.label >= classes) {
        return Err(ModelError::Config(format!("{}: label {} out of range", bad.id, bad.label)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut best_params = model.params().clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let (inputs, labels) = batch_of(train_set, idx);
            let batch = Batch::collate(&inputs, model.arch())?;
            let mut g = Graph::new(true);
            let out = model.forward(&mut g, &batch, &mut rng)?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(ModelError::NonFinite(format!("training loss became {lv} in epoch {epoch}")));
            }
            loss_sum += lv * idx.len() as f64;
            hits += correct(g.value(out.logits).data(), classes, &labels);
            g.backward(loss)?;
            model.params_mut().zero_grads();
            g.accumulate_param_grads(model.params_mut());
            adam.step(model.params_mut());
        }
        let val = score(model, val_set, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: 100.0 * hits as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        on_epoch(&log);
        history.push(log);
        let improved = best.is_none_or(|(_, acc, loss)| val.accuracy > acc || (val.accuracy == acc && val.loss < loss));
        if improved {
            best = Some((epoch, val.accuracy, val.loss));
            best_params = model.params().clone();
        }
        if let (Some(p), Some((b, _, _))) = (cfg.patience, best) {
            if epoch - b >= p {
                break;
            }
        }
    }
    model.set_params(&best_params)?;
    Ok(TrainReport {
        history,
        best_epoch: best.map_or(0, |b| b.0),
    })
}
