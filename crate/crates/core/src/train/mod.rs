//! Training loop, evaluation, optimizers and checkpoints.

mod checkpoint;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{extract_patches, DatasetManifest, SamplePair, Split};
use crate::error::{Error, Result};
use crate::metrics::{bce_loss, dice_coefficient, soft_dice_loss, threshold, BinaryMask, EvalReport, DEFAULT_SMOOTH};
use crate::tensor::Tensor;
use crate::unet::UNetModel;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, MAGIC, VERSION,
};
pub use optim::{clip_grad_norm, optimizer_step, OptimState, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    /// Soft DICE plus BCE, equally weighted.
    DicePlusBce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    FullImage,
    Patch { patch: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub loss: LossKind,
    pub mode: TrainMode,
    pub seed: u64,
    /// Probability threshold for validation DICE.
    pub threshold: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            batch_size: 1,
            loss: LossKind::DicePlusBce,
            mode: TrainMode::FullImage,
            seed: 0,
            threshold: 0.5,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    /// `learning_rate` may be zero (a null update); everything else must be
    /// strictly positive.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("gradient clip norm must be positive"));
            }
        }
        let ok = match self.optimizer {
            OptimizerKind::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if !ok {
            return Err(Error::config("optimizer hyperparameters out of range"));
        }
        if let TrainMode::Patch { patch, stride } = self.mode {
            if patch == 0 || stride == 0 {
                return Err(Error::config("patch size and stride must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation split.
    pub val_mean_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub per_epoch: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("history serializes");
        s.push('\n');
        s
    }
}

/// Training items for `mode`: whole samples or their patches.
pub fn training_items(samples: &[SamplePair], mode: TrainMode) -> Result<Vec<SamplePair>> {
    match mode {
        TrainMode::FullImage => Ok(samples.to_vec()),
        TrainMode::Patch { patch, stride } => {
            let mut out = Vec::new();
            for s in samples {
                out.extend(extract_patches(s, patch, stride)?);
            }
            Ok(out)
        }
    }
}

fn check_items(model: &UNetModel, items: &[SamplePair], batch: usize, what: &str) -> Result<()> {
    for s in items {
        let (h, w) = s.extents();
        model.config.check_extents(h, w).map_err(|e| Error::dim(format!("{what}: {e}")))?;
        if s.image.shape()[0] != model.config.in_channels {
            return Err(Error::dim(format!(
                "{what}: sample has {} channels, model expects {}",
                s.image.shape()[0],
                model.config.in_channels
            )));
        }
    }
    if batch > 1 {
        if let Some(first) = items.first() {
            if items.iter().any(|s| s.extents() != first.extents()) {
                return Err(Error::dim(format!("{what}: batching needs equally sized samples")));
            }
        }
    }
    Ok(())
}

fn stack(items: &[&SamplePair]) -> Result<(Tensor, BinaryMask)> {
    let (h, w) = items[0].extents();
    let c = items[0].image.shape()[0];
    let mut img = Vec::with_capacity(items.len() * c * h * w);
    let mut mask = Vec::with_capacity(items.len() * h * w);
    for s in items {
        img.extend_from_slice(s.image.data());
        mask.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::from_vec(&[items.len(), c, h, w], img)?,
        BinaryMask::new(&[items.len(), 1, h, w], mask)?,
    ))
}

/// One optimization step; returns the batch loss.
fn train_step(
    model: &mut UNetModel,
    optimizer: &mut Optimizer,
    cfg: &TrainConfig,
    x: &Tensor,
    gt: &BinaryMask,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let xv = tape.leaf(x);
    let logits = model.forward_on(&mut tape, &vars, xv)?;
    let probs = tape.sigmoid(logits);
    let dice = soft_dice_loss(&mut tape, probs, gt, DEFAULT_SMOOTH)?;
    let loss = match cfg.loss {
        LossKind::Dice => dice,
        LossKind::DicePlusBce => {
            let bce = bce_loss(&mut tape, probs, gt)?;
            tape.add(dice, bce)?
        }
    };
    tape.backward(loss)?;
    let value = tape.value(loss).item()?;
    model.params.collect_grads(&tape, &vars)?;
    drop(tape);
    if let Some(max_norm) = cfg.grad_clip {
        clip_grad_norm(model.params.tensors_mut(), max_norm)?;
    }
    optimizer.step(model.params.tensors_mut(), cfg.learning_rate)?;
    model.params.zero_grad();
    Ok(value)
}

/// Trains `model` in place on in-memory samples, evaluating on `val` after
/// every epoch. `on_epoch` sees each record as it is produced.
pub fn train_samples(
    model: &mut UNetModel,
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let items = training_items(train, cfg.mode)?;
    check_items(model, &items, cfg.batch_size, "training data")?;
    check_items(model, val, 1, "validation data")?;

    let mut optimizer = Optimizer::new(cfg.optimizer, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SamplePair> = chunk.iter().map(|&i| &items[i]).collect();
            let (x, gt) = stack(&batch)?;
            total += train_step(model, &mut optimizer, cfg, &x, &gt)?;
            steps += 1;
        }
        let val_mean_dice = if val.is_empty() {
            None
        } else {
            Some(evaluate_samples(model, val, cfg.threshold)?.mean_dice)
        };
        let record = EpochRecord { epoch, train_loss: total / steps as f64, val_mean_dice };
        on_epoch(&record);
        history.per_epoch.push(record);
    }
    Ok(history)
}

/// Loads the train and val splits of `data` and runs [`train_samples`].
pub fn train(
    mut model: UNetModel,
    data: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<(UNetModel, TrainHistory)> {
    let train = data.load_split(Split::Train)?;
    let val = data.load_split(Split::Val)?;
    let history = train_samples(&mut model, &train, &val, cfg, |_| {})?;
    Ok((model, history))
}

/// Sigmoid probabilities `[N, out, H, W]` for `x`.
pub fn predict_probs(model: &UNetModel, x: &Tensor) -> Result<Tensor> {
    let logits = model.forward(x)?;
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let p = tape.sigmoid(l);
    Ok(tape.value(p).clone())
}

/// Per-image DICE of the thresholded prediction against each mask.
pub fn evaluate_samples(model: &UNetModel, samples: &[SamplePair], t: f64) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    let scores = samples
        .par_iter()
        .map(|s| {
            let (h, w) = s.extents();
            let x = s.image.clone().reshape(&[1, s.image.shape()[0], h, w])?;
            let probs = predict_probs(model, &x)?;
            let pred = threshold(&probs, t);
            dice_coefficient(&pred, &s.mask)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_scores(scores, t))
}

pub fn evaluate(model: &UNetModel, data: &DatasetManifest, split: Split, t: f64) -> Result<EvalReport> {
    if data.count(split) == 0 {
        return Err(Error::config(format!("split '{}' has no entries", split.as_str())));
    }
    let samples = data.load_split(split)?;
    evaluate_samples(model, &samples, t)
}
