use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::model::{derive_seed, prepare_clips, Model, Predictor, STREAM_AUGMENT, STREAM_SHUFFLE};
use super::spearman::spearman;
use crate::autodiff::{Float, Tensor};
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::scoring::{score_loss, score_loss_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    F32,
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> std::result::Result<Self, String> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(format!("precision must be 32 or 64, got {other}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_backbone: f64,
    pub lr_fresh: f64,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr_backbone: 1e-5,
            lr_fresh: 1e-4,
            train_batch: 2,
            eval_batch: 5,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr_backbone >= 0.0 && self.lr_fresh >= 0.0)
            || !self.lr_backbone.is_finite()
            || !self.lr_fresh.is_finite()
        {
            return bad("learning rates must be finite and non-negative");
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_betas.0, beta2: self.adam_betas.1, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// NaN when the rank correlation is undefined for that epoch.
    pub test_spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
    pub spearman: f64,
    pub mean_loss: f64,
    pub history: Vec<EpochRecord>,
}

/// Predictions, loss and rank correlation of `predictor` on `dataset`.
pub fn evaluate(
    predictor: &mut impl Predictor,
    dataset: &[VideoSample],
    eval_batch: usize,
) -> Result<EvalReport> {
    let (predictions, truths, mean_loss) = predict_all(predictor, dataset, eval_batch)?;
    let rho = spearman(&predictions, &truths)?;
    Ok(EvalReport { predictions, truths, spearman: rho, mean_loss, history: Vec::new() })
}

fn predict_all(
    predictor: &mut impl Predictor,
    dataset: &[VideoSample],
    eval_batch: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if dataset.len() < 2 {
        return Err(Error::Input(format!(
            "evaluation needs at least 2 samples, got {}",
            dataset.len()
        )));
    }
    let predictions = predictor.predict(dataset, eval_batch)?;
    let truths: Vec<f64> = dataset.iter().map(|s| s.score).collect();
    let mean_loss = predictions.iter().zip(&truths).map(|(&p, &t)| score_loss_value(p, t)).sum::<f64>()
        / truths.len() as f64;
    Ok((predictions, truths, mean_loss))
}

/// Result of [`train`]: the best-by-test-Spearman model and its report.
#[derive(Clone)]
pub struct TrainOutcome<F> {
    pub model: Model<F>,
    pub report: EvalReport,
    pub best_epoch: usize,
}

/// Called after every epoch.
pub trait Observer {
    fn epoch(&mut self, record: &EpochRecord);
}

impl Observer for () {
    fn epoch(&mut self, _: &EpochRecord) {}
}

impl<G: FnMut(&EpochRecord)> Observer for G {
    fn epoch(&mut self, record: &EpochRecord) {
        self(record)
    }
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step<F: Float>(
    model: &mut Model<F>,
    adam: &mut Adam<F>,
    clips: &[Tensor<F>],
    scores: &[f64],
    difficulty: &[f64],
) -> Result<f64> {
    let (grads, loss) = {
        let (mut fw, _, fin) = model.forward(Mode::Train, true, clips, difficulty)?;
        let truth = Tensor::new([scores.len()], scores.iter().map(|&s| F::from_f64_lossy(s)).collect())?;
        let truth = fw.tape.constant(truth);
        let loss = score_loss(&mut fw.tape, fin, truth)?;
        let value = fw.tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Ok(value);
        }
        (fw.backward(loss)?, value)
    };
    adam.step(&mut model.store, &grads)?;
    Ok(loss)
}

/// End-to-end training with per-epoch evaluation on `test`.
pub fn train<F: Float>(
    mut model: Model<F>,
    train_set: &[VideoSample],
    test_set: &[VideoSample],
    cfg: &TrainConfig,
    observer: &mut impl Observer,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if test_set.len() < 2 {
        return Err(Error::Input("test set needs at least 2 samples".into()));
    }
    let mut adam = Adam::new(cfg.adam(), cfg.lr_backbone, cfg.lr_fresh);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_AUGMENT));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model<F>, Vec<f64>, Vec<f64>, f64)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.train_batch).enumerate() {
            let samples: Vec<&VideoSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let clips = samples
                .iter()
                .map(|s| prepare_clips(s, model.clip_len(), &mut augment_rng, true))
                .collect::<Result<Vec<_>>>()?;
            let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
            let diff: Vec<f64> = samples.iter().map(|s| s.difficulty).collect();
            let loss = train_step(&mut model, &mut adam, &clips, &scores, &diff)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch + 1, loss });
            }
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;

        let (predictions, truths, test_loss) = predict_all(&mut model, test_set, cfg.eval_batch)?;
        let rho = spearman(&predictions, &truths).unwrap_or(f64::NAN);
        let record = EpochRecord { epoch, train_loss, test_loss, test_spearman: rho };
        observer.epoch(&record);
        history.push(record);
        let improved = match &best {
            None => true,
            Some((b, ..)) => rho > *b || (b.is_nan() && !rho.is_nan()),
        };
        if improved {
            best = Some((rho, epoch, model.clone(), predictions, truths, test_loss));
        }
    }

    let (rho, best_epoch, model, predictions, truths, mean_loss) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        report: EvalReport { predictions, truths, spearman: rho, mean_loss, history },
        best_epoch,
    })
}

/// Shortest round-trip formatting, so identical runs give identical bytes.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,test_loss,test_spearman\n");
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.test_loss, r.test_spearman).unwrap();
    }
    out
}

/// Mean of the first and last `window` train losses.
pub fn smoothed_train_loss(history: &[EpochRecord], window: usize) -> Option<(f64, f64)> {
    if window == 0 || history.len() < window {
        return None;
    }
    let mean = |h: &[EpochRecord]| h.iter().map(|r| r.train_loss).sum::<f64>() / h.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}
