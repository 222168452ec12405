//! Linear score regression, difficulty scaling and the training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Float, Tape, Tensor, Var};
use crate::backbone::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::nn::{uniform_fan_in, Forward, ParamGroup, ParamId, ParamKind, ParamStore};

/// `raw = w . f + b`.
#[derive(Debug, Clone)]
pub struct LinearRegressor {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearRegressor {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let kind = ParamKind::Trainable(ParamGroup::Fresh);
        LinearRegressor {
            w: store.add("regressor.w", uniform_fan_in(rng, &[FEATURE_DIM], FEATURE_DIM), kind),
            b: store.add("regressor.b", uniform_fan_in(rng, &[1], FEATURE_DIM), kind),
        }
    }

    pub fn with_seed<F: Float>(store: &mut ParamStore<F>, seed: u64) -> Self {
        Self::new(store, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Raw scores `[B]` for video features `[B, 128]`.
    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, video: Var) -> Result<Var> {
        let shape = fw.tape.shape(video).to_vec();
        if shape.len() != 2 || shape[1] != FEATURE_DIM {
            return Err(Error::shape("regressor", format!("expected [B, {FEATURE_DIM}], got {shape:?}")));
        }
        let w = fw.param(self.w);
        let b = fw.param(self.b);
        let w = fw.tape.reshape(w, &[FEATURE_DIM, 1])?;
        let raw = fw.tape.matmul(video, w)?;
        let raw = fw.tape.add(raw, b)?;
        fw.tape.reshape(raw, &[shape[0]])
    }
}

/// One prediction; `final_score == raw_score * difficulty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePrediction {
    pub raw_score: f64,
    pub final_score: f64,
    pub difficulty: f64,
}

fn check_difficulty(difficulty: &[f64]) -> Result<()> {
    match difficulty.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        Some(d) => Err(Error::Input(format!("difficulty must be positive, got {d}"))),
        None => Ok(()),
    }
}

/// Differentiable `(raw, final)` scores `[B]` for video features `[B, 128]`.
pub fn predict_scores<F: Float>(
    fw: &mut Forward<'_, F>,
    reg: &LinearRegressor,
    video: Var,
    difficulty: &[f64],
) -> Result<(Var, Var)> {
    check_difficulty(difficulty)?;
    let raw = reg.forward(fw, video)?;
    let n = fw.tape.shape(raw)[0];
    if difficulty.len() != n {
        return Err(Error::shape(
            "predict_score",
            format!("{n} features but {} difficulty degrees", difficulty.len()),
        ));
    }
    let d = Tensor::new([n], difficulty.iter().map(|&d| F::from_f64_lossy(d)).collect())?;
    let d = fw.tape.constant(d);
    let fin = fw.tape.mul(raw, d)?;
    Ok((raw, fin))
}

/// Score of a single video feature `[128]`.
pub fn predict_score<F: Float>(
    store: &mut ParamStore<F>,
    reg: &LinearRegressor,
    video: &Tensor<F>,
    difficulty: f64,
) -> Result<ScorePrediction> {
    let mut fw = Forward::eval(store);
    let v = fw.tape.constant(video.clone().reshape([1, video.numel()])?);
    let (raw, fin) = predict_scores(&mut fw, reg, v, &[difficulty])?;
    Ok(ScorePrediction {
        raw_score: fw.tape.value(raw).data()[0].as_f64(),
        final_score: fw.tape.value(fin).data()[0].as_f64(),
        difficulty,
    })
}

/// Mean over the batch of `(p - t)^2 + |p - t|`.
pub fn score_loss<F: Float>(tape: &mut Tape<F>, pred: Var, truth: Var) -> Result<Var> {
    let diff = tape.sub(pred, truth)?;
    let sq = tape.square(diff);
    let ab = tape.abs(diff);
    let per = tape.add(sq, ab)?;
    Ok(tape.mean_all(per))
}

/// Loss of one prediction as a plain number.
pub fn score_loss_value(pred: f64, truth: f64) -> f64 {
    let d = pred - truth;
    d * d + d.abs()
}
