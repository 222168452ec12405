use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationKind, Aggregator, WdInit};
use crate::autodiff::{Float, Tensor, Var};
use crate::backbone::{Backbone, BackboneConfig, FEATURE_DIM};
use crate::data::{partition_clips, spatial_transform, temporal_crop, VideoSample};
use crate::error::{Error, Result};
use crate::nn::{Forward, Mode, ParamStore};
use crate::scoring::{predict_scores, LinearRegressor};

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub aggregation: AggregationKind,
    #[serde(default)]
    pub wd_init: WdInit,
}

/// Independent seed for one consumer of a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub(crate) const STREAM_BACKBONE: u64 = 1;
pub(crate) const STREAM_WD: u64 = 2;
pub(crate) const STREAM_REGRESSOR: u64 = 3;
pub(crate) const STREAM_SHUFFLE: u64 = 4;
pub(crate) const STREAM_AUGMENT: u64 = 5;

/// Backbone, aggregation and regressor sharing one parameter store.
#[derive(Clone)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub backbone: Backbone,
    pub aggregator: Aggregator,
    pub regressor: LinearRegressor,
}

impl<F: Float> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("config", &self.config).field("store", &self.store).finish()
    }
}

/// Crop, resize, flip and split one video into `[N, 3, n, 112, 112]` clips.
pub fn prepare_clips<F: Float>(
    sample: &VideoSample,
    clip_len: usize,
    rng: &mut impl Rng,
    train: bool,
) -> Result<Tensor<F>> {
    let window = temporal_crop(sample, rng, train)?;
    let frames = spatial_transform(&window, rng, train)?;
    Ok(partition_clips(&frames, clip_len)?.cast())
}

impl<F: Float> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let backbone =
            Backbone::new(&mut store, config.backbone.clone(), derive_seed(seed, STREAM_BACKBONE))?;
        let aggregator = Aggregator::new(
            &mut store,
            config.aggregation,
            config.wd_init,
            derive_seed(seed, STREAM_WD),
        );
        let regressor = LinearRegressor::with_seed(&mut store, derive_seed(seed, STREAM_REGRESSOR));
        Ok(Model { config, store, backbone, aggregator, regressor })
    }

    pub fn clip_len(&self) -> usize {
        self.config.backbone.clip_len
    }

    pub fn count_parameters(&self) -> usize {
        self.store.count_trainable()
    }

    /// Runs the network on prepared clips (`B` tensors of
    /// `[N, 3, n, 112, 112]`), returning differentiable raw and final
    /// scores `[B]`.
    pub fn forward(
        &mut self,
        mode: Mode,
        param_grads: bool,
        clips: &[Tensor<F>],
        difficulty: &[f64],
    ) -> Result<(Forward<'_, F>, Var, Var)> {
        let Model { store, backbone, aggregator, regressor, .. } = self;
        let mut fw = Forward::new(store, mode, param_grads);
        let (raw, fin) = forward_pipeline(&mut fw, backbone, aggregator, regressor, clips, difficulty)?;
        Ok((fw, raw, fin))
    }

    /// Deterministic final-score predictions for `samples` in eval mode.
    pub fn predict(&mut self, samples: &[VideoSample], batch: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in samples.chunks(batch.max(1)) {
            let clips = chunk
                .iter()
                .map(|s| prepare_clips(s, self.clip_len(), &mut rng, false))
                .collect::<Result<Vec<_>>>()?;
            let diff: Vec<f64> = chunk.iter().map(|s| s.difficulty).collect();
            let (fw, _, fin) = self.forward(Mode::Eval, false, &clips, &diff)?;
            out.extend(fw.tape.value(fin).data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }
}

/// Features, aggregation and scores for a batch of prepared clip stacks.
pub fn forward_pipeline<F: Float>(
    fw: &mut Forward<'_, F>,
    backbone: &Backbone,
    aggregator: &Aggregator,
    regressor: &LinearRegressor,
    clips: &[Tensor<F>],
    difficulty: &[f64],
) -> Result<(Var, Var)> {
    let Some(first) = clips.first() else {
        return Err(Error::Input("empty batch".into()));
    };
    let per_video = first.shape().to_vec();
    if clips.iter().any(|c| c.shape() != per_video.as_slice()) {
        return Err(Error::shape("forward_pipeline", "videos in a batch must have equal clip stacks"));
    }
    let (b, n) = (clips.len(), per_video[0]);
    let mut data = Vec::with_capacity(b * first.numel());
    for c in clips {
        data.extend_from_slice(c.data());
    }
    let mut shape = per_video.clone();
    shape[0] = b * n;
    let x = fw.tape.constant(Tensor::new(shape, data)?);
    forward_clip_var(fw, backbone, aggregator, regressor, x, b, difficulty)
}

/// As [`forward_pipeline`] for clips already on the tape as
/// `[B * N, 3, n, 112, 112]`, video-major.
pub fn forward_clip_var<F: Float>(
    fw: &mut Forward<'_, F>,
    backbone: &Backbone,
    aggregator: &Aggregator,
    regressor: &LinearRegressor,
    clips: Var,
    videos: usize,
    difficulty: &[f64],
) -> Result<(Var, Var)> {
    let total = fw.tape.shape(clips)[0];
    if videos == 0 || total % videos != 0 {
        return Err(Error::shape("forward_pipeline", format!("{total} clips do not split into {videos} videos")));
    }
    let features = backbone.forward(fw, clips)?;
    let features = fw.tape.reshape(features, &[videos, total / videos, FEATURE_DIM])?;
    let video = aggregator.forward(fw, features)?;
    predict_scores(fw, regressor, video, difficulty)
}

/// Anything that maps videos to final scores.
pub trait Predictor {
    fn predict(&mut self, samples: &[VideoSample], batch: usize) -> Result<Vec<f64>>;
}

impl<F: Float> Predictor for Model<F> {
    fn predict(&mut self, samples: &[VideoSample], batch: usize) -> Result<Vec<f64>> {
        Model::predict(self, samples, batch)
    }
}
