//! Collapsing per-clip features into one video feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Var};
use crate::backbone::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::nn::{Forward, Linear, ParamGroup, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    #[serde(alias = "avg")]
    Average,
    #[serde(alias = "wd")]
    WeightDecider,
}

impl AggregationKind {
    pub fn label(self) -> &'static str {
        match self {
            AggregationKind::Average => "avg",
            AggregationKind::WeightDecider => "wd",
        }
    }
}

/// Initialization of the Weight-Decider.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WdInit {
    /// Fan-in scaled uniform weights in every layer.
    #[default]
    Uniform,
    /// Uniform hidden layers, zero output layer: training starts exactly at
    /// the averaging baseline.
    ZeroOutput,
}

pub const WD_WIDTHS: [usize; 5] = [FEATURE_DIM, 64, 32, 64, FEATURE_DIM];

/// Per-clip MLP 128-64-32-64-128 proposing raw aggregation weights.
#[derive(Debug, Clone)]
pub struct WeightDecider {
    pub layers: Vec<Linear>,
}

impl WeightDecider {
    pub fn new<F: Float>(store: &mut ParamStore<F>, init: WdInit, rng: &mut impl Rng) -> Self {
        let layers: Vec<Linear> = WD_WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(store, &format!("wd.fc{}", i + 1), w[0], w[1], ParamGroup::Fresh, rng)
            })
            .collect();
        if init == WdInit::ZeroOutput {
            layers.last().unwrap().zero(store);
        }
        WeightDecider { layers }
    }

    pub fn with_seed<F: Float>(store: &mut ParamStore<F>, init: WdInit, seed: u64) -> Self {
        Self::new(store, init, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Raw weights `w'` for features `[N, 128]` or `[B, N, 128]`; the same
    /// network is applied to every clip independently.
    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, features: Var) -> Result<Var> {
        let shape = fw.tape.shape(features).to_vec();
        let rank_ok = shape.len() == 2 || shape.len() == 3;
        if !rank_ok || shape.last() != Some(&FEATURE_DIM) {
            return Err(Error::shape(
                "weight_decider",
                format!("expected [N, {FEATURE_DIM}] or [B, N, {FEATURE_DIM}], got {shape:?}"),
            ));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let mut h = fw.tape.reshape(features, &[rows, FEATURE_DIM])?;
        let last = self.layers.len() - 1;
        for (i, fc) in self.layers.iter().enumerate() {
            h = fc.forward(fw, h)?;
            if i < last {
                h = fw.tape.relu(h);
            }
        }
        fw.tape.reshape(h, &shape)
    }
}

fn clip_axis<F: Float>(fw: &Forward<'_, F>, features: Var, op: &'static str) -> Result<usize> {
    let shape = fw.tape.shape(features);
    match shape.len() {
        2 | 3 => Ok(shape.len() - 2),
        _ => Err(Error::shape(op, format!("expected [N, D] or [B, N, D], got {shape:?}"))),
    }
}

/// Mean over the clip axis: `[N, D] -> [D]`, `[B, N, D] -> [B, D]`.
pub fn aggregate_average<F: Float>(fw: &mut Forward<'_, F>, features: Var) -> Result<Var> {
    let axis = clip_axis(fw, features, "aggregate_average")?;
    fw.tape.mean_axis(features, axis)
}

/// `sum_i f_i * w_i` with `w = softmax over clips of WD(f)`.
pub fn aggregate_weighted<F: Float>(
    fw: &mut Forward<'_, F>,
    features: Var,
    wd: &WeightDecider,
) -> Result<Var> {
    let axis = clip_axis(fw, features, "aggregate_weighted")?;
    let raw = wd.forward(fw, features)?;
    let w = fw.tape.softmax(raw, axis)?;
    let weighted = fw.tape.mul(features, w)?;
    fw.tape.sum_axis(weighted, axis)
}

pub fn aggregate<F: Float>(
    kind: AggregationKind,
    fw: &mut Forward<'_, F>,
    features: Var,
    wd: Option<&WeightDecider>,
) -> Result<Var> {
    match (kind, wd) {
        (AggregationKind::Average, _) => aggregate_average(fw, features),
        (AggregationKind::WeightDecider, Some(wd)) => aggregate_weighted(fw, features, wd),
        (AggregationKind::WeightDecider, None) => {
            Err(Error::Config("weight_decider aggregation needs a Weight-Decider".into()))
        }
    }
}

/// Aggregation stage owned by a model.
#[derive(Debug, Clone)]
pub enum Aggregator {
    Average,
    WeightDecider(WeightDecider),
}

impl Aggregator {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        kind: AggregationKind,
        init: WdInit,
        seed: u64,
    ) -> Self {
        match kind {
            AggregationKind::Average => Aggregator::Average,
            AggregationKind::WeightDecider => {
                Aggregator::WeightDecider(WeightDecider::with_seed(store, init, seed))
            }
        }
    }

    pub fn kind(&self) -> AggregationKind {
        match self {
            Aggregator::Average => AggregationKind::Average,
            Aggregator::WeightDecider(_) => AggregationKind::WeightDecider,
        }
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, features: Var) -> Result<Var> {
        match self {
            Aggregator::Average => aggregate_average(fw, features),
            Aggregator::WeightDecider(wd) => aggregate_weighted(fw, features, wd),
        }
    }
}
