use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::trainer::{train, EpochRecord, TrainConfig};
use crate::aggregation::{AggregationKind, WdInit};
use crate::autodiff::Float;
use crate::backbone::{BackboneConfig, Depth};
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::nn::ConvType;

/// One configuration of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub depth: Depth,
    pub conv_type: ConvType,
    pub clip_len: usize,
    pub aggregation: AggregationKind,
}

impl MatrixEntry {
    pub fn model_config(&self, wd_init: WdInit) -> Result<ModelConfig> {
        Ok(ModelConfig {
            backbone: BackboneConfig::new(self.depth, self.conv_type, self.clip_len)?,
            aggregation: self.aggregation,
            wd_init,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub entry: MatrixEntry,
    /// Best test correlation, or `None` when the row failed.
    pub spearman: Option<f64>,
    pub params: Option<usize>,
    pub error: Option<String>,
    /// The row failed with a non-finite loss rather than a build error.
    pub numerical_failure: bool,
    pub history: Vec<EpochRecord>,
}

/// Trains every entry with the same data and settings. A failing entry is
/// reported in its row and the remaining entries still run.
pub fn run_experiment_matrix<F: Float>(
    entries: &[MatrixEntry],
    train_set: &[VideoSample],
    test_set: &[VideoSample],
    cfg: &TrainConfig,
    wd_init: WdInit,
    mut progress: impl FnMut(usize, &EpochRecord),
) -> Vec<MatrixRow> {
    entries
        .iter()
        .enumerate()
        .map(|(i, &entry)| {
            let mut row =
                MatrixRow {
                entry,
                spearman: None,
                params: None,
                error: None,
                numerical_failure: false,
                history: Vec::new(),
            };
            let run = entry.model_config(wd_init).and_then(|config| {
                let model = Model::<F>::new(config, cfg.seed)?;
                row.params = Some(model.count_parameters());
                train(model, train_set, test_set, cfg, &mut |r: &EpochRecord| progress(i, r))
            });
            match run {
                Ok(outcome) => {
                    row.spearman = Some(outcome.report.spearman);
                    row.history = outcome.report.history;
                }
                Err(e) => {
                    row.numerical_failure = matches!(e, Error::NonFiniteLoss { .. });
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect()
}

pub fn matrix_csv(rows: &[MatrixRow]) -> String {
    let mut out = String::from("depth,conv_type,clip_len,aggregation,spearman,params\n");
    for r in rows {
        let e = &r.entry;
        let rho = match (r.error.is_some(), r.spearman) {
            (false, Some(s)) => s.to_string(),
            _ => "failed".to_string(),
        };
        let params = match (r.error.is_some(), r.params) {
            (false, Some(p)) => p.to_string(),
            _ => "failed".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.depth,
            e.conv_type.label(),
            e.clip_len,
            e.aggregation.label(),
            rho,
            params
        )
        .unwrap();
    }
    out
}
