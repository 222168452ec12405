//! Experiment specs and the commands behind the `clipscore` binary.
//!
//! A spec is one JSON document. Every section and field is optional; absent
//! values take the defaults below and unknown keys are rejected.
//!
//! ```json
//! {
//!   "backbone": { "depth": "tiny", "conv_type": "conv3d", "clip_len": 8 },
//!   "aggregation": { "kind": "wd", "wd_init": "uniform" },
//!   "train": { "epochs": 50, "lr_backbone": 1e-5, "lr_fresh": 1e-4,
//!              "train_batch": 2, "eval_batch": 5, "adam_betas": [0.9, 0.999],
//!              "adam_eps": 1e-8, "seed": 0, "precision": 32 },
//!   "data": { "synth": { "train_count": 120, "test_count": 40, "seed": 0,
//!                        "frame_size": [128, 171] } },
//!   "output": { "dir": "runs/default" },
//!   "matrix": [ { "depth": 34, "conv_type": "conv2plus1d", "clip_len": 16, "aggregation": "wd" } ]
//! }
//! ```
//!
//! `data` takes either `synth` or both `train` and `test` dataset paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationKind, WdInit};
use crate::autodiff::Float;
use crate::backbone::{BackboneConfig, Depth};
use crate::check::{run_suite, CheckResult, SuiteOptions};
use crate::data::{generate_synthetic, load_dataset, save_dataset, SynthParams, VideoSample};
use crate::error::{Error, Result};
use crate::nn::ConvType;
use crate::train::{
    evaluate, load_checkpoint, matrix_csv, metrics_csv, read_checkpoint_config, run_experiment_matrix,
    save_checkpoint, train, EpochRecord, EvalReport, MatrixEntry, Model, ModelConfig, Precision,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } | Error::Undefined(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    pub depth: Depth,
    pub conv_type: ConvType,
    pub clip_len: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection { depth: Depth::Tiny, conv_type: ConvType::Conv3d, clip_len: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationSection {
    pub kind: AggregationKind,
    pub wd_init: WdInit,
}

impl Default for AggregationSection {
    fn default() -> Self {
        AggregationSection { kind: AggregationKind::WeightDecider, wd_init: WdInit::Uniform }
    }
}

/// Synthetic train and test splits drawn from one generator run: the first
/// `train_count` samples train, the rest test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSplit {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub frame_size: (usize, usize),
}

impl Default for SynthSplit {
    fn default() -> Self {
        let p = SynthParams::new(0, 0);
        SynthSplit { train_count: 120, test_count: 40, seed: 0, frame_size: p.frame_size }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synth: Option<SynthSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub backbone: BackboneSection,
    pub aggregation: AggregationSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub output: OutputSection,
    /// Rows for `matrix`; without it the spec's backbone runs once per
    /// aggregation kind.
    pub matrix: Option<Vec<MatrixEntry>>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad spec: {e}")))?;
        spec.train.validate()?;
        spec.model_config()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let b = &self.backbone;
        Ok(ModelConfig {
            backbone: BackboneConfig::new(b.depth, b.conv_type, b.clip_len)?,
            aggregation: self.aggregation.kind,
            wd_init: self.aggregation.wd_init,
        })
    }

    pub fn matrix_entries(&self) -> Vec<MatrixEntry> {
        self.matrix.clone().unwrap_or_else(|| {
            [AggregationKind::WeightDecider, AggregationKind::Average]
                .into_iter()
                .map(|aggregation| MatrixEntry {
                    depth: self.backbone.depth,
                    conv_type: self.backbone.conv_type,
                    clip_len: self.backbone.clip_len,
                    aggregation,
                })
                .collect()
        })
    }

    /// Train and test samples.
    pub fn load_data(&self) -> Result<(Vec<VideoSample>, Vec<VideoSample>)> {
        let d = &self.data;
        match (&d.train, &d.test, &d.synth) {
            (Some(train), Some(test), None) => Ok((load_dataset(train)?, load_dataset(test)?)),
            (None, None, synth) => {
                let s = synth.clone().unwrap_or_default();
                let params = SynthParams {
                    count: s.train_count + s.test_count,
                    seed: s.seed,
                    frame_size: s.frame_size,
                };
                let mut all = generate_synthetic(&params)?;
                let test = all.split_off(s.train_count.min(all.len()));
                Ok((all, test))
            }
            _ => Err(Error::Config(
                "data needs either `synth` or both `train` and `test` paths".into(),
            )),
        }
    }
}

/// Writes a synthetic dataset; returns the one-line summary.
pub fn cmd_synth(params: &SynthParams, out: &Path) -> Result<String> {
    let samples = generate_synthetic(params)?;
    save_dataset(&samples, out)?;
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.score), hi.max(s.score)));
    Ok(format!("wrote {} samples to {}, scores {lo} to {hi}", samples.len(), out.display()))
}

/// Runs the gradient-check suite, printing one line per check. Returns the
/// failing checks.
pub fn cmd_gradcheck(
    opts: &SuiteOptions,
    tolerance: f64,
    out: &mut impl Write,
) -> Result<Vec<CheckResult>> {
    let mut io_err = None;
    let results = run_suite(opts, |r| {
        let verdict = if r.passed(tolerance) { "ok" } else { "FAILED" };
        if let Err(e) = writeln!(out, "{:<28} {:.3e}  {verdict}", r.name, r.max_error) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io("stdout", e));
    }
    Ok(results.into_iter().filter(|r| !r.passed(tolerance)).collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Trains the spec's model. Writes `metrics.csv`, `best.ckpt` and
/// `report.json` to the output directory and returns the report.
pub fn cmd_train(spec: &ExperimentSpec, mut progress: impl FnMut(&EpochRecord)) -> Result<EvalReport> {
    let (train_set, test_set) = spec.load_data()?;
    create_dir(&spec.output.dir)?;
    match spec.train.precision {
        Precision::F32 => train_into::<f32>(spec, &train_set, &test_set, &mut progress),
        Precision::F64 => train_into::<f64>(spec, &train_set, &test_set, &mut progress),
    }
}

fn train_into<F: Float>(
    spec: &ExperimentSpec,
    train_set: &[VideoSample],
    test_set: &[VideoSample],
    progress: &mut impl FnMut(&EpochRecord),
) -> Result<EvalReport> {
    let model = Model::<F>::new(spec.model_config()?, spec.train.seed)?;
    let outcome = train(model, train_set, test_set, &spec.train, progress)?;
    let dir = &spec.output.dir;
    write_file(&dir.join("metrics.csv"), metrics_csv(&outcome.report.history).as_bytes())?;
    save_checkpoint(&outcome.model, dir.join("best.ckpt"))?;
    write_file(&dir.join("report.json"), to_json(&outcome.report).as_bytes())?;
    Ok(outcome.report)
}

/// Evaluates a checkpoint on the spec's test split. The checkpoint must
/// describe the same model as the spec.
pub fn cmd_eval(spec: &ExperimentSpec, checkpoint: &Path) -> Result<EvalReport> {
    let expected = spec.model_config()?;
    let found = read_checkpoint_config(checkpoint)?;
    let (e, f) = (&expected.backbone, &found.backbone);
    let mismatch = [
        ("depth", e.depth.to_string(), f.depth.to_string()),
        ("conv_type", e.conv_type.label().into(), f.conv_type.label().into()),
        ("clip_len", e.clip_len.to_string(), f.clip_len.to_string()),
        ("aggregation", expected.aggregation.label().into(), found.aggregation.label().into()),
    ]
    .into_iter()
    .find(|(_, a, b)| a != b);
    if let Some((field, want, got)) = mismatch {
        return Err(Error::Config(format!(
            "checkpoint {} has {field} {got} but the spec asks for {want}",
            checkpoint.display()
        )));
    }
    let (_, test_set) = spec.load_data()?;
    match spec.train.precision {
        Precision::F32 => evaluate(&mut load_checkpoint::<f32>(checkpoint)?, &test_set, spec.train.eval_batch),
        Precision::F64 => evaluate(&mut load_checkpoint::<f64>(checkpoint)?, &test_set, spec.train.eval_batch),
    }
}

/// Trains every matrix row and writes `matrix.csv`. A row that fails is
/// marked in the CSV and the rest still run. Returns the CSV and whether any
/// row hit a non-finite loss.
pub fn cmd_matrix(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(&MatrixEntry, &EpochRecord),
) -> Result<(String, bool)> {
    let entries = spec.matrix_entries();
    let (train_set, test_set) = spec.load_data()?;
    create_dir(&spec.output.dir)?;
    let report = |i: usize, r: &EpochRecord| progress(&entries[i], r);
    let rows = match spec.train.precision {
        Precision::F32 => run_experiment_matrix::<f32>(
            &entries,
            &train_set,
            &test_set,
            &spec.train,
            spec.aggregation.wd_init,
            report,
        ),
        Precision::F64 => run_experiment_matrix::<f64>(
            &entries,
            &train_set,
            &test_set,
            &spec.train,
            spec.aggregation.wd_init,
            report,
        ),
    };
    let csv = matrix_csv(&rows);
    write_file(&spec.output.dir.join("matrix.csv"), csv.as_bytes())?;
    Ok((csv, rows.iter().any(|r| r.numerical_failure)))
}

pub fn report_json(report: &EvalReport) -> String {
    to_json(report)
}
