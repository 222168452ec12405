//! The gradient-check suite: every primitive, every layer and the whole
//! tiny pipeline against central finite differences at f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate_weighted, AggregationKind, WdInit, WeightDecider};
use crate::autodiff::gradcheck::{check_graph, finite_diff_grad_at, random_projection, relative_error, CheckOptions};
use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::{BackboneConfig, Depth};
use crate::data::{render_sample, SynthParams};
use crate::error::Result;
use crate::nn::{
    global_avg_pool, softmax_over_clips, BatchNorm3d, Conv2Plus1d, ConvSpec, ConvType, Forward,
    Linear, Mode, ParamGroup, ParamId, ParamKind, ParamStore,
};
use crate::scoring::{predict_scores, score_loss, LinearRegressor};
use crate::train::{forward_clip_var, prepare_clips, Model, ModelConfig};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst relative error over all seeds and inputs.
    pub max_error: f64,
    pub seeds: u64,
}

impl CheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_error < tolerance
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seeds: u64,
    /// Checks use seeds `base_seed..base_seed + seeds`.
    pub base_seed: u64,
    /// Operation whose backward rule is scaled by 1.5, to prove the suite
    /// catches a wrong gradient.
    pub fault: Option<String>,
    /// Only run checks whose name contains this string.
    pub filter: Option<String>,
}

impl SuiteOptions {
    pub fn with_fault(op: impl Into<String>) -> Self {
        SuiteOptions { fault: Some(op.into()), ..Self::default() }
    }
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seeds: DEFAULT_SEEDS, base_seed: 0, fault: None, filter: None }
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so `abs` and `relu` are smooth at the probe.
fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen() { v } else { -v }
    })
}

type GraphFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn graph(
    seed: u64,
    opts: &CheckOptions,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    check_graph(&inputs, opts, |t, v| {
        let y = build(t, v)?;
        random_projection(t, y, seed)
    })
}

/// Gradient check of a scalar built through a [`Forward`] pass, with respect
/// to the listed entries of `store`.
pub fn check_params(
    store: &ParamStore<f64>,
    targets: &[ParamId],
    mode: Mode,
    opts: &CheckOptions,
    build: impl Fn(&mut Forward<'_, f64>) -> Result<Var>,
) -> Result<f64> {
    let mut work = store.clone();
    let analytic = {
        let mut fw = Forward::new(&mut work, mode, true);
        if let Some(op) = &opts.fault {
            fw.tape.inject_fault(op.clone());
        }
        let root = build(&mut fw)?;
        let grads = fw.backward(root)?;
        targets
            .iter()
            .map(|&id| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape())))
            .collect::<Vec<_>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for (&id, analytic) in targets.iter().zip(&analytic) {
        let n = store.get(id).numel();
        let coords = match opts.max_coords {
            Some(m) if m < n => rand::seq::index::sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut work = store.clone();
        let mut failure = None;
        let numeric = finite_diff_grad_at(
            |probe| {
                *work.get_mut(id) = probe.clone();
                let mut fw = Forward::new(&mut work, mode, false);
                match build(&mut fw) {
                    Ok(root) => fw.tape.value(root).data()[0],
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            store.get(id),
            &coords,
            opts.eps,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let picked: Vec<f64> = coords.iter().map(|&k| analytic.data()[k]).collect();
        worst = worse(worst, relative_error(&picked, &numeric));
    }
    Ok(worst)
}

fn primitive(seed: u64, opts: &CheckOptions, shapes: &[&[usize]], smooth: bool, f: GraphFn) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|s| if smooth { away_from_zero(s, &mut rng) } else { random(s, &mut rng) })
        .collect();
    graph(seed, opts, inputs, f)
}

type Check = fn(u64, &CheckOptions) -> Result<f64>;

fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("add", |s, o| primitive(s, o, &[&[3, 4], &[3, 4]], false, |t, v| t.add(v[0], v[1]))),
        ("add_scalar_broadcast", |s, o| primitive(s, o, &[&[3, 4], &[1]], false, |t, v| t.add(v[0], v[1]))),
        ("sub", |s, o| primitive(s, o, &[&[5], &[5]], false, |t, v| t.sub(v[0], v[1]))),
        ("mul", |s, o| primitive(s, o, &[&[2, 3, 2], &[2, 3, 2]], false, |t, v| t.mul(v[0], v[1]))),
        ("mul_scalar_broadcast", |s, o| primitive(s, o, &[&[1], &[4, 2]], false, |t, v| t.mul(v[0], v[1]))),
        ("scale", |s, o| primitive(s, o, &[&[6]], false, |t, v| Ok(t.scale(v[0], -2.5)))),
        ("add_scalar", |s, o| primitive(s, o, &[&[2, 3]], false, |t, v| Ok(t.add_scalar(v[0], 0.75)))),
        ("relu", |s, o| primitive(s, o, &[&[4, 5]], true, |t, v| Ok(t.relu(v[0])))),
        ("abs", |s, o| primitive(s, o, &[&[4, 5]], true, |t, v| Ok(t.abs(v[0])))),
        ("square", |s, o| primitive(s, o, &[&[7]], false, |t, v| Ok(t.square(v[0])))),
        ("matmul", |s, o| primitive(s, o, &[&[3, 4], &[4, 2]], false, |t, v| t.matmul(v[0], v[1]))),
        ("sum_axis", |s, o| primitive(s, o, &[&[3, 4, 2]], false, |t, v| t.sum_axis(v[0], 1))),
        ("mean_axis", |s, o| primitive(s, o, &[&[3, 4, 2]], false, |t, v| t.mean_axis(v[0], 2))),
        ("sum_all", |s, o| primitive(s, o, &[&[3, 4]], false, |t, v| Ok(t.sum_all(v[0])))),
        ("mean_all", |s, o| primitive(s, o, &[&[3, 4]], false, |t, v| Ok(t.mean_all(v[0])))),
        ("reshape", |s, o| primitive(s, o, &[&[3, 4]], false, |t, v| t.reshape(v[0], &[2, 6]))),
        ("transpose", |s, o| primitive(s, o, &[&[3, 4]], false, |t, v| t.transpose(v[0]))),
        ("concat", |s, o| {
            primitive(s, o, &[&[2, 3], &[2, 2]], false, |t, v| t.concat(&[v[0], v[1]], 1))
        }),
        ("softmax", |s, o| primitive(s, o, &[&[5, 3]], false, |t, v| t.softmax(v[0], 0))),
        ("softmax_over_clips", |s, o| {
            primitive(s, o, &[&[6, 4]], false, |t, v| softmax_over_clips(t, v[0]))
        }),
        ("shared_subexpression", |s, o| {
            primitive(s, o, &[&[4]], false, |t, v| {
                let a = t.square(v[0]);
                let b = t.mul(v[0], a)?;
                t.add(a, b)
            })
        }),
        ("conv3d", |s, o| {
            primitive(s, o, &[&[2, 2, 3, 4, 5], &[3, 2, 3, 3, 3], &[3]], false, |t, v| {
                t.conv3d(v[0], v[1], Some(v[2]), [1, 1, 1], [1, 1, 1])
            })
        }),
        ("conv3d_strided", |s, o| {
            primitive(s, o, &[&[2, 2, 4, 5, 5], &[2, 2, 3, 3, 3]], false, |t, v| {
                t.conv3d(v[0], v[1], None, [2, 2, 1], [1, 0, 1])
            })
        }),
        ("conv3d_pointwise", |s, o| {
            primitive(s, o, &[&[2, 3, 2, 3, 3], &[4, 3, 1, 1, 1]], false, |t, v| {
                t.conv3d(v[0], v[1], None, [1, 1, 1], [0, 0, 0])
            })
        }),
        ("max_pool3d", |s, o| {
            primitive(s, o, &[&[2, 2, 3, 5, 5]], false, |t, v| {
                t.max_pool3d(v[0], [1, 3, 3], [1, 2, 2], [0, 1, 1])
            })
        }),
        ("global_avg_pool", |s, o| primitive(s, o, &[&[2, 3, 2, 2, 3]], false, |t, v| global_avg_pool(t, v[0]))),
        ("batch_norm_train", |s, o| {
            primitive(s, o, &[&[2, 3, 2, 2, 2], &[3], &[3]], false, |t, v| {
                Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
            })
        }),
        ("batchnorm", check_batchnorm_layer),
        ("linear", check_linear),
        ("conv2plus1d", check_conv2plus1d),
        ("weight_decider_aggregation", check_wd_aggregation),
        ("score_loss", check_score),
        ("tiny_pipeline", check_pipeline),
    ]
}

fn check_batchnorm_layer(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for mode in [Mode::Train, Mode::Eval] {
        let mut store = ParamStore::new();
        let bn = BatchNorm3d::new(&mut store, "bn", 3, ParamGroup::Backbone);
        *store.get_mut(bn.gamma) = random(&[3], &mut rng);
        *store.get_mut(bn.beta) = random(&[3], &mut rng);
        *store.get_mut(bn.running_mean) = random(&[3], &mut rng);
        *store.get_mut(bn.running_var) = Tensor::from_fn(vec![3], |_| rng.gen_range(0.5..2.0));
        let x = store.add("x", random(&[2, 3, 2, 2, 2], &mut rng), ParamKind::Trainable(ParamGroup::Fresh));
        let err = check_params(&store, &[x, bn.gamma, bn.beta], mode, opts, |fw| {
            let xv = fw.param(x);
            let y = bn.forward(fw, xv)?;
            random_projection(&mut fw.tape, y, seed)
        })?;
        worst = worse(worst, err);
    }
    Ok(worst)
}

fn check_linear(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let fc = Linear::new(&mut store, "fc", 5, 3, ParamGroup::Backbone, &mut rng);
    let x = store.add("x", random(&[4, 5], &mut rng), ParamKind::Trainable(ParamGroup::Fresh));
    check_params(&store, &[x, fc.weight, fc.bias], Mode::Train, opts, |fw| {
        let xv = fw.param(x);
        let y = fc.forward(fw, xv)?;
        random_projection(&mut fw.tape, y, seed)
    })
}

fn check_conv2plus1d(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stride = if seed % 2 == 0 { [1, 1, 1] } else { [2, 2, 2] };
    let spec = ConvSpec::new(2, 3, [3, 3, 3]).stride(stride).pad([1, 1, 1]).with_bias(true);
    let layer = Conv2Plus1d::new(&mut store, "c", spec, ParamGroup::Backbone, &mut rng);
    let x = store.add("x", random(&[2, 2, 3, 4, 4], &mut rng), ParamKind::Trainable(ParamGroup::Fresh));
    let targets = [
        x,
        layer.spatial.weight,
        layer.norm.gamma,
        layer.norm.beta,
        layer.temporal.weight,
        layer.temporal.bias.unwrap(),
    ];
    check_params(&store, &targets, Mode::Train, opts, |fw| {
        let xv = fw.param(x);
        let y = layer.forward(fw, xv)?;
        random_projection(&mut fw.tape, y, seed)
    })
}

fn check_wd_aggregation(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let mut store = ParamStore::new();
    let wd = WeightDecider::with_seed(&mut store, WdInit::Uniform, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let f = store.add("features", random(&[2, 3, 128], &mut rng), ParamKind::Trainable(ParamGroup::Fresh));
    let mut targets = vec![f];
    for fc in &wd.layers {
        targets.extend([fc.weight, fc.bias]);
    }
    let opts = CheckOptions { max_coords: Some(48), ..opts.clone() };
    check_params(&store, &targets, Mode::Train, &opts, |fw| {
        let fv = fw.param(f);
        let y = aggregate_weighted(fw, fv, &wd)?;
        random_projection(&mut fw.tape, y, seed)
    })
}

fn check_score(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let mut store = ParamStore::new();
    let reg = LinearRegressor::with_seed(&mut store, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let f = store.add("video", random(&[3, 128], &mut rng), ParamKind::Trainable(ParamGroup::Fresh));
    let difficulty: Vec<f64> = (0..3).map(|_| rng.gen_range(2.0..3.8)).collect();
    // Targets far from the predictions keep |p - t| away from the kink.
    let truth: Vec<f64> = (0..3).map(|i| 5.0 + 3.0 * i as f64).collect();
    check_params(&store, &[f, reg.w, reg.b], Mode::Train, opts, |fw| {
        let fv = fw.param(f);
        let (_, fin) = predict_scores(fw, &reg, fv, &difficulty)?;
        let t = fw.tape.constant(Tensor::new([3], truth.clone())?);
        score_loss(&mut fw.tape, fin, t)
    })
}

/// Crop, resize and partition of a synthetic video, then backbone,
/// Weight-Decider, regressor and loss, checked with respect to the clips and
/// a sample of parameters from every stage.
fn check_pipeline(seed: u64, opts: &CheckOptions) -> Result<f64> {
    let conv_type = if seed % 2 == 0 { ConvType::Conv3d } else { ConvType::Conv2plus1d };
    let config = ModelConfig {
        backbone: BackboneConfig::new(Depth::Tiny, conv_type, 32)?,
        aggregation: AggregationKind::WeightDecider,
        wd_init: WdInit::Uniform,
    };
    let mut model = Model::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SynthParams::new(1, seed).frame_size(16, 22);
    let sample = render_sample("check", rng.gen(), 3.0, params.frame_size, &mut rng)?;
    let mut clips: Tensor<f64> = prepare_clips(&sample, 32, &mut rng, true)?;
    // Break exact ties between flat background pixels so max pooling is
    // differentiable at the probe point.
    clips.data_mut().iter_mut().for_each(|v| *v += 1e-3 * rng.gen::<f64>());
    let input = model.store.add("clips", clips, ParamKind::Trainable(ParamGroup::Fresh));

    let mut targets = vec![input];
    let names: Vec<_> = model.store.entries().iter().map(|e| e.name.clone()).collect();
    let find = |pat: &str| names.iter().position(|n| n.contains(pat));
    for pat in [
        "backbone.stem.weight",
        "backbone.stem.spatial.weight",
        "backbone.stem_bn.gamma",
        "backbone.layer1.0.conv1",
        "backbone.layer2.0.shortcut.conv.weight",
        "backbone.layer4.0.bn2.beta",
        "head.fc1.weight",
        "head.fc2.bias",
        "wd.fc1.weight",
        "wd.fc4.weight",
        "regressor.w",
        "regressor.b",
    ] {
        if let Some(i) = find(pat) {
            targets.push(model.store.ids().nth(i).unwrap());
        }
    }
    let Model { store, backbone, aggregator, regressor, .. } = &model;
    // A target one point above the prediction keeps the loss, and with it the
    // rounding noise of the differences, small.
    let truth = {
        let mut probe = store.clone();
        let mut fw = Forward::new(&mut probe, Mode::Train, false);
        let x = fw.param(input);
        let (_, fin) = forward_clip_var(&mut fw, backbone, aggregator, regressor, x, 1, &[sample.difficulty])?;
        fw.tape.value(fin).data()[0] + 1.0
    };
    let run = |targets: &[ParamId], eps: f64| {
        let opts = CheckOptions { max_coords: Some(4), eps, ..opts.clone() };
        check_params(store, targets, Mode::Train, &opts, |fw| {
            let x = fw.param(input);
            let (_, fin) =
                forward_clip_var(fw, backbone, aggregator, regressor, x, 1, &[sample.difficulty])?;
            let t = fw.tape.constant(Tensor::new([1], vec![truth])?);
            score_loss(&mut fw.tape, fin, t)
        })
    };
    // Backbone weights touch every activation, so a small step keeps their
    // probes from crossing ReLU and max-pool kinks. A single pixel or a fresh
    // layer touches few kinks and prefers a larger, less noisy step.
    let (local, deep): (Vec<ParamId>, Vec<ParamId>) = targets
        .iter()
        .partition(|&&id| matches!(store.entry(id).kind, ParamKind::Trainable(ParamGroup::Fresh)));
    Ok(worse(run(&deep, 1e-7)?, run(&local, 1e-5)?))
}

/// Larger error; NaN wins.
fn worse(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(n, _)| n).collect()
}

/// Runs the suite; `progress` sees every result as soon as it is known.
pub fn run_suite(opts: &SuiteOptions, mut progress: impl FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    if opts.seeds == 0 {
        return Err(crate::error::Error::Config("gradient checks need at least one seed".into()));
    }
    let mut out = Vec::new();
    for (name, check) in checks() {
        if opts.filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let mut worst = 0.0f64;
        for seed in opts.base_seed..opts.base_seed + opts.seeds {
            let co = CheckOptions { seed, fault: opts.fault.clone(), ..CheckOptions::default() };
            let err = check(seed, &co)?;
            worst = worse(worst, err);
        }
        let result = CheckResult { name, max_error: worst, seeds: opts.seeds };
        progress(&result);
        out.push(result);
    }
    Ok(out)
}
