//! Acceptance run. Prints one `criterion N: PASS|FAIL` line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,5,11` runs a subset.

use std::collections::BTreeSet;
use std::time::Instant;

use clipscore::aggregation::{aggregate_average, aggregate_weighted, AggregationKind, WdInit, WeightDecider};
use clipscore::backbone::{build_backbone, Backbone, BackboneConfig, Depth, CROP};
use clipscore::check::{check_names, SuiteOptions, DEFAULT_TOLERANCE};
use clipscore::cli::{cmd_gradcheck, cmd_train, ExperimentSpec};
use clipscore::data::{crop_end, partition_clips, unpartition_clips, SYNTH_FRAMES};
use clipscore::nn::{softmax_over_clips, ConvType, ConvUnit, Forward, Mode, ParamStore};
use clipscore::train::{average_ranks, matrix_csv, metrics_csv, run_experiment_matrix, smoothed_train_loss, spearman, MatrixEntry};
use clipscore::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn features(rng: &mut impl Rng, n: usize) -> Tensor<f64> {
    Tensor::from_fn([n, 128], |_| rng.gen_range(-5.0..5.0))
}

fn run_avg(store: &mut ParamStore<f64>, f: &Tensor<f64>) -> Vec<f64> {
    let mut fw = Forward::eval(store);
    let x = fw.tape.constant(f.clone());
    let y = aggregate_average(&mut fw, x).unwrap();
    fw.tape.value(y).data().to_vec()
}

fn run_wd(store: &mut ParamStore<f64>, wd: &WeightDecider, f: &Tensor<f64>) -> Vec<f64> {
    let mut fw = Forward::eval(store);
    let x = fw.tape.constant(f.clone());
    let y = aggregate_weighted(&mut fw, x, wd).unwrap();
    fw.tape.value(y).data().to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut log = Vec::new();
    let failed = cmd_gradcheck(&SuiteOptions::default(), DEFAULT_TOLERANCE, &mut log).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let names = check_names();
    for needed in ["add", "matmul", "softmax", "conv3d", "conv2plus1d", "batchnorm", "weight_decider_aggregation", "tiny_pipeline"] {
        ensure(names.contains(&needed), format!("suite lacks {needed}"))?;
    }
    ensure(failed.is_empty(), format!("failing checks: {:?}", failed.iter().map(|r| r.name).collect::<Vec<_>>()))?;
    ensure(secs < 300.0, format!("took {secs:.0} s"))?;
    Ok(format!("{} checks below {DEFAULT_TOLERANCE:e} at 64-bit in {secs:.1} s", names.len()))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for n in [3, 6, 12] {
        for trial in 0..100 {
            let mut store = ParamStore::new();
            let wd = WeightDecider::with_seed(&mut store, WdInit::ZeroOutput, trial);
            let f = features(&mut rng, n);
            worst = worst.max(max_diff(&run_wd(&mut store, &wd, &f), &run_avg(&mut store, &f)));
        }
    }
    ensure(worst < 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("300 sets, max deviation {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut col_err, mut hull_err) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let n = rng.gen_range(1..=12);
        let scale = [1.0, 30.0, 300.0][trial % 3];
        let raw = Tensor::from_fn([n, 128], |_| rng.gen_range(-scale..scale));
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(raw);
        let w = softmax_over_clips(&mut tape, v).map_err(|e| e.to_string())?;
        let w = tape.value(w).data();
        for k in 0..128 {
            let col: Vec<f64> = (0..n).map(|i| w[i * 128 + k]).collect();
            col_err = col_err.max((col.iter().sum::<f64>() - 1.0).abs());
            ensure(col.iter().all(|&x| (0.0..=1.0).contains(&x)), "weight outside [0, 1]")?;
        }
        let mut store = ParamStore::new();
        let wd = WeightDecider::with_seed(&mut store, WdInit::Uniform, trial as u64);
        let f = features(&mut rng, n);
        let y = run_wd(&mut store, &wd, &f);
        for k in 0..128 {
            let col = (0..n).map(|i| f.data()[i * 128 + k]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            hull_err = hull_err.max(lo - y[k]).max(y[k] - hi);
        }
    }
    ensure(col_err < 1e-9, format!("column sum off by {col_err:e}"))?;
    ensure(hull_err < 1e-9, format!("outside the hull by {hull_err:e}"))?;
    Ok(format!("1000 inputs, column error {col_err:.1e}, hull excess {:.1e}", hull_err.max(0.0)))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(2..=12);
        let f = features(&mut rng, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let p = Tensor::from_fn([n, 128], |i| f.data()[order[i / 128] * 128 + i % 128]);
        let mut store = ParamStore::new();
        let wd = WeightDecider::with_seed(&mut store, WdInit::Uniform, trial);
        worst = worst.max(max_diff(&run_wd(&mut store, &wd, &f), &run_wd(&mut store, &wd, &p)));
        worst = worst.max(max_diff(&run_avg(&mut store, &f), &run_avg(&mut store, &p)));
    }
    ensure(worst < 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("100 permutations, max deviation {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = |e: clipscore::Error| e.to_string();
    for n in 2..60 {
        let mut a: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * 0.9).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let (ra, rb) = (average_ranks(&a), average_ranks(&b));
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        let nf = n as f64;
        let formula = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        ensure(spearman(&a, &b).map_err(err)? == formula, format!("n = {n}: differs from the rank-difference formula"))?;
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(0..5) as f64).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(0..7) as f64).collect();
        let Ok(r) = spearman(&a, &b) else { continue };
        worst = worst.max((r - brute_force(&a, &b)).abs());
    }
    ensure(worst < 1e-12, format!("tie oracle deviation {worst:e}"))?;
    ensure(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).map_err(err)? == 1.0, "identical order")?;
    ensure(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).map_err(err)? == -1.0, "reversed order")?;
    ensure(spearman(&[1.0, 3.0, 2.0], &[1.0, 2.0, 3.0]).map_err(err)? == 0.5, "one swap")?;
    Ok(format!("tie-free exact, tie oracle deviation {worst:.1e}"))
}

fn brute_force(a: &[f64], b: &[f64]) -> f64 {
    let rank = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|v| {
                let below = x.iter().filter(|w| *w < v).count() as f64;
                let equal = x.iter().filter(|w| *w == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Builds the backbone, runs one clip through it and keeps the structure for
/// the parameter-parity criterion.
fn geometry(depth: Depth, conv_type: ConvType, clip_len: usize) -> Result<Backbone, String> {
    let config = BackboneConfig::new(depth, conv_type, clip_len).map_err(|e| e.to_string())?;
    let heads = match depth {
        Depth::D34 => vec![256, 128],
        _ => vec![512, 256, 128],
    };
    let (backbone, mut store) = build_backbone::<f32>(config, 0).map_err(|e| e.to_string())?;
    let widths: Vec<usize> = backbone.head.iter().map(|l| l.out_features).collect();
    ensure(widths == heads, format!("{depth}: head widths {widths:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::from_fn([1, 3, clip_len, CROP, CROP], |_| rng.gen::<f32>());
    let mut fw = Forward::new(&mut store, Mode::Eval, false);
    let xv = fw.tape.constant(x);
    let y = backbone.forward(&mut fw, xv).map_err(|e| e.to_string())?;
    let y = fw.tape.value(y);
    ensure(y.shape() == [1, 128], format!("{depth} {} n={clip_len}: output {:?}", conv_type.label(), y.shape()))?;
    ensure(y.data().iter().all(|v| v.is_finite()), "non-finite feature")?;
    Ok(backbone)
}

fn criterion_6(built: &mut Vec<(Depth, Backbone, Backbone)>) -> Outcome {
    let start = Instant::now();
    for depth in [Depth::D34, Depth::D50] {
        let full = geometry(depth, ConvType::Conv3d, 8)?;
        let fact = geometry(depth, ConvType::Conv2plus1d, 8)?;
        built.push((depth, full, fact));
    }
    for n in [16, 32] {
        geometry(Depth::D34, ConvType::Conv2plus1d, n)?;
    }
    Ok(format!("7 backbones give [1, 128] features in {:.0} s", start.elapsed().as_secs_f64()))
}

fn criterion_7(built: &[(Depth, Backbone, Backbone)]) -> Outcome {
    ensure(!built.is_empty(), "no backbones from criterion 6")?;
    let mut layers = 0;
    for (depth, full, fact) in built {
        let (a, b) = (full.convs(), fact.convs());
        ensure(a.len() == b.len(), format!("{depth}: layer counts differ"))?;
        for (x, y) in a.iter().zip(&b) {
            let ConvUnit::Full(x) = x else { return Err(format!("{depth}: 3-D backbone holds a factorized layer")) };
            let [t, d, _] = x.spec.kernel;
            let bound = d * d * x.spec.in_channels + t * x.spec.out_channels;
            let diff = x.spec.weight_count().abs_diff(y.weight_count());
            ensure(diff <= bound, format!("{depth}: layer differs by {diff} > {bound}"))?;
            layers += 1;
        }
    }
    Ok(format!("{layers} layer pairs within the slack"))
}

fn spec(seed: u64, aggregation: &str, dir: &std::path::Path) -> ExperimentSpec {
    let json = format!(
        r#"{{
            "backbone": {{ "depth": "tiny", "conv_type": "conv3d", "clip_len": 8 }},
            "aggregation": {{ "kind": "{aggregation}" }},
            "train": {{ "epochs": 12, "lr_backbone": 1e-3, "lr_fresh": 3e-3, "seed": {seed} }},
            "data": {{ "synth": {{ "train_count": 120, "test_count": 40, "seed": {}, "frame_size": [32, 43] }} }},
            "output": {{ "dir": {:?} }}
        }}"#,
        1000 + seed,
        dir.to_str().unwrap()
    );
    ExperimentSpec::from_json(&json).unwrap()
}

fn criterion_8(dir: &std::path::Path) -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3 {
        let start = Instant::now();
        let s = spec(seed, "wd", &dir.join(format!("seed{seed}")));
        let report = cmd_train(&s, |_| {}).map_err(|e| format!("seed {seed}: {e}"))?;
        let secs = start.elapsed().as_secs_f64();
        let last = report.history.last().unwrap().test_spearman;
        let (early, late) = smoothed_train_loss(&report.history, 5).unwrap();
        lines.push(format!("seed {seed}: final {last:.3} best {:.3} loss {early:.1} -> {late:.1} in {secs:.0} s", report.spearman));
        if !(last >= 0.80 && late < early && secs < 900.0) {
            failures.push(seed);
        }
    }
    ensure(failures.is_empty(), format!("seeds {failures:?} failed; {}", lines.join("; ")))?;
    Ok(lines.join("; "))
}

fn criteria_9_and_10(dir: &std::path::Path) -> (Outcome, Outcome) {
    let s = spec(0, "wd", &dir.join("seed0"));
    let (train_set, test_set) = s.load_data().unwrap();
    let entries: Vec<MatrixEntry> = s.matrix_entries();
    let rows = run_experiment_matrix::<f32>(&entries, &train_set, &test_set, &s.train, WdInit::Uniform, |_, _| {});
    let csv = matrix_csv(&rows);
    let c9 = (|| {
        let lines: Vec<&str> = csv.lines().collect();
        ensure(lines.len() == 3, format!("expected 2 rows, got {}", lines.len() - 1))?;
        ensure(lines[1].starts_with("tiny,conv3d,8,wd,") && lines[2].starts_with("tiny,conv3d,8,avg,"), "row labels")?;
        ensure(!csv.contains("failed"), format!("failed row in\n{csv}"))?;
        let rho = |k: AggregationKind| rows.iter().find(|r| r.entry.aggregation == k).and_then(|r| r.spearman).unwrap();
        Ok(format!(
            "matrix rows wd {:.3}, avg {:.3}",
            rho(AggregationKind::WeightDecider),
            rho(AggregationKind::Average)
        ))
    })();
    let c10 = (|| {
        let on_disk = std::fs::read(dir.join("seed0/metrics.csv")).map_err(|e| format!("criterion 8 output missing: {e}"))?;
        let wd = rows.iter().find(|r| r.entry.aggregation == AggregationKind::WeightDecider).unwrap();
        ensure(wd.error.is_none(), "matrix run failed")?;
        let rerun = metrics_csv(&wd.history);
        ensure(on_disk == rerun.as_bytes(), "metrics differ between identical runs")?;
        Ok(format!("{} identical bytes", on_disk.len()))
    })();
    (c9, c10)
}

fn criterion_11() -> Outcome {
    let frames = Tensor::from_fn([96, 3, 4, 5], |i| i as f32);
    for (n, count) in [(8, 12), (16, 6), (32, 3)] {
        let clips = partition_clips(&frames, n).map_err(|e| e.to_string())?;
        ensure(clips.shape() == [count, 3, n, 4, 5], format!("n = {n}: shape {:?}", clips.shape()))?;
        ensure(unpartition_clips(&clips).map_err(|e| e.to_string())? == frames, format!("n = {n}: round trip"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 6];
    for _ in 0..10_000 {
        let end = crop_end(SYNTH_FRAMES, &mut rng, true).map_err(|e| e.to_string())?;
        ensure(end + 6 >= SYNTH_FRAMES, format!("end {end} outside the last six frames"))?;
        counts[end + 6 - SYNTH_FRAMES] += 1;
    }
    let worst = counts.iter().map(|&c| (c as f64 / 10_000.0 - 1.0 / 6.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.02, format!("end frequencies {counts:?}"))?;
    Ok(format!("12/6/3 clips, round trip exact, end frequencies {counts:?}"))
}

fn main() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |n: u32| only.as_ref().is_none_or(|set| set.contains(&n));
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(detail) => println!("criterion {n}: FAIL ({detail})"),
        }
        results.push((n, outcome));
    };

    let mut built = Vec::new();
    let quick: [(u32, fn() -> Outcome); 5] =
        [(2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5), (11, criterion_11)];
    for (n, f) in quick {
        if want(n) {
            report(n, f());
        }
    }
    if want(1) {
        report(1, criterion_1());
    }
    if want(6) || want(7) {
        let c6 = criterion_6(&mut built);
        if want(6) {
            report(6, c6);
        }
        if want(7) {
            report(7, criterion_7(&built));
        }
    }
    drop(built);
    if want(8) || want(10) {
        report(8, criterion_8(dir.path()));
    }
    if want(9) || want(10) {
        let (c9, c10) = criteria_9_and_10(dir.path());
        report(9, c9);
        if want(10) {
            report(10, c10);
        }
    }

    let failed: Vec<u32> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: {} criteria passed", results.len());
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
