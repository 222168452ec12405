use clipscore::autodiff::gradcheck::{check_graph, random_projection, CheckOptions};
use clipscore::nn::{
    global_avg_pool, midplanes, softmax_over_clips, BatchNorm3d, Conv2Plus1d, Conv3d, ConvSpec,
    ConvType, ConvUnit, Forward, Linear, Mode, ParamGroup, ParamStore,
};
use clipscore::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Direct-summation cross-correlation with zero padding.
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let [b, c, t, h, wd]: [usize; 5] = x.shape().try_into().unwrap();
    let [o, _, kt, kh, kw]: [usize; 5] = w.shape().try_into().unwrap();
    let out = |i: usize, k: usize, a: usize| (i + 2 * pad[a] - k) / stride[a] + 1;
    let (ot, oh, ow) = (out(t, kt, 0), out(h, kh, 1), out(wd, kw, 2));
    let mut y = Tensor::zeros([b, o, ot, oh, ow]);
    for n in 0..b {
        for oc in 0..o {
            for z in 0..ot {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                        for ic in 0..c {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let ti = (z * stride[0] + dt) as isize - pad[0] as isize;
                                        let hi = (yy * stride[1] + dh) as isize - pad[1] as isize;
                                        let wi = (xx * stride[2] + dw) as isize - pad[2] as isize;
                                        if ti < 0 || hi < 0 || wi < 0 {
                                            continue;
                                        }
                                        let (ti, hi, wi) = (ti as usize, hi as usize, wi as usize);
                                        if ti >= t || hi >= h || wi >= wd {
                                            continue;
                                        }
                                        acc += x.get(&[n, ic, ti, hi, wi]) * w.get(&[oc, ic, dt, dh, dw]);
                                    }
                                }
                            }
                        }
                        let idx = y.offset(&[n, oc, z, yy, xx]);
                        y.data_mut()[idx] = acc;
                    }
                }
            }
        }
    }
    y
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv3d_sums_a_cube_of_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones([1, 1, 3, 3, 3]));
    let w = tape.constant(Tensor::ones([1, 1, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros([1]));
    let y = tape.conv3d(x, w, Some(b), [1, 1, 1], [0, 0, 0]).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[27.0]);
}

#[test]
fn conv3d_delta_kernel_is_identity() {
    let input = random(&[2, 1, 4, 5, 6], 1);
    let mut kernel = Tensor::zeros([1, 1, 3, 3, 3]);
    let centre = kernel.offset(&[0, 0, 1, 1, 1]);
    kernel.data_mut()[centre] = 1.0;
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(kernel);
    let y = tape.conv3d(x, w, None, [1, 1, 1], [1, 1, 1]).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv3d_matches_direct_summation() {
    for (stride, seed) in [([1, 1, 1], 3u64), ([2, 2, 2], 4), ([1, 2, 2], 5)] {
        let x = random(&[1, 2, 4, 6, 6], seed);
        let w = random(&[3, 2, 3, 3, 3], seed + 100);
        let bias = random(&[3], seed + 200);
        let expected = conv_oracle(&x, &w, Some(bias.data()), stride, [1, 1, 1]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x), tape.constant(w), tape.constant(bias));
        let y = tape.conv3d(xv, wv, Some(bv), stride, [1, 1, 1]).unwrap();
        assert_eq!(tape.value(y).shape(), expected.shape());
        assert_close(tape.value(y).data(), expected.data(), 1e-10);
    }
}

#[test]
fn conv3d_pointwise_matches_direct_summation() {
    let x = random(&[2, 3, 2, 3, 4], 8);
    let w = random(&[5, 3, 1, 1, 1], 9);
    let expected = conv_oracle(&x, &w, None, [1, 1, 1], [0, 0, 0]);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x), tape.constant(w));
    let y = tape.conv3d(xv, wv, None, [1, 1, 1], [0, 0, 0]).unwrap();
    assert_close(tape.value(y).data(), expected.data(), 1e-12);
}

#[test]
fn conv3d_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones([1, 2, 3, 3, 3]));
    let w = tape.constant(Tensor::ones([1, 3, 3, 3, 3]));
    let err = tape.conv3d(x, w, None, [1, 1, 1], [0, 0, 0]).unwrap_err();
    assert!(matches!(err, clipscore::Error::Shape { op: "conv3d", .. }), "{err}");

    let w = tape.constant(Tensor::ones([1, 2, 5, 3, 3]));
    let err = tape.conv3d(x, w, None, [1, 1, 1], [0, 0, 0]).unwrap_err();
    assert!(matches!(err, clipscore::Error::Geometry { op: "conv3d", .. }), "{err}");
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inputs = [
            random(&[2, 2, 3, 4, 4], seed),
            random(&[3, 2, 3, 3, 3], seed + 10),
            random(&[3], seed + 20),
        ];
        let stride = if seed % 2 == 0 { [1, 1, 1] } else { [2, 2, 1] };
        let err = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let y = t.conv3d(v[0], v[1], Some(v[2]), stride, [1, 1, 1])?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn max_pool_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inputs = [random(&[2, 2, 3, 5, 5], seed + 40)];
        let err = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let y = t.max_pool3d(v[0], [1, 3, 3], [1, 2, 2], [0, 1, 1])?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn bn_forward(store: &mut ParamStore<f64>, bn: &BatchNorm3d, x: Tensor<f64>, mode: Mode) -> Tensor<f64> {
    let mut fw = Forward::new(store, mode, false);
    let xv = fw.tape.constant(x);
    let y = bn.forward(&mut fw, xv).unwrap();
    fw.tape.value(y).clone()
}

#[test]
fn batchnorm_train_standardizes_channels() {
    let mut store = ParamStore::new();
    let bn = BatchNorm3d::new(&mut store, "bn", 3, ParamGroup::Backbone);
    let x = random(&[4, 3, 2, 3, 3], 7).map(|v| 5.0 * v + 2.0);
    let y = bn_forward(&mut store, &bn, x, Mode::Train);
    let inner = 2 * 3 * 3;
    for c in 0..3 {
        let vals: Vec<f64> =
            (0..4).flat_map(|b| y.data()[(b * 3 + c) * inner..][..inner].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} variance {var}");
    }
    // Running statistics moved toward the batch statistics.
    let rm = store.get(bn.running_mean).data();
    assert!(rm.iter().all(|&m| m > 0.05), "{rm:?}");
}

#[test]
fn batchnorm_eval_applies_affine_map() {
    let mut store = ParamStore::new();
    let bn = BatchNorm3d::new(&mut store, "bn", 2, ParamGroup::Backbone);
    store.get_mut(bn.gamma).data_mut().fill(2.0);
    store.get_mut(bn.beta).data_mut().fill(1.0);
    let x = random(&[2, 2, 1, 2, 2], 11);
    let y = bn_forward(&mut store, &bn, x.clone(), Mode::Eval);
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    let expected: Vec<f64> = x.data().iter().map(|v| 2.0 * v * s + 1.0).collect();
    assert_close(y.data(), &expected, 1e-12);
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inputs = [random(&[2, 3, 2, 2, 2], seed), random(&[3], seed + 1), random(&[3], seed + 2)];
        let train = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let (y, _, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(train < 1e-4, "train seed {seed}: {train}");
        let eval = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(eval < 1e-4, "eval seed {seed}: {eval}");
    }
}

#[test]
fn conv2plus1d_zero_weights_give_zero_output() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ConvSpec::new(3, 4, [3, 3, 3]).pad([1, 1, 1]).with_bias(true);
    let layer = Conv2Plus1d::new(&mut store, "f", spec, ParamGroup::Backbone, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.entry(id).name.clone();
        if name.contains("weight") || name.contains("bias") {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let mut fw = Forward::new(&mut store, Mode::Eval, false);
    let x = fw.tape.constant(random(&[1, 3, 4, 5, 5], 1));
    let y = layer.forward(&mut fw, x).unwrap();
    assert!(fw.tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2plus1d_stem_geometry_matches_full_kernel() {
    let spec = ConvSpec::new(3, 64, [3, 7, 7]).stride([1, 2, 2]).pad([1, 3, 3]);
    let full = clipscore::nn::output_dims("conv3d", [16, 112, 112], spec.kernel, spec.stride, spec.pad)
        .unwrap();
    let spatial = clipscore::nn::output_dims("conv3d", [16, 112, 112], [1, 7, 7], [1, 2, 2], [0, 3, 3])
        .unwrap();
    let temporal = clipscore::nn::output_dims("conv3d", spatial, [3, 1, 1], [1, 1, 1], [1, 0, 0]).unwrap();
    assert_eq!(full, [16, 56, 56]);
    assert_eq!(temporal, full);

    // And through real layers on a reduced spatial extent.
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let small = ConvSpec::new(3, 4, [3, 7, 7]).stride([1, 2, 2]).pad([1, 3, 3]);
    let f = Conv2Plus1d::new(&mut store, "f", small, ParamGroup::Backbone, &mut rng);
    let d = Conv3d::new(&mut store, "d", small, ParamGroup::Backbone, &mut rng);
    let mut fw = Forward::new(&mut store, Mode::Eval, false);
    let x = fw.tape.constant(random(&[1, 3, 4, 14, 14], 2));
    let yf = f.forward(&mut fw, x).unwrap();
    let yd = d.forward(&mut fw, x).unwrap();
    assert_eq!(fw.tape.shape(yf), fw.tape.shape(yd));
}

#[test]
fn conv2plus1d_matches_staged_oracle() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = ConvSpec::new(2, 3, [3, 3, 3]).stride([2, 1, 2]).pad([1, 1, 1]).with_bias(true);
    let layer = Conv2Plus1d::new(&mut store, "f", spec, ParamGroup::Backbone, &mut rng);
    let x = random(&[2, 2, 4, 5, 6], 22);

    let ws = store.get(layer.spatial.weight).clone();
    let wt = store.get(layer.temporal.weight).clone();
    let bt = store.get(layer.temporal.bias.unwrap()).data().to_vec();
    let mid = conv_oracle(&x, &ws, None, [1, 1, 2], [0, 1, 1]);
    // Eval-mode batch norm with running mean 0 and variance 1.
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    let mid = mid.map(|v| (v * s).max(0.0));
    let expected = conv_oracle(&mid, &wt, Some(&bt), [2, 1, 1], [1, 0, 0]);

    let mut fw = Forward::new(&mut store, Mode::Eval, false);
    let xv = fw.tape.constant(x);
    let y = layer.forward(&mut fw, xv).unwrap();
    assert_eq!(fw.tape.shape(y), expected.shape());
    assert_close(fw.tape.value(y).data(), expected.data(), 1e-10);
}

#[test]
fn conv2plus1d_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::new(2, 3, [3, 3, 3]).pad([1, 1, 1]);
        let layer = Conv2Plus1d::new(&mut store, "f", spec, ParamGroup::Backbone, &mut rng);
        let inputs = [
            random(&[2, 2, 3, 4, 4], seed + 1),
            store.get(layer.spatial.weight).clone(),
            store.get(layer.temporal.weight).clone(),
        ];
        let mid = layer.mid_channels;
        let err = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let s = t.conv3d(v[0], v[1], None, [1, 1, 1], [0, 1, 1])?;
            let g = t.constant(Tensor::ones([mid]));
            let b = t.constant(Tensor::zeros([mid]));
            let (s, _, _) = t.batch_norm_train(s, g, b, 1e-5)?;
            let s = t.relu(s);
            let y = t.conv3d(s, v[2], None, [1, 1, 1], [1, 0, 0])?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn global_avg_pool_per_channel() {
    let mut data = vec![4.0; 8];
    data.extend(vec![6.0; 8]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([1, 2, 2, 2, 2], data).unwrap());
    let y = global_avg_pool(&mut tape, x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[4.0, 6.0]);
}

#[test]
fn linear_identity_and_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fc = Linear::new(&mut store, "fc", 3, 3, ParamGroup::Fresh, &mut rng);
    *store.get_mut(fc.weight) =
        Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    store.get_mut(fc.bias).data_mut().fill(0.0);
    let input = random(&[2, 3], 5);
    let mut fw = Forward::eval(&mut store);
    let x = fw.tape.constant(input.clone());
    let y = fc.forward(&mut fw, x).unwrap();
    assert_eq!(fw.tape.value(y), &input);

    assert_eq!(Linear::new(&mut store, "small", 2, 3, ParamGroup::Fresh, &mut rng).param_count(), 9);

    for seed in 0..5 {
        let inputs = [random(&[4, 3], seed), random(&[2, 3], seed + 1), random(&[2], seed + 2)];
        let err = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let wt = t.transpose(v[1])?;
            let y = t.matmul(v[0], wt)?;
            let ones = t.constant(Tensor::ones([4, 1]));
            let b = t.reshape(v[2], &[1, 2])?;
            let b = t.matmul(ones, b)?;
            let y = t.add(y, b)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn softmax_over_clips_examples() {
    let mut tape = Tape::<f64>::new();
    let raw = tape.constant(Tensor::zeros([2, 2]));
    let w = softmax_over_clips(&mut tape, raw).unwrap();
    assert_eq!(tape.value(w).data(), &[0.5; 4]);

    let raw = tape.constant(Tensor::new([2, 2], vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap());
    let w = softmax_over_clips(&mut tape, raw).unwrap();
    assert_close(tape.value(w).data(), &[0.75, 0.5, 0.25, 0.5], 1e-15);

    let raw = tape.constant(random(&[1, 5], 3));
    let w = softmax_over_clips(&mut tape, raw).unwrap();
    assert_eq!(tape.value(w).data(), &[1.0; 5]);
}

#[test]
fn softmax_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inputs = [random(&[4, 6], seed)];
        let err = check_graph(&inputs, &CheckOptions::default(), |t, v| {
            let y = softmax_over_clips(t, v[0])?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn conv_unit_never_factorizes_pointwise_kernels() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ConvSpec::new(4, 8, [1, 1, 1]).stride([2, 2, 2]);
    let unit = ConvUnit::new(&mut store, "p", spec, ConvType::Conv2plus1d, ParamGroup::Backbone, &mut rng);
    assert!(matches!(unit, ConvUnit::Full(_)));
}

fn conv_weights_3d(i: usize, o: usize, t: usize, d: usize) -> usize {
    t * d * d * i * o
}

proptest! {
    #[test]
    fn softmax_columns_are_probability_vectors(
        n in 1usize..13,
        d in 1usize..9,
        seed in any::<u64>(),
        scale in 0.1f64..30.0,
    ) {
        let x = random(&[n, d], seed).map(|v| v * scale);
        let mut tape = Tape::new();
        let raw = tape.constant(x);
        let w = softmax_over_clips(&mut tape, raw).unwrap();
        let w = tape.value(w);
        for k in 0..d {
            let col: Vec<f64> = (0..n).map(|i| w.get(&[i, k])).collect();
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(col.iter().all(|&p| (0.0..=1.0).contains(&p)));
            // Strictly interior while the logit spread is representable.
            if n > 1 && scale < 15.0 {
                prop_assert!(col.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant_per_column(
        n in 1usize..13,
        d in 1usize..9,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
    ) {
        let x = random(&[n, d], seed);
        let col = (seed as usize) % d;
        let mut shifted = x.clone();
        for i in 0..n {
            let idx = shifted.offset(&[i, col]);
            shifted.data_mut()[idx] += shift;
        }
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x), tape.constant(shifted));
        let wa = softmax_over_clips(&mut tape, a).unwrap();
        let wb = softmax_over_clips(&mut tape, b).unwrap();
        for (p, q) in tape.value(wa).data().iter().zip(tape.value(wb).data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn factorized_weight_count_stays_within_parity_slack(
        i in 1usize..600,
        o in 1usize..600,
        t in 1usize..6,
        d in 1usize..8,
    ) {
        let m = midplanes(i, o, t, d);
        let factorized = m * (d * d * i + t * o);
        let full = conv_weights_3d(i, o, t, d);
        prop_assert!(m >= 1);
        prop_assert!(factorized.abs_diff(full) <= d * d * i + t * o);
    }
}
