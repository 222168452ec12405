use clipscore::autodiff::gradcheck::finite_diff_grad;
use clipscore::nn::{Forward, ParamStore};
use clipscore::scoring::{predict_score, predict_scores, score_loss, score_loss_value, LinearRegressor};
use clipscore::{Error, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn feature(head: &[f64]) -> Tensor<f64> {
    let mut v = vec![0.0; 128];
    v[..head.len()].copy_from_slice(head);
    Tensor::new([128], v).unwrap()
}

fn regressor(w: &[f64], b: f64) -> (ParamStore<f64>, LinearRegressor) {
    let mut store = ParamStore::new();
    let reg = LinearRegressor::with_seed(&mut store, 0);
    *store.get_mut(reg.w) = feature(w);
    store.get_mut(reg.b).data_mut()[0] = b;
    (store, reg)
}

#[test]
fn zero_regressor_scores_zero() {
    let (mut store, reg) = regressor(&[], 0.0);
    let p = predict_score(&mut store, &reg, &feature(&[5.0, -2.0]), 3.0).unwrap();
    assert_eq!(p.final_score, 0.0);
}

#[test]
fn dot_product_times_difficulty() {
    let (mut store, reg) = regressor(&[1.0, 2.0], 1.0);
    let p = predict_score(&mut store, &reg, &feature(&[2.0, 3.0]), 2.0).unwrap();
    assert_eq!((p.raw_score, p.final_score, p.difficulty), (9.0, 18.0, 2.0));
    let p = predict_score(&mut store, &reg, &feature(&[2.0, 3.0]), 1.0).unwrap();
    assert_eq!(p.final_score, p.raw_score);
}

#[test]
fn non_positive_difficulty_is_an_input_error() {
    let (mut store, reg) = regressor(&[1.0], 0.0);
    for d in [0.0, -1.0, f64::NAN] {
        let err = predict_score(&mut store, &reg, &feature(&[1.0]), d).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");
    }
}

#[test]
fn prediction_is_linear_in_the_feature() {
    let mut store = ParamStore::<f64>::new();
    let reg = LinearRegressor::with_seed(&mut store, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Tensor::from_fn([128], |_| rng.gen_range(-1.0..1.0));
    let b = Tensor::from_fn([128], |_| rng.gen_range(-1.0..1.0));
    let (s, t) = (0.7, -1.3);
    let mix = Tensor::from_fn([128], |i| s * a.data()[i] + t * b.data()[i]);
    let zero = Tensor::zeros([128]);
    let f = |store: &mut ParamStore<f64>, x: &Tensor<f64>| predict_score(store, &reg, x, 2.5).unwrap().final_score;
    let (fa, fb, fm, f0) = (f(&mut store, &a), f(&mut store, &b), f(&mut store, &mix), f(&mut store, &zero));
    // Affine: f(sa + tb) - f0 = s (f(a) - f0) + t (f(b) - f0).
    assert!(((fm - f0) - s * (fa - f0) - t * (fb - f0)).abs() < 1e-10);
}

#[test]
fn batched_prediction() {
    let (mut store, reg) = regressor(&[1.0, 2.0], 1.0);
    let mut fw = Forward::eval(&mut store);
    let v = Tensor::new([2, 128], [feature(&[2.0, 3.0]).into_data(), feature(&[1.0, 0.0]).into_data()].concat()).unwrap();
    let v = fw.tape.constant(v);
    let (raw, fin) = predict_scores(&mut fw, &reg, v, &[2.0, 3.0]).unwrap();
    assert_eq!(fw.tape.value(raw).data(), &[9.0, 2.0]);
    assert_eq!(fw.tape.value(fin).data(), &[18.0, 6.0]);
    let err = predict_scores(&mut fw, &reg, v, &[2.0]).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn loss_examples() {
    assert_eq!(score_loss_value(10.0, 7.0), 12.0);
    assert_eq!(score_loss_value(5.0, 5.0), 0.0);
    assert_eq!(score_loss_value(0.0, 2.5), 8.75);
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new([3], vec![10.0, 5.0, 0.0]).unwrap());
    let t = tape.constant(Tensor::new([3], vec![7.0, 5.0, 2.5]).unwrap());
    let l = score_loss(&mut tape, p, t).unwrap();
    assert!((tape.value(l).data()[0] - (12.0 + 0.0 + 8.75) / 3.0).abs() < 1e-12);
}

#[test]
fn loss_is_non_negative_and_zero_only_at_the_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let (p, t): (f64, f64) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        assert!(score_loss_value(p, t) > 0.0);
        assert_eq!(score_loss_value(t, t), 0.0);
    }
}

#[test]
fn loss_gradient_is_two_d_plus_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let p: f64 = rng.gen_range(-20.0..20.0);
        let mut t: f64 = rng.gen_range(-20.0..20.0);
        if (p - t).abs() < 1e-3 {
            t += 1.0;
        }
        let mut tape = Tape::new();
        let pv = tape.leaf(Tensor::new([1], vec![p]).unwrap(), true);
        let tv = tape.constant(Tensor::new([1], vec![t]).unwrap());
        let l = score_loss(&mut tape, pv, tv).unwrap();
        let g = tape.backward(l).unwrap().get(pv).unwrap().data()[0];
        let d = p - t;
        assert!((g - (2.0 * d + d.signum())).abs() < 1e-12);
        let numeric = finite_diff_grad(|x| score_loss_value(x.data()[0], t), &Tensor::new([1], vec![p]).unwrap(), 1e-5);
        assert!((g - numeric[0]).abs() / g.abs().max(1.0) < 1e-6);
    }
}

#[test]
fn loss_subgradient_at_the_kink_is_the_l2_part() {
    let mut tape = Tape::<f64>::new();
    let pv = tape.leaf(Tensor::new([1], vec![4.0]).unwrap(), true);
    let tv = tape.constant(Tensor::new([1], vec![4.0]).unwrap());
    let l = score_loss(&mut tape, pv, tv).unwrap();
    assert_eq!(tape.backward(l).unwrap().get(pv).unwrap().data(), &[0.0]);
}

#[test]
fn checkpoint_names() {
    let mut store = ParamStore::<f32>::new();
    LinearRegressor::with_seed(&mut store, 0);
    let names: Vec<_> = store.entries().iter().map(|e| (e.name.as_str(), e.value.shape().to_vec())).collect();
    assert_eq!(names, vec![("regressor.w", vec![128]), ("regressor.b", vec![1])]);
}
