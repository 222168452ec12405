//! Central finite differences, the reference every backward rule is checked
//! against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::float::Float;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// `(f(x + eps e_k) - f(x - eps e_k)) / (2 eps)` for every coordinate `k`.
pub fn finite_diff_grad<F: Float>(
    f: impl FnMut(&Tensor<F>) -> F,
    x: &Tensor<F>,
    eps: F,
) -> Vec<F> {
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_grad_at(f, x, &coords, eps)
}

/// Central differences restricted to the listed coordinates.
pub fn finite_diff_grad_at<F: Float>(
    mut f: impl FnMut(&Tensor<F>) -> F,
    x: &Tensor<F>,
    coords: &[usize],
    eps: F,
) -> Vec<F> {
    assert!(eps > F::zero(), "eps must be positive");
    let two_eps = eps + eps;
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&k| {
            let orig = probe.data()[k];
            probe.data_mut()[k] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[k] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[k] = orig;
            (plus - minus) / two_eps
        })
        .collect()
}

/// Norm-wise relative error `|a - n| / max(|a| + |n|, floor)`.
///
/// The floor keeps an all-zero gradient pair from reporting 0/0; two vectors
/// that are both below it compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-8)
}

/// Reduces `y` to a scalar through a fixed random weighting, `sum(y * r)`.
///
/// A plain sum would hide errors in any rule whose gradient is orthogonal to
/// the all-ones direction (batch normalization, softmax).
pub fn random_projection<F: Float>(tape: &mut Tape<F>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = tape.shape(y).to_vec();
    let r = Tensor::from_fn(shape, |_| F::from_f64_lossy(rng.gen_range(-1.0..1.0)));
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum_all(prod))
}

/// Options for [`check_graph`].
#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input, chosen with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Operation whose backward rule is deliberately corrupted.
    pub fault: Option<String>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { eps: 1e-5, max_coords: None, seed: 0, fault: None }
    }
}

/// Builds the scalar graph `build(tape, leaves)` once with gradients and
/// compares them with central differences of fresh forward passes.
///
/// Returns the largest per-input relative error.
pub fn check_graph<B>(inputs: &[Tensor<f64>], opts: &CheckOptions, build: B) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(op) = &opts.fault {
        tape.inject_fault(op.clone());
    }
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = build(&mut tape, &leaves)?;
    let grads = tape.backward(root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(leaves[i]).expect("leaf gradient");
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < input.numel() => {
                rand::seq::index::sample(&mut rng, input.numel(), m).into_vec()
            }
            _ => (0..input.numel()).collect(),
        };
        let mut failure = None;
        let numeric = finite_diff_grad_at(
            |probe| {
                let mut t = Tape::new();
                let leaves: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.leaf(if j == i { probe.clone() } else { x.clone() }, false))
                    .collect();
                match build(&mut t, &leaves) {
                    Ok(root) => t.value(root).data()[0],
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            input,
            &coords,
            opts.eps,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let picked: Vec<f64> = coords.iter().map(|&k| analytic.data()[k]).collect();
        let err = relative_error(&picked, &numeric);
        worst = if err.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(err) };
    }
    Ok(worst)
}
