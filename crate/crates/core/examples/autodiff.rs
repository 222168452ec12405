//! Reverse-mode gradients of a small expression, checked against central
//! differences.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use clipscore::autodiff::gradcheck::{finite_diff_grad, relative_error};
use clipscore::{Tape, Tensor};

/// `sum(relu(A x) ^ 2) + 0.5 * sum(|x|)`
fn loss(tape: &mut Tape<f64>, a: &Tensor<f64>, x: &Tensor<f64>, grad: bool) -> (clipscore::Var, clipscore::Var) {
    let av = tape.constant(a.clone());
    let xv = tape.leaf(x.clone(), grad);
    let ax = tape.matmul(av, xv).unwrap();
    let r = tape.relu(ax);
    let sq = tape.square(r);
    let s = tape.sum_all(sq);
    let ab = tape.abs(xv);
    let l1 = tape.sum_all(ab);
    let l1 = tape.scale(l1, 0.5);
    (tape.add(s, l1).unwrap(), xv)
}

fn main() -> clipscore::Result<()> {
    let a = Tensor::new([3, 2], vec![1.0, -2.0, 0.5, 1.5, -1.0, 0.25])?;
    let x = Tensor::new([2, 2], vec![0.3, -0.7, 1.1, 0.4])?;

    let mut tape = Tape::new();
    let (root, xv) = loss(&mut tape, &a, &x, true);
    let grads = tape.backward(root)?;
    let analytic = grads.get(xv).expect("x requires a gradient");
    println!("loss      {:.6}", tape.value(root).data()[0]);
    println!("analytic  {:?}", analytic.data());

    let numeric = finite_diff_grad(
        |p| {
            let mut t = Tape::new();
            let (r, _) = loss(&mut t, &a, p, false);
            t.value(r).data()[0]
        },
        &x,
        1e-6,
    );
    println!("numeric   {numeric:?}");
    println!("rel error {:.2e}", relative_error(analytic.data(), &numeric));
    Ok(())
}
