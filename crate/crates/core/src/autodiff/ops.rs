//! Primitive differentiable operations.

use super::float::{Float, Trans};
use super::tape::{Tape, Var};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// How the two operands of an elementwise op line up.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    ScalarLhs,
    ScalarRhs,
}

fn pairing(op: &'static str, a: &[usize], b: &[usize]) -> Result<Pairing> {
    if a == b {
        Ok(Pairing::Same)
    } else if numel(b) == 1 {
        Ok(Pairing::ScalarRhs)
    } else if numel(a) == 1 {
        Ok(Pairing::ScalarLhs)
    } else {
        Err(Error::shape(op, format!("operands {a:?} and {b:?} do not conform")))
    }
}

/// Sums a full-size gradient down to the operand's size when it was a
/// broadcast scalar.
fn reduce_to<F: Float>(grad: Vec<F>, scalar: bool) -> Vec<F> {
    if scalar {
        vec![grad.iter().copied().sum()]
    } else {
        grad
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl<F: Float> Tape<F> {
    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        forward: impl Fn(F, F) -> F,
        d_lhs: impl Fn(F, F) -> F + 'static,
        d_rhs: impl Fn(F, F) -> F + 'static,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let pairing = pairing(op, va.shape(), vb.shape())?;
        let (shape, data): (Vec<usize>, Vec<F>) = match pairing {
            Pairing::Same => (
                va.shape().to_vec(),
                va.data().iter().zip(vb.data()).map(|(&x, &y)| forward(x, y)).collect(),
            ),
            Pairing::ScalarRhs => {
                let y = vb.data()[0];
                (va.shape().to_vec(), va.data().iter().map(|&x| forward(x, y)).collect())
            }
            Pairing::ScalarLhs => {
                let x = va.data()[0];
                (vb.shape().to_vec(), vb.data().iter().map(|&y| forward(x, y)).collect())
            }
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.record(op, value, &[a, b], move |args| {
            let (x, y) = (args.input(0).data(), args.input(1).data());
            let n = args.grad.len();
            let at = |s: &[F], i: usize| if s.len() == 1 { s[0] } else { s[i] };
            let ga = args.needs[0].then(|| {
                let g = (0..n).map(|i| args.grad[i] * d_lhs(at(x, i), at(y, i))).collect();
                reduce_to(g, matches!(pairing, Pairing::ScalarLhs))
            });
            let gb = args.needs[1].then(|| {
                let g = (0..n).map(|i| args.grad[i] * d_rhs(at(x, i), at(y, i))).collect();
                reduce_to(g, matches!(pairing, Pairing::ScalarRhs))
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise sum; either operand may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, |_, _| F::one(), |_, _| F::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, |_, _| F::one(), |_, _| -F::one())
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        forward: impl Fn(F) -> F,
        derivative: impl Fn(F) -> F + 'static,
    ) -> Var {
        let value = self.value(a).map(forward);
        self.record(op, value, &[a], move |args| {
            let x = args.input(0).data();
            let g = args.grad.iter().zip(x).map(|(&g, &x)| g * derivative(x)).collect();
            vec![Some(g)]
        })
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        self.unary("scale", a, move |x| x * factor, move |_| factor)
    }

    pub fn add_scalar(&mut self, a: Var, offset: F) -> Var {
        self.unary("add_scalar", a, move |x| x + offset, |_| F::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            "relu",
            a,
            |x| if x > F::zero() { x } else { F::zero() },
            |x| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary("abs", a, |x| x.abs(), |x| {
            if x > F::zero() {
                F::one()
            } else if x < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        let two = F::from_f64_lossy(2.0);
        self.unary("square", a, |x| x * x, move |x| two * x)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, F::one(), va.data(), Trans::No, vb.data(), Trans::No, F::zero(), &mut out);
        let value = Tensor::new([m, n], out)?;
        Ok(self.record("matmul", value, &[a, b], move |args| {
            let (x, y) = (args.input(0).data(), args.input(1).data());
            let ga = args.needs[0].then(|| {
                let mut g = vec![F::zero(); m * k];
                F::gemm(m, n, k, F::one(), args.grad, Trans::No, y, Trans::Yes, F::zero(), &mut g);
                g
            });
            let gb = args.needs[1].then(|| {
                let mut g = vec![F::zero(); k * n];
                F::gemm(k, m, n, F::one(), x, Trans::Yes, args.grad, Trans::No, F::zero(), &mut g);
                g
            });
            vec![ga, gb]
        }))
    }

    /// Sums over `axis`, removing it. Reducing a 1-D tensor yields shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum_axis", a, axis, F::one())
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = self.shape(a).get(axis).copied().unwrap_or(1);
        self.reduce_axis("mean_axis", a, axis, F::one() / F::from_usize(len).unwrap())
    }

    fn reduce_axis(&mut self, op: &'static str, a: Var, axis: usize, weight: F) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.ndim() {
            return Err(Error::shape(op, format!("axis {axis} out of range for {:?}", va.shape())));
        }
        let (outer, len, inner) = split_axis(va.shape(), axis);
        let x = va.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..][..inner];
                for (d, &s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= weight);
        let value = Tensor::new(reduced_shape(va.shape(), axis), out)?;
        Ok(self.record(op, value, &[a], move |args| {
            let mut g = vec![F::zero(); outer * len * inner];
            for o in 0..outer {
                let src = &args.grad[o * inner..][..inner];
                for l in 0..len {
                    for (d, &s) in g[(o * len + l) * inner..][..inner].iter_mut().zip(src) {
                        *d = s * weight;
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n]).expect("flatten");
        self.sum_axis(flat, 0).expect("sum over axis 0")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n]).expect("flatten");
        self.mean_axis(flat, 0).expect("mean over axis 0")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.record("reshape", value, &[a], |args| vec![Some(args.grad.to_vec())]))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ndim() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {:?}", va.shape())));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let value = Tensor::new([c, r], transpose_data(va.data(), r, c))?;
        Ok(self.record("transpose", value, &[a], move |args| {
            vec![Some(transpose_data(args.grad, c, r))]
        }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let conforms = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !conforms {
                return Err(Error::shape("concat", format!("{s:?} does not conform to {base:?}")));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&self.value(p).data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.record("concat", value, parts, move |args| {
            let mut grads: Vec<Vec<F>> =
                lens.iter().map(|&len| Vec::with_capacity(outer * len * inner)).collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (g, &len) in grads.iter_mut().zip(&lens) {
                    g.extend_from_slice(&args.grad[cursor..cursor + len * inner]);
                    cursor += len * inner;
                }
            }
            grads.into_iter().zip(args.needs).map(|(g, &need)| need.then_some(g)).collect()
        }))
    }

    /// Softmax along `axis`, with the per-slice maximum subtracted first.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.ndim() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {:?}", va.shape())));
        }
        let (outer, len, inner) = split_axis(va.shape(), axis);
        let x = va.data();
        let mut y = vec![F::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[idx(l)]).fold(F::neg_infinity(), F::max);
                let mut total = F::zero();
                for l in 0..len {
                    let e = (x[idx(l)] - max).exp();
                    y[idx(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    y[idx(l)] /= total;
                }
            }
        }
        let value = Tensor::new(va.shape().to_vec(), y)?;
        Ok(self.record("softmax", value, &[a], move |args| {
            let (y, g) = (args.output.data(), args.grad);
            let mut dx = vec![F::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let dot: F = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                    for l in 0..len {
                        dx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

fn transpose_data<F: Float>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
