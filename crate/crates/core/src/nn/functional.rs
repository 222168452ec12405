//! Differentiable volumetric kernels: convolution, max pooling and batch
//! normalization over `[B, C, T, H, W]` tensors.

use crate::autodiff::{Float, Tape, Tensor, Trans, Var};
use crate::error::{Error, Result};
use crate::parallel;

/// Extents along (time, height, width).
pub type Triple = [usize; 3];

/// `floor((input + 2 pad - kernel) / stride) + 1`, or `None` if no window fits.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

pub fn output_dims(
    op: &'static str,
    input: Triple,
    kernel: Triple,
    stride: Triple,
    pad: Triple,
) -> Result<Triple> {
    let mut out = [0; 3];
    for axis in 0..3 {
        out[axis] = output_extent(input[axis], kernel[axis], stride[axis], pad[axis]).ok_or_else(
            || {
                Error::geometry(
                    op,
                    format!(
                        "input {input:?} with kernel {kernel:?}, stride {stride:?}, padding {pad:?} \
                         leaves no output positions"
                    ),
                )
            },
        )?;
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    channels: usize,
    input: Triple,
    kernel: Triple,
    stride: Triple,
    pad: Triple,
    output: Triple,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn p(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Calls `f(row, col_offset, input_offset)` for every in-bounds tap, where
    /// `row` indexes the unrolled `[K, P]` matrix.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let [ot, oh, ow] = self.output;
        let p = self.p();
        for c in 0..self.channels {
            for dt in 0..kt {
                let rt = valid_range(ot, st, dt, pt, it);
                for dh in 0..kh {
                    let rh = valid_range(oh, sh, dh, ph, ih);
                    for dw in 0..kw {
                        let rw = valid_range(ow, sw, dw, pw, iw);
                        let row = ((c * kt + dt) * kh + dh) * kw + dw;
                        for to in rt.clone() {
                            let ti = to * st + dt - pt;
                            for ho in rh.clone() {
                                let hi = ho * sh + dh - ph;
                                let in_row = ((c * it + ti) * ih + hi) * iw + dw;
                                let col_row = row * p + (to * oh + ho) * ow;
                                for wo in rw.clone() {
                                    f(row, col_row + wo, in_row + wo * sw - pw);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<F: Float>(&self, x: &[F], col: &mut [F]) {
        col.iter_mut().for_each(|v| *v = F::zero());
        self.for_each_tap(|_, c, i| col[c] = x[i]);
    }

    fn col2im<F: Float>(&self, col: &[F], dx: &mut [F]) {
        self.for_each_tap(|_, c, i| dx[i] += col[c]);
    }
}

/// Output positions `o` with `0 <= o * stride + tap - pad < input`.
#[inline]
fn valid_range(out: usize, stride: usize, tap: usize, pad: usize, input: usize) -> std::ops::Range<usize> {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if input + pad > tap { (input + pad - tap - 1) / stride + 1 } else { 0 };
    lo.min(out)..hi.min(out).max(lo.min(out))
}

fn dims5(op: &'static str, shape: &[usize]) -> Result<[usize; 5]> {
    shape
        .try_into()
        .map_err(|_| Error::shape(op, format!("expected [B, C, T, H, W], got {shape:?}")))
}

impl<F: Float> Tape<F> {
    /// 3-D cross-correlation with zero padding.
    ///
    /// `x: [B, C, T, H, W]`, `weight: [O, C, kt, kh, kw]`, `bias: [O]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: Triple,
        pad: Triple,
    ) -> Result<Var> {
        let [b, c, t, h, w] = dims5("conv3d", self.shape(x))?;
        let [o, wc, kt, kh, kw] = dims5("conv3d", self.shape(weight))?;
        if wc != c {
            return Err(Error::shape(
                "conv3d",
                format!("input has {c} channels but the kernel expects {wc}"),
            ));
        }
        if let Some(bias) = bias {
            if self.shape(bias) != [o] {
                return Err(Error::shape(
                    "conv3d",
                    format!("bias shape {:?} does not match {o} output channels", self.shape(bias)),
                ));
            }
        }
        let kernel = [kt, kh, kw];
        let output = output_dims("conv3d", [t, h, w], kernel, stride, pad)?;
        let geom = ConvGeom { channels: c, input: [t, h, w], kernel, stride, pad, output };
        let (k, p, in_len) = (geom.k(), geom.p(), geom.in_len());

        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let bv = bias.map(|v| self.value(v).data());
        let mut out = vec![F::zero(); b * o * p];
        parallel::for_each_chunk(&mut out, o * p, |s, out_s| {
            let xs = &xv[s * in_len..][..in_len];
            let mut col = Vec::new();
            let col_s: &[F] = if geom.pointwise() {
                xs
            } else {
                col.resize(k * p, F::zero());
                geom.im2col(xs, &mut col);
                &col
            };
            F::gemm(o, k, p, F::one(), wv, Trans::No, col_s, Trans::No, F::zero(), out_s);
            if let Some(bv) = bv {
                for (row, &bias) in out_s.chunks_mut(p).zip(bv) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        });
        let value = Tensor::new([b, o, output[0], output[1], output[2]], out)?;

        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record("conv3d", value, &inputs, move |args| {
            let xv = args.input(0).data();
            let wv = args.input(1).data();
            let dy = args.grad;

            let dx = args.needs[0].then(|| {
                let mut dx = vec![F::zero(); b * in_len];
                parallel::for_each_chunk(&mut dx, in_len, |s, dx_s| {
                    let dy_s = &dy[s * o * p..][..o * p];
                    if geom.pointwise() {
                        F::gemm(k, o, p, F::one(), wv, Trans::Yes, dy_s, Trans::No, F::zero(), dx_s);
                    } else {
                        let mut dcol = vec![F::zero(); k * p];
                        F::gemm(k, o, p, F::one(), wv, Trans::Yes, dy_s, Trans::No, F::zero(), &mut dcol);
                        geom.col2im(&dcol, dx_s);
                    }
                });
                dx
            });

            let dw = args.needs[1].then(|| {
                let partials = parallel::map(b, |s| {
                    let xs = &xv[s * in_len..][..in_len];
                    let dy_s = &dy[s * o * p..][..o * p];
                    let mut col = Vec::new();
                    let col_s: &[F] = if geom.pointwise() {
                        xs
                    } else {
                        col.resize(k * p, F::zero());
                        geom.im2col(xs, &mut col);
                        &col
                    };
                    let mut part = vec![F::zero(); o * k];
                    F::gemm(o, p, k, F::one(), dy_s, Trans::No, col_s, Trans::Yes, F::zero(), &mut part);
                    part
                });
                sum_in_order(partials, o * k)
            });

            let mut grads = vec![dx, dw];
            if args.needs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut db = vec![F::zero(); o];
                    for s in 0..b {
                        for (d, row) in db.iter_mut().zip(dy[s * o * p..][..o * p].chunks(p)) {
                            *d += row.iter().copied().sum::<F>();
                        }
                    }
                    db
                }));
            }
            grads
        }))
    }

    /// Max pooling over `[B, C, T, H, W]`; padded positions never win.
    pub fn max_pool3d(&mut self, x: Var, kernel: Triple, stride: Triple, pad: Triple) -> Result<Var> {
        let [b, c, t, h, w] = dims5("max_pool3d", self.shape(x))?;
        let output = output_dims("max_pool3d", [t, h, w], kernel, stride, pad)?;
        if (0..3).any(|a| pad[a] >= kernel[a].max(1) && pad[a] > 0) {
            return Err(Error::geometry("max_pool3d", "padding must be smaller than the kernel"));
        }
        let geom = ConvGeom { channels: 1, input: [t, h, w], kernel, stride, pad, output };
        let (in_len, p) = (t * h * w, geom.p());
        let xv = self.value(x).data();
        let mut out = vec![F::neg_infinity(); b * c * p];
        let mut argmax = vec![usize::MAX; b * c * p];
        for plane in 0..b * c {
            let xs = &xv[plane * in_len..][..in_len];
            let os = &mut out[plane * p..][..p];
            let am = &mut argmax[plane * p..][..p];
            geom.for_each_tap(|row, col, i| {
                // `col` indexes row `row` of a [K, P] matrix; recover the output position.
                let pos = col - row * p;
                if xs[i] > os[pos] || am[pos] == usize::MAX {
                    os[pos] = xs[i];
                    am[pos] = plane * in_len + i;
                }
            });
        }
        let value = Tensor::new([b, c, output[0], output[1], output[2]], out)?;
        let total = b * c * in_len;
        Ok(self.record("max_pool3d", value, &[x], move |args| {
            let mut dx = vec![F::zero(); total];
            for (&src, &g) in argmax.iter().zip(args.grad) {
                dx[src] += g;
            }
            vec![Some(dx)]
        }))
    }

    /// Training-mode batch normalization over every axis except 1.
    ///
    /// Returns the normalized output together with the per-channel batch mean
    /// and biased variance used for it.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<(Var, Vec<F>, Vec<F>)> {
        let (b, c, inner) = self.bn_dims(x, gamma, beta)?;
        let xv = self.value(x).data();
        let count = F::from_usize(b * inner).unwrap();
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ch in 0..c {
            let slices = || (0..b).flat_map(|s| xv[(s * c + ch) * inner..][..inner].iter().copied());
            let m = slices().sum::<F>() / count;
            let v = slices().map(|x| (x - m) * (x - m)).sum::<F>() / count;
            mean[ch] = m;
            var[ch] = v;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, b, c, inner);
        let value = Tensor::new(self.shape(x).to_vec(), out)?;

        let (mean_c, inv_c) = (mean.clone(), inv_std);
        let y = self.record("batch_norm", value, &[x, gamma, beta], move |args| {
            let xv = args.input(0).data();
            let gv = args.input(1).data();
            let dy = args.grad;
            let mut dgamma = vec![F::zero(); c];
            let mut dbeta = vec![F::zero(); c];
            for ch in 0..c {
                for s in 0..b {
                    let off = (s * c + ch) * inner;
                    for i in off..off + inner {
                        let xhat = (xv[i] - mean_c[ch]) * inv_c[ch];
                        dgamma[ch] += dy[i] * xhat;
                        dbeta[ch] += dy[i];
                    }
                }
            }
            let dx = args.needs[0].then(|| {
                let mut dx = vec![F::zero(); xv.len()];
                for ch in 0..c {
                    let scale = gv[ch] * inv_c[ch] / count;
                    for s in 0..b {
                        let off = (s * c + ch) * inner;
                        for i in off..off + inner {
                            let xhat = (xv[i] - mean_c[ch]) * inv_c[ch];
                            dx[i] = scale * (count * dy[i] - dbeta[ch] - xhat * dgamma[ch]);
                        }
                    }
                }
                dx
            });
            vec![dx, args.needs[1].then_some(dgamma), args.needs[2].then_some(dbeta)]
        });
        Ok((y, mean, var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Result<Var> {
        let (b, c, inner) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics do not match channels"));
        }
        let mean = running_mean.to_vec();
        let inv_std: Vec<F> = running_var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, b, c, inner);
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.record("batch_norm_eval", value, &[x, gamma, beta], move |args| {
            let xv = args.input(0).data();
            let gv = args.input(1).data();
            let dy = args.grad;
            let mut dx = vec![F::zero(); xv.len()];
            let mut dgamma = vec![F::zero(); c];
            let mut dbeta = vec![F::zero(); c];
            for s in 0..b {
                for ch in 0..c {
                    let off = (s * c + ch) * inner;
                    for i in off..off + inner {
                        let xhat = (xv[i] - mean[ch]) * inv_std[ch];
                        dgamma[ch] += dy[i] * xhat;
                        dbeta[ch] += dy[i];
                        dx[i] = dy[i] * gv[ch] * inv_std[ch];
                    }
                }
            }
            vec![args.needs[0].then_some(dx), args.needs[1].then_some(dgamma), args.needs[2].then_some(dbeta)]
        }))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("expected [B, C, ...], got {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input has {c} channels, scale/shift have shapes {:?}/{:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok((b, c, shape[2..].iter().product()))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[F],
        inv_std: &[F],
        b: usize,
        c: usize,
        inner: usize,
    ) -> Vec<F> {
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![F::zero(); xv.len()];
        for s in 0..b {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                let scale = gv[ch] * inv_std[ch];
                let shift = bv[ch] - mean[ch] * scale;
                for i in off..off + inner {
                    out[i] = xv[i] * scale + shift;
                }
            }
        }
        out
    }
}

fn sum_in_order<F: Float>(parts: Vec<Vec<F>>, len: usize) -> Vec<F> {
    let mut acc = vec![F::zero(); len];
    for part in parts {
        acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
    }
    acc
}
