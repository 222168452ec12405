use rand::Rng;

use super::{VideoSample, WINDOW};
use crate::autodiff::{Float, Tensor};
use crate::backbone::{CLIP_LENS, CROP};
use crate::error::{Error, Result};

pub const RESIZE_H: usize = 128;
pub const RESIZE_W: usize = 171;
/// Top-left corner of the centered 112x112 crop inside the resized frame.
pub const CROP_ROW: usize = (RESIZE_H - CROP) / 2;
pub const CROP_COL: usize = (RESIZE_W - CROP) / 2;

/// Index of the last frame of the window. Train mode draws it uniformly from
/// the last `min(6, L - 95)` frames; eval mode takes the final frame.
pub fn crop_end(len: usize, rng: &mut impl Rng, train: bool) -> Result<usize> {
    if len < WINDOW {
        return Err(Error::Input(format!("video has {len} frames, at least {WINDOW} needed")));
    }
    if !train {
        return Ok(len - 1);
    }
    let choices = 6.min(len - WINDOW + 1);
    Ok(len - choices + rng.gen_range(0..choices))
}

/// The 96 frames ending at [`crop_end`], in order.
pub fn temporal_crop(sample: &VideoSample, rng: &mut impl Rng, train: bool) -> Result<Tensor<f32>> {
    let end = crop_end(sample.len(), rng, train)?;
    let shape = sample.frames.shape();
    let frame = shape[1..].iter().product::<usize>();
    let start = end + 1 - WINDOW;
    let data = sample.frames.data()[start * frame..(end + 1) * frame].to_vec();
    Tensor::new([WINDOW, shape[1], shape[2], shape[3]], data)
}

/// Source taps for one output coordinate of a corner-aligned bilinear resize.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w: f32,
}

/// Corner-aligned sampling: output index `i` of `out` maps to source
/// coordinate `i (src - 1) / (out - 1)`.
fn taps(src: usize, out: usize, range: std::ops::Range<usize>) -> Vec<Tap> {
    range
        .map(|i| {
            let pos = if out > 1 { i as f64 * (src - 1) as f64 / (out - 1) as f64 } else { 0.0 };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, w: (pos - lo as f64) as f32 }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, w: f32) -> f32 {
    a + w * (b - a)
}

/// Bilinear resize of every `[H, W]` plane to 128x171 followed by the
/// centered 112x112 crop (rows 8..=119, columns 29..=140). Only the cropped
/// pixels are computed.
pub fn resize_crop(frames: &Tensor<f32>) -> Result<Tensor<f32>> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::shape("spatial_transform", format!("expected [T, C, H, W], got {shape:?}")));
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let rows = taps(h, RESIZE_H, CROP_ROW..CROP_ROW + CROP);
    let cols = taps(w, RESIZE_W, CROP_COL..CROP_COL + CROP);
    let src = frames.data();
    let mut out = vec![0f32; t * c * CROP * CROP];
    for (plane, dst) in out.chunks_mut(CROP * CROP).enumerate() {
        let p = &src[plane * h * w..][..h * w];
        for (r, row) in rows.iter().enumerate() {
            let (a, b) = (&p[row.lo * w..][..w], &p[row.hi * w..][..w]);
            for (k, col) in cols.iter().enumerate() {
                let top = lerp(a[col.lo], a[col.hi], col.w);
                let bottom = lerp(b[col.lo], b[col.hi], col.w);
                dst[r * CROP + k] = lerp(top, bottom, row.w);
            }
        }
    }
    Tensor::new([t, c, CROP, CROP], out)
}

/// Mirrors every plane left to right.
pub fn flip_horizontal<F: Float>(frames: &Tensor<F>) -> Tensor<F> {
    let w = *frames.shape().last().unwrap();
    let mut out = frames.clone();
    out.data_mut().chunks_mut(w).for_each(|row| row.reverse());
    out
}

/// Resize, center crop and, in train mode, one horizontal-flip coin for the
/// whole video.
pub fn spatial_transform(frames: &Tensor<f32>, rng: &mut impl Rng, train: bool) -> Result<Tensor<f32>> {
    let out = resize_crop(frames)?;
    Ok(if train && rng.gen_bool(0.5) { flip_horizontal(&out) } else { out })
}

fn check_clip_len(n: usize) -> Result<()> {
    if CLIP_LENS.contains(&n) {
        Ok(())
    } else {
        Err(Error::Config(format!("clip length must be one of 8, 16, 32, got {n}")))
    }
}

/// `[96, C, H, W]` frames to `[96 / n, C, n, H, W]` clips; clip `i` holds
/// frames `i n ..= (i + 1) n - 1`.
pub fn partition_clips<F: Float>(frames: &Tensor<F>, n: usize) -> Result<Tensor<F>> {
    check_clip_len(n)?;
    let shape = frames.shape();
    if shape.len() != 4 || shape[0] != WINDOW {
        return Err(Error::shape("partition_clips", format!("expected [96, C, H, W], got {shape:?}")));
    }
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let clips = WINDOW / n;
    let src = frames.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..clips {
        for ch in 0..c {
            for j in 0..n {
                let f = i * n + j;
                out.extend_from_slice(&src[(f * c + ch) * plane..][..plane]);
            }
        }
    }
    Tensor::new([clips, c, n, shape[2], shape[3]], out)
}

/// Inverse of [`partition_clips`].
pub fn unpartition_clips<F: Float>(clips: &Tensor<F>) -> Result<Tensor<F>> {
    let shape = clips.shape();
    if shape.len() != 5 {
        return Err(Error::shape("unpartition_clips", format!("expected [N, C, n, H, W], got {shape:?}")));
    }
    let (count, c, n, plane) = (shape[0], shape[1], shape[2], shape[3] * shape[4]);
    let src = clips.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..count {
        for j in 0..n {
            for ch in 0..c {
                out.extend_from_slice(&src[((i * c + ch) * n + j) * plane..][..plane]);
            }
        }
    }
    Tensor::new([count * n, c, shape[3], shape[4]], out)
}
