use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::{RESIZE_H, RESIZE_W};
use super::VideoSample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

pub const SYNTH_FRAMES: usize = 103;
/// Side of the square, in 128x171 reference pixels.
const SQUARE: f64 = 12.0;
/// Jitter amplitude at quality 0, in reference pixels.
const MAX_JITTER: f64 = 8.0;
const MAX_DIFFICULTY: f64 = 3.8;
const BACKGROUND: [f32; 3] = [0.08, 0.10, 0.12];
const FOREGROUND: [f32; 3] = [0.95, 0.85, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub count: usize,
    pub seed: u64,
    /// Stored `(H, W)`. Positions and sizes are defined on a 128x171 canvas
    /// and scaled to this size.
    #[serde(default = "default_frame_size")]
    pub frame_size: (usize, usize),
}

fn default_frame_size() -> (usize, usize) {
    (RESIZE_H, RESIZE_W)
}

impl SynthParams {
    pub fn new(count: usize, seed: u64) -> Self {
        SynthParams { count, seed, frame_size: default_frame_size() }
    }

    pub fn frame_size(mut self, h: usize, w: usize) -> Self {
        self.frame_size = (h, w);
        self
    }
}

/// Rounds to `digits` decimal places.
pub fn round_to(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

/// Ground truth of a synthetic performance: `round(100 q d / 3.8, 2)`.
pub fn synth_score(quality: f64, difficulty: f64) -> f64 {
    round_to(100.0 * quality * difficulty / MAX_DIFFICULTY, 2)
}

/// Centre of the square at frame `t` on the reference canvas: left to right
/// while falling along a parabola.
fn path(t: usize) -> (f64, f64) {
    let u = t as f64 / (SYNTH_FRAMES - 1) as f64;
    (24.0 + 76.0 * u * u, 45.0 + 80.0 * u)
}

/// Length of `[a, b]` inside `[lo, lo + 1]`.
fn overlap(a: f64, b: f64, lo: f64) -> f64 {
    (b.min(lo + 1.0) - a.max(lo)).max(0.0)
}

/// Renders one video. Jitter offsets come from `rng`, two per frame.
pub fn render_sample(
    id: impl Into<String>,
    quality: f64,
    difficulty: f64,
    frame_size: (usize, usize),
    rng: &mut impl Rng,
) -> Result<VideoSample> {
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::Input(format!("quality {quality} outside [0, 1]")));
    }
    let (h, w) = frame_size;
    if h == 0 || w == 0 {
        return Err(Error::Input("frame size must be positive".into()));
    }
    let (sy, sx) = (h as f64 / RESIZE_H as f64, w as f64 / RESIZE_W as f64);
    let amp = (1.0 - quality) * MAX_JITTER;
    let plane = h * w;
    let mut data = vec![0f32; SYNTH_FRAMES * 3 * plane];
    for (t, frame) in data.chunks_mut(3 * plane).enumerate() {
        let (mut cy, mut cx) = path(t);
        cy += amp * (2.0 * rng.gen::<f64>() - 1.0);
        cx += amp * (2.0 * rng.gen::<f64>() - 1.0);
        let (top, bottom) = ((cy - SQUARE / 2.0) * sy, (cy + SQUARE / 2.0) * sy);
        let (left, right) = ((cx - SQUARE / 2.0) * sx, (cx + SQUARE / 2.0) * sx);
        for (ch, p) in frame.chunks_mut(plane).enumerate() {
            p.fill(BACKGROUND[ch]);
        }
        let r0 = top.floor().max(0.0) as usize;
        let r1 = (bottom.ceil().max(0.0) as usize).min(h);
        let c0 = left.floor().max(0.0) as usize;
        let c1 = (right.ceil().max(0.0) as usize).min(w);
        for r in r0..r1 {
            let oy = overlap(top, bottom, r as f64);
            for c in c0..c1 {
                let cov = (oy * overlap(left, right, c as f64)) as f32;
                for ch in 0..3 {
                    let (bg, fg) = (BACKGROUND[ch], FOREGROUND[ch]);
                    frame[ch * plane + r * w + c] = bg + (fg - bg) * cov;
                }
            }
        }
    }
    let frames = Tensor::new([SYNTH_FRAMES, 3, h, w], data)?;
    VideoSample::new(id, frames, synth_score(quality, difficulty), difficulty)
}

/// Generator of sample `index`: the master seed with the index as stream, so
/// every sample is independent of how many others are generated or in which
/// order.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Quality uniform in `[0, 1]`, difficulty uniform on `{2.0, 2.1, ..., 3.8}`.
pub fn generate_synthetic(params: &SynthParams) -> Result<Vec<VideoSample>> {
    if params.count == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    parallel::map(params.count, |i| {
        let mut rng = sample_rng(params.seed, i);
        let quality: f64 = rng.gen();
        let difficulty = round_to(2.0 + 0.1 * rng.gen_range(0..=18) as f64, 1);
        let id = format!("synth-{}-{i:05}", params.seed);
        render_sample(id, quality, difficulty, params.frame_size, &mut rng)
    })
    .into_iter()
    .collect()
}
