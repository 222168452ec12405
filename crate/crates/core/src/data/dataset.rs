//! `AQAD` dataset files.
//!
//! ```text
//! b"AQAD" | version: u8 = 1 | count: u32 LE
//! count x ( id_len: u32 LE | id: UTF-8 | score: f64 LE | difficulty: f64 LE | AQAT f32 frames )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::VideoSample;
use crate::autodiff::aqat::{write_tensor, OffsetReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AQAD";
pub const VERSION: u8 = 1;

pub fn write_dataset(w: &mut impl Write, samples: &[VideoSample]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        w.write_all(&(s.id.len() as u32).to_le_bytes())?;
        w.write_all(s.id.as_bytes())?;
        w.write_all(&s.score.to_le_bytes())?;
        w.write_all(&s.difficulty.to_le_bytes())?;
        write_tensor(w, &s.frames)?;
    }
    Ok(())
}

pub fn read_dataset(r: impl Read) -> Result<Vec<VideoSample>> {
    let mut r = OffsetReader::new(r);
    let magic = r.read_array::<4>("dataset magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad dataset magic {magic:?}") });
    }
    let version = r.read_u8("dataset version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, detail: format!("unsupported dataset version {version}") });
    }
    let count = r.read_u32("sample count")? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let start = r.offset();
        let len = r.read_u32("sample id length")? as usize;
        let id = String::from_utf8(r.read_exact_vec(len, "sample id")?)
            .map_err(|_| Error::Format { offset: start + 4, detail: format!("sample {i}: id is not UTF-8") })?;
        let score = r.read_f64("score")?;
        let difficulty = r.read_f64("difficulty")?;
        let frames = r.read_tensor::<f32>()?;
        let sample = VideoSample { id, frames, score, difficulty };
        sample
            .validate()
            .map_err(|e| Error::Format { offset: start, detail: format!("sample {i}: {e}") })?;
        samples.push(sample);
    }
    if !r.at_end()? {
        return Err(r.format_error("trailing bytes after the last sample"));
    }
    Ok(samples)
}

pub fn save_dataset(samples: &[VideoSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, samples).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<VideoSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}
