//! Model checkpoints: a plain-text manifest followed by AQAT records.
//!
//! ```text
//! clipscore-checkpoint 1
//! config <ModelConfig as one line of JSON>
//! schedule <temporal stride schedule>
//! tensors <count>
//! <name> <backbone|fresh|buffer> <d0>x<d1>...
//! ...
//! end
//! <count AQAT records in manifest order>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use crate::autodiff::aqat::{write_tensor, OffsetReader};
use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamKind};

const HEADER: &str = "clipscore-checkpoint 1";

fn kind_label(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Trainable(ParamGroup::Backbone) => "backbone",
        ParamKind::Trainable(ParamGroup::Fresh) => "fresh",
        ParamKind::Buffer => "buffer",
    }
}

fn dims_label(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn write_checkpoint<F: Float>(w: &mut impl Write, model: &Model<F>) -> std::io::Result<()> {
    let entries = model.store.entries();
    writeln!(w, "{HEADER}")?;
    writeln!(w, "config {}", serde_json::to_string(&model.config).expect("config serializes"))?;
    writeln!(w, "schedule {}", model.config.backbone.temporal_schedule())?;
    writeln!(w, "tensors {}", entries.len())?;
    for e in entries {
        writeln!(w, "{} {} {}", e.name, kind_label(e.kind), dims_label(e.value.shape()))?;
    }
    writeln!(w, "end")?;
    for e in entries {
        write_tensor(w, &e.value)?;
    }
    Ok(())
}

/// Reads the manifest and returns the model configuration without loading
/// any tensor data.
pub fn read_checkpoint_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;
    let (config, _) = read_manifest(&mut r, &mut offset)?;
    Ok(config)
}

struct ManifestLine {
    name: String,
    kind: String,
    dims: String,
}

fn read_line(r: &mut impl BufRead, offset: &mut u64) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| Error::Format { offset: *offset, detail: e.to_string() })?;
    if n == 0 {
        return Err(Error::Format { offset: *offset, detail: "truncated manifest".into() });
    }
    *offset += n as u64;
    Ok(line.trim_end_matches('\n').to_string())
}

fn read_manifest(r: &mut impl BufRead, offset: &mut u64) -> Result<(ModelConfig, Vec<ManifestLine>)> {
    let fmt = |offset: u64, d: String| Error::Format { offset, detail: d };
    let header = read_line(r, offset)?;
    if header != HEADER {
        return Err(fmt(0, format!("not a checkpoint (header {header:?})")));
    }
    let at = *offset;
    let config = read_line(r, offset)?;
    let config: ModelConfig = config
        .strip_prefix("config ")
        .ok_or_else(|| fmt(at, "missing config line".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| fmt(at, format!("bad config: {e}"))))?;
    let at = *offset;
    if !read_line(r, offset)?.starts_with("schedule ") {
        return Err(fmt(at, "missing schedule line".into()));
    }
    let at = *offset;
    let count: usize = read_line(r, offset)?
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| fmt(at, "missing tensor count".into()))?;
    let mut lines = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = *offset;
        let line = read_line(r, offset)?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, kind, dims] = parts[..] else {
            return Err(fmt(at, format!("bad manifest line {line:?}")));
        };
        lines.push(ManifestLine { name: name.into(), kind: kind.into(), dims: dims.into() });
    }
    let at = *offset;
    if read_line(r, offset)? != "end" {
        return Err(fmt(at, "manifest does not end with `end`".into()));
    }
    Ok((config, lines))
}

/// Rebuilds the model described by the manifest and fills in every tensor.
pub fn read_checkpoint<F: Float>(r: impl Read) -> Result<Model<F>> {
    let mut r = BufReader::new(r);
    let mut offset = 0u64;
    let (config, lines) = read_manifest(&mut r, &mut offset)?;
    let mut model = Model::<F>::new(config, 0)?;
    if lines.len() != model.store.len() {
        return Err(Error::Format {
            offset,
            detail: format!(
                "manifest lists {} tensors, the configured model has {}",
                lines.len(),
                model.store.len()
            ),
        });
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (line, &id) in lines.iter().zip(&ids) {
        let e = model.store.entry(id);
        if line.name != e.name || line.kind != kind_label(e.kind) || line.dims != dims_label(e.value.shape()) {
            return Err(Error::Format {
                offset,
                detail: format!(
                    "manifest entry {} {} {} does not match the model's {} {} {}",
                    line.name,
                    line.kind,
                    line.dims,
                    e.name,
                    kind_label(e.kind),
                    dims_label(e.value.shape())
                ),
            });
        }
    }
    let mut data = OffsetReader::new(r);
    for &id in &ids {
        let start = data.offset() + offset;
        let t = data.read_tensor::<F>().map_err(|e| match e {
            Error::Format { offset: o, detail } => Error::Format { offset: o + offset, detail },
            other => other,
        })?;
        if t.shape() != model.store.get(id).shape() {
            return Err(Error::Format {
                offset: start,
                detail: format!("tensor {} has shape {:?}", model.store.entry(id).name, t.shape()),
            });
        }
        *model.store.get_mut(id) = t;
    }
    if !data.at_end()? {
        return Err(Error::Format { offset: data.offset() + offset, detail: "trailing bytes".into() });
    }
    Ok(model)
}

pub fn save_checkpoint<F: Float>(model: &Model<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, model).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Float>(path: impl AsRef<Path>) -> Result<Model<F>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
