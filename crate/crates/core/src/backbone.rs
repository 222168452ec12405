//! Residual feature extractors mapping one clip to a 128-d feature vector.

use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Var};
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, BatchNorm3d, ConvSpec, ConvType, ConvUnit, Forward, Linear, MaxPool3d,
    ParamGroup, ParamStore, Triple,
};

/// Width of every clip feature.
pub const FEATURE_DIM: usize = 128;
/// Spatial side of the network input.
pub const CROP: usize = 112;
pub const CLIP_LENS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DepthRepr", into = "String")]
pub enum Depth {
    Tiny,
    D34,
    D50,
    D101,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DepthRepr {
    Num(u64),
    Str(String),
}

impl TryFrom<DepthRepr> for Depth {
    type Error = String;

    fn try_from(r: DepthRepr) -> std::result::Result<Self, String> {
        let s = match r {
            DepthRepr::Num(n) => n.to_string(),
            DepthRepr::Str(s) => s,
        };
        s.parse()
    }
}

impl From<Depth> for String {
    fn from(d: Depth) -> String {
        d.label().to_string()
    }
}

impl std::str::FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tiny" => Ok(Depth::Tiny),
            "34" => Ok(Depth::D34),
            "50" => Ok(Depth::D50),
            "101" => Ok(Depth::D101),
            other => Err(format!("unknown depth {other:?} (expected tiny, 34, 50 or 101)")),
        }
    }
}

impl Depth {
    pub fn label(self) -> &'static str {
        match self {
            Depth::Tiny => "tiny",
            Depth::D34 => "34",
            Depth::D50 => "50",
            Depth::D101 => "101",
        }
    }

    pub fn block(self) -> BlockKind {
        match self {
            Depth::Tiny | Depth::D34 => BlockKind::Basic,
            Depth::D50 | Depth::D101 => BlockKind::Bottleneck,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// First convolution and optional max pool ahead of the residual stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: Triple,
    pub stride: Triple,
    pub pad: Triple,
    pub max_pool: bool,
}

impl StemSpec {
    /// 3x7x7, spatial stride 2, then a 3x3 spatial max pool.
    pub fn resnet() -> Self {
        StemSpec {
            channels: 64,
            kernel: [3, 7, 7],
            stride: [1, 2, 2],
            pad: [1, 3, 3],
            max_pool: true,
        }
    }

    /// Non-overlapping 4x4 patches, so the desk-scale network runs the
    /// residual stages on a 28x28 grid (14x14 after pooling).
    pub fn tiny() -> Self {
        StemSpec { channels: 8, kernel: [1, 4, 4], stride: [1, 4, 4], pad: [0, 0, 0], max_pool: true }
    }
}

const STEM_POOL: MaxPool3d = MaxPool3d { kernel: [1, 3, 3], stride: [1, 2, 2], pad: [0, 1, 1] };

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub depth: Depth,
    pub conv_type: ConvType,
    pub clip_len: usize,
    pub stem: StemSpec,
    pub stage_channels: Vec<usize>,
    pub block_counts: Vec<usize>,
    /// Stride of the first block of each stage, `[t, h, w]`.
    pub stage_strides: Vec<Triple>,
    pub head_units: Vec<usize>,
}

impl BackboneConfig {
    /// Standard layout for `depth`.
    pub fn new(depth: Depth, conv_type: ConvType, clip_len: usize) -> Result<Self> {
        let (stem, stage_channels, block_counts, head_units) = match depth {
            Depth::Tiny => (StemSpec::tiny(), vec![8, 16, 32, 64], vec![1, 1, 1, 1], vec![256, 128]),
            Depth::D34 => (StemSpec::resnet(), vec![64, 128, 256, 512], vec![3, 4, 6, 3], vec![256, 128]),
            Depth::D50 => {
                (StemSpec::resnet(), vec![64, 128, 256, 512], vec![3, 4, 6, 3], vec![512, 256, 128])
            }
            Depth::D101 => {
                (StemSpec::resnet(), vec![64, 128, 256, 512], vec![3, 4, 23, 3], vec![512, 256, 128])
            }
        };
        let config = BackboneConfig {
            depth,
            conv_type,
            clip_len,
            stem,
            stage_channels,
            block_counts,
            stage_strides: vec![[1, 1, 1], [2, 2, 2], [2, 2, 2], [2, 2, 2]],
            head_units,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !CLIP_LENS.contains(&self.clip_len) {
            return Err(Error::Config(format!(
                "clip_len must be one of 8, 16, 32, got {}",
                self.clip_len
            )));
        }
        let stages = self.stage_channels.len();
        if stages == 0 || self.block_counts.len() != stages || self.stage_strides.len() != stages {
            return Err(Error::Config(
                "stage_channels, block_counts and stage_strides must have the same non-zero length"
                    .into(),
            ));
        }
        if self.block_counts.contains(&0) || self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channels and block counts must be positive".into()));
        }
        if self.head_units.last() != Some(&FEATURE_DIM) {
            return Err(Error::Config(format!("the last head layer must have {FEATURE_DIM} units")));
        }
        self.extents_at_pool().map(|_| ())
    }

    /// True for combinations that are constructible but were never run at
    /// full scale.
    pub fn flagged(&self) -> Option<&'static str> {
        (self.depth == Depth::D101 && self.conv_type == ConvType::Conv2plus1d)
            .then_some("101-layer (2+1)D backbone has no reference results")
    }

    pub fn block(&self) -> BlockKind {
        self.depth.block()
    }

    /// Channels entering the global pool.
    pub fn pool_width(&self) -> usize {
        self.stage_channels.last().unwrap() * self.block().expansion()
    }

    /// `[T, H, W]` of the activation that reaches the global pool.
    pub fn extents_at_pool(&self) -> Result<Triple> {
        let s = &self.stem;
        let mut dims =
            crate::nn::output_dims("stem", [self.clip_len, CROP, CROP], s.kernel, s.stride, s.pad)?;
        if s.max_pool {
            dims = crate::nn::output_dims(
                "stem_pool",
                dims,
                STEM_POOL.kernel,
                STEM_POOL.stride,
                STEM_POOL.pad,
            )?;
        }
        for stride in &self.stage_strides {
            dims = crate::nn::output_dims("stage", dims, [3, 3, 3], *stride, [1, 1, 1])?;
        }
        Ok(dims)
    }

    /// One-line description of the temporal striding, stored in checkpoints.
    pub fn temporal_schedule(&self) -> String {
        let strides: Vec<String> = self.stage_strides.iter().map(|s| s[0].to_string()).collect();
        let t = self.extents_at_pool().map(|d| d[0]).unwrap_or(0);
        format!(
            "clip_len={} stem_t_stride={} stage_t_strides={} t_at_pool={}",
            self.clip_len,
            self.stem.stride[0],
            strides.join(","),
            t
        )
    }
}

/// Two 3x3x3 convolutions with a residual connection.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: ConvUnit,
    pub bn1: BatchNorm3d,
    pub conv2: ConvUnit,
    pub bn2: BatchNorm3d,
    pub shortcut: Option<Projection>,
}

/// 1x1x1 reduce, 3x3x3, 1x1x1 expand, with a residual connection.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub reduce: ConvUnit,
    pub bn1: BatchNorm3d,
    pub conv: ConvUnit,
    pub bn2: BatchNorm3d,
    pub expand: ConvUnit,
    pub bn3: BatchNorm3d,
    pub shortcut: Option<Projection>,
}

/// Strided 1x1x1 convolution plus batch norm on the shortcut path.
#[derive(Debug, Clone)]
pub struct Projection {
    pub conv: ConvUnit,
    pub bn: BatchNorm3d,
}

#[derive(Debug, Clone)]
pub enum Block {
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

struct Builder<'a, F> {
    store: &'a mut ParamStore<F>,
    conv_type: ConvType,
    rng: ChaCha8Rng,
}

impl<F: Float> Builder<'_, F> {
    fn conv(&mut self, name: &str, spec: ConvSpec) -> ConvUnit {
        ConvUnit::new(self.store, name, spec, self.conv_type, ParamGroup::Backbone, &mut self.rng)
    }

    fn bn(&mut self, name: &str, channels: usize) -> BatchNorm3d {
        BatchNorm3d::new(self.store, name, channels, ParamGroup::Backbone)
    }

    fn projection(&mut self, name: &str, cin: usize, cout: usize, stride: Triple) -> Option<Projection> {
        (cin != cout || stride != [1, 1, 1]).then(|| Projection {
            conv: self.conv(&format!("{name}.conv"), ConvSpec::new(cin, cout, [1, 1, 1]).stride(stride)),
            bn: self.bn(&format!("{name}.bn"), cout),
        })
    }

    fn block(&mut self, kind: BlockKind, name: &str, cin: usize, width: usize, stride: Triple) -> Block {
        let k3 = |i, o| ConvSpec::new(i, o, [3, 3, 3]).pad([1, 1, 1]);
        match kind {
            BlockKind::Basic => Block::Basic(BasicBlock {
                conv1: self.conv(&format!("{name}.conv1"), k3(cin, width).stride(stride)),
                bn1: self.bn(&format!("{name}.bn1"), width),
                conv2: self.conv(&format!("{name}.conv2"), k3(width, width)),
                bn2: self.bn(&format!("{name}.bn2"), width),
                shortcut: self.projection(&format!("{name}.shortcut"), cin, width, stride),
            }),
            BlockKind::Bottleneck => {
                let out = width * 4;
                Block::Bottleneck(Bottleneck {
                    reduce: self.conv(&format!("{name}.conv1"), ConvSpec::new(cin, width, [1, 1, 1])),
                    bn1: self.bn(&format!("{name}.bn1"), width),
                    conv: self.conv(&format!("{name}.conv2"), k3(width, width).stride(stride)),
                    bn2: self.bn(&format!("{name}.bn2"), width),
                    expand: self.conv(&format!("{name}.conv3"), ConvSpec::new(width, out, [1, 1, 1])),
                    bn3: self.bn(&format!("{name}.bn3"), out),
                    shortcut: self.projection(&format!("{name}.shortcut"), cin, out, stride),
                })
            }
        }
    }
}

impl Block {
    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let (main, shortcut) = match self {
            Block::Basic(b) => {
                let h = b.conv1.forward(fw, x)?;
                let h = b.bn1.forward(fw, h)?;
                let h = fw.tape.relu(h);
                let h = b.conv2.forward(fw, h)?;
                (b.bn2.forward(fw, h)?, &b.shortcut)
            }
            Block::Bottleneck(b) => {
                let h = b.reduce.forward(fw, x)?;
                let h = b.bn1.forward(fw, h)?;
                let h = fw.tape.relu(h);
                let h = b.conv.forward(fw, h)?;
                let h = b.bn2.forward(fw, h)?;
                let h = fw.tape.relu(h);
                let h = b.expand.forward(fw, h)?;
                (b.bn3.forward(fw, h)?, &b.shortcut)
            }
        };
        let skip = match shortcut {
            Some(p) => {
                let s = p.conv.forward(fw, x)?;
                p.bn.forward(fw, s)?
            }
            None => x,
        };
        let sum = fw.tape.add(main, skip)?;
        Ok(fw.tape.relu(sum))
    }

    pub fn convs(&self) -> Vec<&ConvUnit> {
        let (mut v, shortcut) = match self {
            Block::Basic(b) => (vec![&b.conv1, &b.conv2], &b.shortcut),
            Block::Bottleneck(b) => (vec![&b.reduce, &b.conv, &b.expand], &b.shortcut),
        };
        v.extend(shortcut.iter().map(|p| &p.conv));
        v
    }
}

/// Stem, residual stages, global average pool and the FC head.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: ConvUnit,
    pub stem_bn: BatchNorm3d,
    pub blocks: Vec<Block>,
    pub head: Vec<Linear>,
    params: Range<usize>,
}

impl Backbone {
    /// Registers every parameter in `store` under the `backbone.` and `head.`
    /// prefixes, drawing initial values from `seed`.
    pub fn new<F: Float>(store: &mut ParamStore<F>, config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let start = store.len();
        let mut b =
            Builder { store, conv_type: config.conv_type, rng: ChaCha8Rng::seed_from_u64(seed) };
        let s = config.stem;
        let stem_spec = ConvSpec::new(3, s.channels, s.kernel).stride(s.stride).pad(s.pad);
        let stem = b.conv("backbone.stem", stem_spec);
        let stem_bn = b.bn("backbone.stem_bn", s.channels);

        let kind = config.block();
        let mut blocks = Vec::new();
        let mut cin = s.channels;
        for (stage, ((&width, &count), &stride)) in config
            .stage_channels
            .iter()
            .zip(&config.block_counts)
            .zip(&config.stage_strides)
            .enumerate()
        {
            for i in 0..count {
                let name = format!("backbone.layer{}.{i}", stage + 1);
                let st = if i == 0 { stride } else { [1, 1, 1] };
                blocks.push(b.block(kind, &name, cin, width, st));
                cin = width * kind.expansion();
            }
        }

        let mut head = Vec::new();
        for (i, &units) in config.head_units.iter().enumerate() {
            let name = format!("head.fc{}", i + 1);
            head.push(Linear::new(b.store, &name, cin, units, ParamGroup::Backbone, &mut b.rng));
            cin = units;
        }
        let end = store.len();
        Ok(Backbone { config, stem, stem_bn, blocks, head, params: start..end })
    }

    /// Feature vectors `[B, 128]` for clips `[B, 3, n, 112, 112]`.
    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, clips: Var) -> Result<Var> {
        let shape = fw.tape.shape(clips);
        let n = self.config.clip_len;
        if shape.len() != 5 || shape[1] != 3 || shape[2] != n || shape[3] != CROP || shape[4] != CROP {
            return Err(Error::shape(
                "extract_clip_feature",
                format!("expected [B, 3, {n}, {CROP}, {CROP}], got {shape:?}"),
            ));
        }
        let h = self.stem.forward(fw, clips)?;
        let h = self.stem_bn.forward(fw, h)?;
        let mut h = fw.tape.relu(h);
        if self.config.stem.max_pool {
            h = STEM_POOL.forward(&mut fw.tape, h)?;
        }
        for block in &self.blocks {
            h = block.forward(fw, h)?;
        }
        let mut h = global_avg_pool(&mut fw.tape, h)?;
        let last = self.head.len() - 1;
        for (i, fc) in self.head.iter().enumerate() {
            h = fc.forward(fw, h)?;
            if i < last {
                h = fw.tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Range<usize> {
        self.params.clone()
    }

    /// Trainable scalars: convolutions, FC layers and batch-norm affine terms.
    pub fn count_parameters<F: Float>(&self, store: &ParamStore<F>) -> usize {
        store.entries()[self.params.clone()]
            .iter()
            .filter(|e| matches!(e.kind, crate::nn::ParamKind::Trainable(_)))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn convs(&self) -> Vec<&ConvUnit> {
        let mut v = vec![&self.stem];
        v.extend(self.blocks.iter().flat_map(|b| b.convs()));
        v
    }

    /// Convolution kernel weights only (no biases, batch norm or FC).
    pub fn conv_weight_count(&self) -> usize {
        self.convs().iter().map(|c| c.weight_count()).sum()
    }
}

/// Builds a backbone in a fresh store.
pub fn build_backbone<F: Float>(config: BackboneConfig, seed: u64) -> Result<(Backbone, ParamStore<F>)> {
    let mut store = ParamStore::new();
    let backbone = Backbone::new(&mut store, config, seed)?;
    Ok((backbone, store))
}

/// Runs `clips` through `backbone`; alias kept for symmetry with the other
/// pipeline stages.
pub fn extract_clip_feature<F: Float>(
    backbone: &Backbone,
    fw: &mut Forward<'_, F>,
    clips: Var,
) -> Result<Var> {
    backbone.forward(fw, clips)
}
