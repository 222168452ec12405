use rand::Rng;

use super::batchnorm::BatchNorm3d;
use super::functional::Triple;
use super::params::{uniform_fan_in, Forward, ParamGroup, ParamId, ParamKind, ParamStore};
use crate::autodiff::{Float, Var};
use crate::error::Result;

/// Geometry of a 3-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Triple,
    pub stride: Triple,
    pub pad: Triple,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: Triple) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride: [1, 1, 1], pad: [0, 0, 0], bias: false }
    }

    pub fn stride(mut self, stride: Triple) -> Self {
        self.stride = stride;
        self
    }

    pub fn pad(mut self, pad: Triple) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Number of kernel weights (bias excluded).
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.fan_in()
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv3d {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        spec: ConvSpec,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let [kt, kh, kw] = spec.kernel;
        let shape = [spec.out_channels, spec.in_channels, kt, kh, kw];
        let kind = ParamKind::Trainable(group);
        let weight =
            store.add(format!("{name}.weight"), uniform_fan_in(rng, &shape, spec.fan_in()), kind);
        let bias = spec.bias.then(|| {
            store.add(
                format!("{name}.bias"),
                uniform_fan_in(rng, &[spec.out_channels], spec.fan_in()),
                kind,
            )
        });
        Conv3d { spec, weight, bias }
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let w = fw.param(self.weight);
        let b = self.bias.map(|b| fw.param(b));
        fw.tape.conv3d(x, w, b, self.spec.stride, self.spec.pad)
    }
}

/// Intermediate channel count of a factorized `t x d x d` convolution that
/// keeps its weight count close to the full 3-D kernel:
/// `floor(t d^2 in out / (d^2 in + t out))`, at least 1.
pub fn midplanes(in_channels: usize, out_channels: usize, t: usize, d: usize) -> usize {
    let num = t * d * d * in_channels * out_channels;
    let den = d * d * in_channels + t * out_channels;
    (num / den).max(1)
}

/// Spatial `1 x d x d` convolution, batch norm and relu, then temporal
/// `t x 1 x 1` convolution.
///
/// Stride and padding of the equivalent full kernel are split between the two
/// stages, so the output geometry matches the full `t x d x d` convolution.
#[derive(Debug, Clone)]
pub struct Conv2Plus1d {
    pub mid_channels: usize,
    pub spatial: Conv3d,
    pub norm: BatchNorm3d,
    pub temporal: Conv3d,
}

impl Conv2Plus1d {
    /// Factorizes `full`, whose kernel must be `[t, d, d]`.
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        full: ConvSpec,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let [t, d, d2] = full.kernel;
        assert_eq!(d, d2, "factorized convolution needs a square spatial kernel");
        let mid = midplanes(full.in_channels, full.out_channels, t, d);
        let spatial = ConvSpec::new(full.in_channels, mid, [1, d, d])
            .stride([1, full.stride[1], full.stride[2]])
            .pad([0, full.pad[1], full.pad[2]]);
        let temporal = ConvSpec::new(mid, full.out_channels, [t, 1, 1])
            .stride([full.stride[0], 1, 1])
            .pad([full.pad[0], 0, 0])
            .with_bias(full.bias);
        Conv2Plus1d {
            mid_channels: mid,
            spatial: Conv3d::new(store, &format!("{name}.spatial"), spatial, group, rng),
            norm: BatchNorm3d::new(store, &format!("{name}.mid_bn"), mid, group),
            temporal: Conv3d::new(store, &format!("{name}.temporal"), temporal, group, rng),
        }
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let s = self.spatial.forward(fw, x)?;
        let s = self.norm.forward(fw, s)?;
        let s = fw.tape.relu(s);
        self.temporal.forward(fw, s)
    }

    pub fn weight_count(&self) -> usize {
        self.spatial.spec.weight_count() + self.temporal.spec.weight_count()
    }
}

/// Convolution flavour used throughout a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    Conv3d,
    Conv2plus1d,
}

impl ConvType {
    pub fn label(self) -> &'static str {
        match self {
            ConvType::Conv3d => "conv3d",
            ConvType::Conv2plus1d => "conv2plus1d",
        }
    }
}

/// Either a full 3-D convolution or its (2+1)D factorization.
#[derive(Debug, Clone)]
pub enum ConvUnit {
    Full(Conv3d),
    Factorized(Conv2Plus1d),
}

impl ConvUnit {
    /// Builds `spec` with the requested flavour. Kernels without temporal or
    /// spatial extent (for example 1x1x1 projections) are never factorized.
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        spec: ConvSpec,
        conv_type: ConvType,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let [t, h, _] = spec.kernel;
        if conv_type == ConvType::Conv2plus1d && t > 1 && h > 1 {
            ConvUnit::Factorized(Conv2Plus1d::new(store, name, spec, group, rng))
        } else {
            ConvUnit::Full(Conv3d::new(store, name, spec, group, rng))
        }
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        match self {
            ConvUnit::Full(c) => c.forward(fw, x),
            ConvUnit::Factorized(c) => c.forward(fw, x),
        }
    }

    pub fn weight_count(&self) -> usize {
        match self {
            ConvUnit::Full(c) => c.spec.weight_count(),
            ConvUnit::Factorized(c) => c.weight_count(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            ConvUnit::Full(c) => c.spec.out_channels,
            ConvUnit::Factorized(c) => c.temporal.spec.out_channels,
        }
    }
}
