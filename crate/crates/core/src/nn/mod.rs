//! Trainable layers over the autodiff tape.

mod batchnorm;
mod conv;
pub mod functional;
mod linear;
mod params;
mod pool;

pub use batchnorm::BatchNorm3d;
pub use conv::{midplanes, Conv2Plus1d, Conv3d, ConvSpec, ConvType, ConvUnit};
pub use functional::{output_dims, output_extent, Triple};
pub use linear::Linear;
pub use params::{
    uniform_fan_in, Forward, Mode, ParamEntry, ParamGrads, ParamGroup, ParamId, ParamKind,
    ParamStore,
};
pub use pool::{global_avg_pool, softmax_over_clips, MaxPool3d};
