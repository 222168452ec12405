//! Clip features from the residual backbones.
//!
//! ```text
//! cargo run --release --example backbone_shapes          # tiny backbones
//! cargo run --release --example backbone_shapes -- full  # also 34 and 50 layers
//! ```

use clipscore::backbone::{build_backbone, extract_clip_feature, BackboneConfig, Depth, CROP};
use clipscore::nn::{ConvType, Forward, Mode};
use clipscore::Tensor;

fn run(depth: Depth, conv_type: ConvType, clip_len: usize) -> clipscore::Result<()> {
    let config = BackboneConfig::new(depth, conv_type, clip_len)?;
    let schedule = config.temporal_schedule();
    let (backbone, mut store) = build_backbone::<f32>(config, 0)?;
    let x = Tensor::from_fn([2, 3, clip_len, CROP, CROP], |i| ((i * 31) % 97) as f32 / 97.0);
    let start = std::time::Instant::now();
    let mut fw = Forward::new(&mut store, Mode::Eval, false);
    let xv = fw.tape.constant(x);
    let y = extract_clip_feature(&backbone, &mut fw, xv)?;
    println!(
        "{:>4} {:<12} n={:<2} params {:>10}  out {:?}  {:.2?}  schedule {schedule}",
        depth.label(),
        conv_type.label(),
        clip_len,
        backbone.count_parameters(fw.store()),
        fw.tape.shape(y),
        start.elapsed()
    );
    Ok(())
}

fn main() -> clipscore::Result<()> {
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let depths: &[Depth] = if full { &[Depth::Tiny, Depth::D34, Depth::D50] } else { &[Depth::Tiny] };
    for &depth in depths {
        for conv_type in [ConvType::Conv3d, ConvType::Conv2plus1d] {
            for n in [8, 16, 32] {
                run(depth, conv_type, n)?;
            }
        }
    }
    Ok(())
}
