//! Small comparison table: convolution type by aggregation on the tiny
//! backbone, trained on the same synthetic split.
//!
//! ```text
//! cargo run --release --example experiment_matrix [epochs]
//! ```

use clipscore::aggregation::{AggregationKind, WdInit};
use clipscore::backbone::Depth;
use clipscore::data::{generate_synthetic, SynthParams};
use clipscore::nn::ConvType;
use clipscore::train::{matrix_csv, run_experiment_matrix, MatrixEntry, TrainConfig};

fn main() -> clipscore::Result<()> {
    let epochs = std::env::args().nth(1).map_or(3, |a| a.parse().expect("numeric epochs"));
    let mut train_set = generate_synthetic(&SynthParams::new(36, 2).frame_size(32, 43))?;
    let test_set = train_set.split_off(24);
    let mut entries = Vec::new();
    for conv_type in [ConvType::Conv3d, ConvType::Conv2plus1d] {
        for aggregation in [AggregationKind::Average, AggregationKind::WeightDecider] {
            entries.push(MatrixEntry { depth: Depth::Tiny, conv_type, clip_len: 16, aggregation });
        }
    }
    let cfg = TrainConfig { epochs, lr_backbone: 1e-3, lr_fresh: 3e-3, ..TrainConfig::default() };
    let rows = run_experiment_matrix::<f32>(&entries, &train_set, &test_set, &cfg, WdInit::Uniform, |i, r| {
        eprintln!("row {i} epoch {} rho {:.3}", r.epoch, r.test_spearman);
    });
    print!("{}", matrix_csv(&rows));
    Ok(())
}
