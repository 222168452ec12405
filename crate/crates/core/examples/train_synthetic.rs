//! Trains the tiny backbone with Weight-Decider aggregation on synthetic
//! videos, saves the best checkpoint and evaluates the reloaded model.
//!
//! ```text
//! cargo run --release --example train_synthetic [epochs] [train_count] [test_count]
//! ```

use clipscore::aggregation::{AggregationKind, WdInit};
use clipscore::backbone::{BackboneConfig, Depth};
use clipscore::data::{generate_synthetic, SynthParams};
use clipscore::nn::ConvType;
use clipscore::train::{evaluate, load_checkpoint, metrics_csv, save_checkpoint, train, EpochRecord, Model, ModelConfig, TrainConfig};

fn main() -> clipscore::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(6);
    let train_count = args.next().unwrap_or(40);
    let test_count = args.next().unwrap_or(16);

    let mut all = generate_synthetic(&SynthParams::new(train_count + test_count, 1).frame_size(32, 43))?;
    let test_set = all.split_off(train_count);
    let config = ModelConfig {
        backbone: BackboneConfig::new(Depth::Tiny, ConvType::Conv3d, 8)?,
        aggregation: AggregationKind::WeightDecider,
        wd_init: WdInit::Uniform,
    };
    let model = Model::<f32>::new(config, 0)?;
    println!("{} trainable parameters", model.count_parameters());
    let cfg = TrainConfig { epochs, lr_backbone: 1e-3, lr_fresh: 3e-3, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let outcome = train(model, &all, &test_set, &cfg, &mut |r: &EpochRecord| {
        println!(
            "epoch {:>2}  train {:>8.2}  test {:>8.2}  rho {:.3}  ({:.0?})",
            r.epoch,
            r.train_loss,
            r.test_loss,
            r.test_spearman,
            start.elapsed()
        );
    })?;
    print!("{}", metrics_csv(&outcome.report.history));

    let path = std::env::temp_dir().join("clipscore-example.ckpt");
    save_checkpoint(&outcome.model, &path)?;
    let mut reloaded = load_checkpoint::<f32>(&path)?;
    let report = evaluate(&mut reloaded, &test_set, cfg.eval_batch)?;
    println!("best epoch {}: rho {:.3}, reloaded rho {:.3}", outcome.best_epoch, outcome.report.spearman, report.spearman);
    let _ = std::fs::remove_file(&path);
    Ok(())
}
