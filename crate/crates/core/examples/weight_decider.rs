//! Weight-Decider aggregation of one clip set next to plain averaging.
//!
//! ```text
//! cargo run --release --example weight_decider
//! ```

use clipscore::aggregation::{aggregate_average, aggregate_weighted, WdInit, WeightDecider};
use clipscore::nn::{softmax_over_clips, Forward, ParamStore};
use clipscore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> clipscore::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let features = Tensor::from_fn([n, 128], |_| rng.gen_range(-1.0..1.0));

    for init in [WdInit::Uniform, WdInit::ZeroOutput] {
        let mut store = ParamStore::<f64>::new();
        let wd = WeightDecider::with_seed(&mut store, init, 7);
        let mut fw = Forward::eval(&mut store);
        let f = fw.tape.constant(features.clone());
        let raw = wd.forward(&mut fw, f)?;
        let w = softmax_over_clips(&mut fw.tape, raw)?;
        let weighted = aggregate_weighted(&mut fw, f, &wd)?;
        let mean = aggregate_average(&mut fw, f)?;

        let w = fw.tape.value(w).data();
        let column: Vec<String> = (0..n).map(|i| format!("{:.3}", w[i * 128])).collect();
        let (a, b) = (fw.tape.value(weighted).data(), fw.tape.value(mean).data());
        let gap = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("{init:?}: clip weights of feature 0 [{}], max |weighted - mean| {gap:.2e}", column.join(", "));
    }
    Ok(())
}
