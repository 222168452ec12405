//! Weight counts of full 3-D kernels against their (2+1)D factorizations,
//! and a forward pass showing both keep the output geometry.
//!
//! ```text
//! cargo run --release --example conv_factorization
//! ```

use clipscore::nn::{midplanes, ConvSpec, ConvType, ConvUnit, Forward, Mode, ParamGroup, ParamStore};
use clipscore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> clipscore::Result<()> {
    println!("{:>14} {:>10} {:>10} {:>10} {:>6}", "in->out", "3d", "(2+1)d", "slack", "mid");
    for (cin, cout) in [(3, 64), (64, 64), (64, 128), (128, 256), (256, 512)] {
        let spec = ConvSpec::new(cin, cout, [3, 3, 3]).pad([1, 1, 1]);
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let unit = ConvUnit::new(&mut store, "c", spec, ConvType::Conv2plus1d, ParamGroup::Backbone, &mut rng);
        let slack = 9 * cin + 3 * cout;
        println!(
            "{:>14} {:>10} {:>10} {:>10} {:>6}",
            format!("{cin}->{cout}"),
            spec.weight_count(),
            unit.weight_count(),
            slack,
            midplanes(cin, cout, 3, 3)
        );
    }

    let spec = ConvSpec::new(4, 8, [3, 3, 3]).stride([2, 2, 2]).pad([1, 1, 1]);
    let x = Tensor::from_fn([1, 4, 8, 16, 16], |i| (i % 7) as f32 / 7.0);
    for conv_type in [ConvType::Conv3d, ConvType::Conv2plus1d] {
        let mut store = ParamStore::<f32>::new();
        let unit = ConvUnit::new(&mut store, "c", spec, conv_type, ParamGroup::Backbone, &mut ChaCha8Rng::seed_from_u64(1));
        let mut fw = Forward::new(&mut store, Mode::Eval, false);
        let xv = fw.tape.constant(x.clone());
        let y = unit.forward(&mut fw, xv)?;
        println!("{:<12} {:?} -> {:?}", conv_type.label(), x.shape(), fw.tape.shape(y));
    }
    Ok(())
}
