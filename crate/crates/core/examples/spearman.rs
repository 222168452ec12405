//! Rank correlation with and without ties.
//!
//! ```text
//! cargo run --release --example spearman
//! ```

use clipscore::train::{average_ranks, spearman};

fn main() -> clipscore::Result<()> {
    let cases: [(&[f64], &[f64]); 5] = [
        (&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]),
        (&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]),
        (&[1.0, 3.0, 2.0], &[1.0, 2.0, 3.0]),
        (&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]),
        (&[0.2, 9.0, 4.4, 4.4, 7.1], &[11.0, 80.0, 52.0, 30.0, 79.0]),
    ];
    for (pred, truth) in cases {
        println!(
            "pred {pred:?} ranks {:?} vs truth {truth:?}: rho = {:.4}",
            average_ranks(pred),
            spearman(pred, truth)?
        );
    }
    match spearman(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]) {
        Ok(r) => println!("constant predictions: {r}"),
        Err(e) => println!("constant predictions: {e}"),
    }
    Ok(())
}
