//! Generates a synthetic dataset, stores it, reads it back and prepares one
//! video's clips.
//!
//! ```text
//! cargo run --release --example synthetic_dataset [count] [seed]
//! ```

use clipscore::data::{generate_synthetic, load_dataset, save_dataset, SynthParams};
use clipscore::train::prepare_clips;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> clipscore::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric argument"));
    let count = args.next().unwrap_or(8) as usize;
    let seed = args.next().unwrap_or(0);

    let samples = generate_synthetic(&SynthParams::new(count, seed).frame_size(64, 86))?;
    for s in &samples {
        println!("{}  frames {:?}  difficulty {:.1}  score {:>6.2}", s.id, s.frames.shape(), s.difficulty, s.score);
    }

    let path = std::env::temp_dir().join(format!("clipscore-example-{seed}.aqad"));
    save_dataset(&samples, &path)?;
    let back = load_dataset(&path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("round trip through {} ({bytes} bytes): {}", path.display(), back == samples);
    let _ = std::fs::remove_file(&path);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [8, 16, 32] {
        let clips = prepare_clips::<f32>(&samples[0], n, &mut rng, true)?;
        println!("clip length {n:>2}: {:?}", clips.shape());
    }
    Ok(())
}
