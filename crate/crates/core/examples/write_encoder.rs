//! Regenerates `assets/encoder.mnw` from the fixed seed.

use metastyle::perceptual::{PerceptualEncoder, ENCODER_SEED};

fn main() -> metastyle::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "crates/core/assets/encoder.mnw".into());
    PerceptualEncoder::seeded(ENCODER_SEED).to_weights()?.save(&path)?;
    println!("wrote {path}");
    Ok(())
}
