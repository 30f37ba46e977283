//! Regenerates the shipped small-UNet graph and weights.
//!
//! `cargo run -p choroid-core --example write_fixture [-- <dir>]`

use std::path::PathBuf;

use choroid_core::nnexec::fixture::{seeded_weights, small_unet, FIXTURE_SEED};
use choroid_core::nnexec::encode_weights;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    std::fs::create_dir_all(&dir)?;
    let spec = small_unet(544, 768);
    let weights = seeded_weights(&spec, FIXTURE_SEED);
    std::fs::write(dir.join("small_unet.json"), spec.to_json()? + "\n")?;
    std::fs::write(dir.join("small_unet.weights.bin"), encode_weights(&weights, true))?;
    println!("{} layers, {} weights -> {}", spec.layers.len(), weights.len(), dir.display());
    Ok(())
}
