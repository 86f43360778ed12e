//! Regenerates `assets/global_p8_m256.gvcd` and prints its hash.

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/assets/global_p8_m256.gvcd".into());
    let d = gvcsr_core::assets::train_global_dictionary()?;
    d.save(&out)?;
    println!("{} {}", out, d.hash());
    Ok(())
}
