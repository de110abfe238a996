//! Writes a synthetic dataset and prints per-tile foreground fractions.
//!
//! cargo run --example gen_synthetic -- <dir> [count] [difficulty]

use std::path::PathBuf;

use ctiunet::data::{generate_synthetic, load_dataset, write_dataset, SyntheticSpec};

fn main() -> ctiunet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let spec = SyntheticSpec {
        count: args.next().map_or(8, |s| s.parse().expect("count")),
        difficulty: args.next().map_or(0.5, |s| s.parse().expect("difficulty")),
        ..Default::default()
    };
    let ds = generate_synthetic(&spec)?;
    write_dataset(&ds, &dir, None)?;
    // reload to show the on-disk form round-trips
    let back = load_dataset(&dir)?;
    for s in back.iter() {
        println!(
            "{}  {:<6}  foreground {:.3}",
            s.id,
            s.condition.label(),
            s.mask.mean()
        );
    }
    println!(
        "{} tiles in {}, manifest {}",
        back.len(),
        dir.display(),
        back.manifest_hash()
    );
    Ok(())
}
