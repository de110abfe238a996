//! Applies the default augmentation pipeline to one synthetic tile over a
//! few epochs, writing each result and printing what was applied.
//!
//! cargo run --example augment_preview -- <dir>

use std::path::PathBuf;

use ctiunet::augment::{apply_pipeline, AugmentSpec, AugmentedPair};
use ctiunet::data::{generate_synthetic, SyntheticSpec};
use ctiunet::imageio;

fn main() -> ctiunet::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "augment-preview".into()),
    );
    std::fs::create_dir_all(&dir).map_err(|e| ctiunet::Error::io(&dir, e))?;
    let ds = generate_synthetic(&SyntheticSpec {
        count: 1,
        size: 96,
        ..Default::default()
    })?;
    let s = &ds.samples()[0];
    let spec = AugmentSpec::default();
    for epoch in 0..6 {
        let out = apply_pipeline(
            AugmentedPair::new(s.image.clone(), s.mask.clone()),
            &spec,
            0,
            epoch,
        );
        let sh = out.image.shape();
        imageio::write_rgb(
            &dir.join(format!("epoch{epoch}_img.png")),
            sh.w,
            sh.h,
            &imageio::rgb_bytes(&out.image),
            None,
        )?;
        imageio::write_gray(
            &dir.join(format!("epoch{epoch}_mask.png")),
            sh.w,
            sh.h,
            &imageio::mask_bytes(&out.mask),
            None,
        )?;
        let applied: Vec<String> = out.log.iter().map(ToString::to_string).collect();
        println!(
            "epoch {epoch}: {}",
            if applied.is_empty() {
                "-".into()
            } else {
                applied.join(", ")
            }
        );
    }
    Ok(())
}
