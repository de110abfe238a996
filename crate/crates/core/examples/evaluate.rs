//! Scores a deliberately imperfect prediction set and prints the report
//! table and TSV.

use ctiunet::data::{generate_synthetic, SyntheticSpec};
use ctiunet::metrics::{aggregate, RunMetadata, SampleScore};

fn main() -> ctiunet::Result<()> {
    let ds = generate_synthetic(&SyntheticSpec {
        count: 12,
        ..Default::default()
    })?;
    let mut scores = Vec::new();
    for (i, s) in ds.iter().enumerate() {
        // shift the mask right by i % 4 pixels
        let shift = i % 4;
        let sh = s.mask.shape();
        let mut pred = s.mask.clone();
        for y in 0..sh.h {
            for x in 0..sh.w {
                let v = if x >= shift {
                    s.mask.at(0, 0, y, x - shift)
                } else {
                    0.0
                };
                pred.set(0, 0, y, x, v);
            }
        }
        scores.push(SampleScore::from_masks(&s.id, s.condition, &pred, &s.mask)?);
    }
    let report = aggregate(&scores, RunMetadata::default())?;
    print!("{}", report.render_table("shifted ground truth"));
    println!();
    print!("{}", report.to_tsv());
    Ok(())
}
