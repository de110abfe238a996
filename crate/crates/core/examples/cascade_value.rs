//! Trains model 2 against a noisy teacher and compares it with the
//! single-threshold baselines it consumes.
//!
//! cargo run --release --example cascade_value -- [epochs] [lr] [seeds]

use ctiunet::augment::AugmentSpec;
use ctiunet::cascade::{binarize_multi, ThresholdSet};
use ctiunet::data::{generate_synthetic, split, SplitSpec, SyntheticSpec};
use ctiunet::loss::{CompositeLossConfig, TverskyParams};
use ctiunet::metrics::{confusion, dsc};
use ctiunet::nn::AdamConfig;
use ctiunet::train::{
    evaluate_examples, stage2_examples, train_stage2, NoisyTeacher, Teacher, TrainOptions,
    VALIDATION_EPOCH,
};
use ctiunet::unet::{build_unet, UNetConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .map_or(default, |s| s.parse().ok().expect("numeric argument"))
}

fn main() -> ctiunet::Result<()> {
    let (epochs, lr, seeds): (usize, f64, u64) = (arg(1, 60), arg(2, 3e-3), arg(3, 5));
    let thresholds = ThresholdSet::default();
    for seed in 0..seeds {
        let ds = generate_synthetic(&SyntheticSpec {
            seed,
            ..Default::default()
        })?;
        let (train, val) = split(
            &ds,
            &SplitSpec {
                train_fraction: 0.8,
                seed,
            },
        )?;
        let teacher = NoisyTeacher {
            seed,
            ..Default::default()
        };
        let mut baselines = vec![0.0; thresholds.len()];
        for (i, s) in val.iter().enumerate() {
            let p = teacher.probs(&s.image, &s.mask, i as u64, VALIDATION_EPOCH)?;
            let st = binarize_multi(&p, &thresholds)?;
            for (k, b) in baselines.iter_mut().enumerate() {
                *b += dsc(&confusion(&st.channel(k)?, &s.mask)?) / val.len() as f64;
            }
        }
        let mut model = build_unet(&UNetConfig::new(4, vec![8, 16, 32]), 1000 + seed)?;
        let opts = TrainOptions {
            epochs,
            batch_size: 4,
            adam: AdamConfig {
                lr,
                ..Default::default()
            },
            loss: CompositeLossConfig::new(TverskyParams::BALANCED),
            augment: AugmentSpec::disabled(),
            crop: None,
            seed,
        };
        let log = train_stage2(&mut model, &teacher, &thresholds, &train, &val, &opts, None)?;
        let (d, _) = evaluate_examples(
            &model,
            &stage2_examples(&teacher, &thresholds, 4, &val)?,
            &opts.loss,
        )?;
        println!(
            "seed {seed}: thresholds {:?} -> {baselines:.4?}, model 2 {d:.4} ({:.0}s)",
            thresholds.values(),
            log.wall_seconds
        );
    }
    Ok(())
}
