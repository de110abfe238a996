//! Overfits model 1 on the desk profile and prints the learning curve.
//!
//! cargo run --release --example train_stage1 -- [epochs] [lr]

use ctiunet::config::RunConfig;
use ctiunet::data::generate_synthetic;
use ctiunet::train::train_stage1;
use ctiunet::unet::build_unet;

fn main() -> ctiunet::Result<()> {
    env_logger::init();
    let mut cfg = RunConfig::from_toml(include_str!("../../../configs/desk.toml"))?;
    let mut args = std::env::args().skip(1);
    if let Some(e) = args.next() {
        cfg.stage1.epochs = e.parse().expect("epochs");
    }
    if let Some(lr) = args.next() {
        cfg.stage1.optimizer.lr = lr.parse().expect("learning rate");
    }
    let ds = generate_synthetic(&cfg.synthetic_spec())?;
    let (train, val) = ctiunet::data::split(&ds, &cfg.split_spec())?;
    let mut model = build_unet(&cfg.model1, cfg.init_seed(1))?;
    println!(
        "{} parameters, {} train / {} val",
        model.parameter_count(),
        train.len(),
        val.len()
    );
    let log = train_stage1(&mut model, &train, &val, &cfg.train_options(1), None)?;
    println!("epoch  train_loss  val_dsc");
    for e in &log.epochs {
        println!(
            "{:>5}  {:>10.4}  {:>7.4}",
            e.epoch,
            e.train_loss,
            e.val_dsc.unwrap_or(f64::NAN)
        );
    }
    println!(
        "best val DSC {:.4} at epoch {} ({:.1}s)",
        log.best_val_dsc.unwrap_or(f64::NAN),
        log.best_epoch,
        log.wall_seconds
    );
    Ok(())
}
