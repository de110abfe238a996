//! Finite-difference check of a small U-Net under the composite loss.

use ctiunet::loss::{composite_node, CompositeLossConfig, TverskyParams};
use ctiunet::nn::{grad_check, GradCheckOptions};
use ctiunet::unet::{build_unet, UNetConfig};
use ctiunet::Tensor4;
use rand::{Rng, SeedableRng};

fn main() -> ctiunet::Result<()> {
    let model = build_unet(&UNetConfig::new(3, vec![4, 8]), 7)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Tensor4::from_vec(
        [2, 3, 16, 16],
        (0..1536).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let y = Tensor4::from_vec(
        [2, 1, 16, 16],
        (0..512)
            .map(|_| f64::from(u8::from(rng.random::<f64>() < 0.3)))
            .collect(),
    )?;
    let loss = CompositeLossConfig::new(TverskyParams::STAGE1);
    let mut store = model.params().clone();
    let t = std::time::Instant::now();
    let report = grad_check(
        &mut store,
        |g, st| {
            let xv = g.input(x.clone());
            let logits = model.forward_graph_with(st, g, xv)?;
            let p = g.sigmoid(logits);
            composite_node(g, p, &y, &loss)
        },
        &GradCheckOptions {
            h: 1e-6,
            tol: 1e-3,
            reject_kinks: true,
            ..Default::default()
        },
    )?;
    println!(
        "{} coordinates ({} skipped at relu kinks), max relative error {:.2e} at {:?}, {} in {:.1}s",
        report.checked,
        report.skipped_kinks,
        report.max_rel_error,
        report.worst,
        if report.passed { "pass" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
