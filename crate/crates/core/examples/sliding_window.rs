//! Stitches a large map from overlapping windows with both blends and
//! reports the reconstruction error of an input-copying predictor.

use ctiunet::cascade::{sliding_window_infer, Blend, WindowSpec};
use ctiunet::Tensor4;

fn main() -> ctiunet::Result<()> {
    let (h, w) = (150, 200);
    let image = Tensor4::from_vec(
        [1, 1, h, w],
        (0..h * w)
            .map(|i| 0.5 + 0.5 * ((i / w) as f64 * 0.05).sin() * ((i % w) as f64 * 0.03).cos())
            .collect(),
    )?;
    let copy = |x: &Tensor4| Ok(x.clone());
    // a predictor whose windows disagree: each adds its own mean as an offset
    let biased = |x: &Tensor4| Ok(x.map(|v| (v + 0.1 * x.mean()).min(1.0)));
    for blend in [Blend::Constant, Blend::Gaussian] {
        for overlap in [0.0, 0.25, 0.5] {
            let spec = WindowSpec {
                window: 64,
                overlap,
                blend,
            };
            let exact = sliding_window_infer(&copy, &image, &spec)?.max_abs_diff(&image);
            let seams = sliding_window_infer(&biased, &image, &spec)?;
            println!(
                "{blend:?} overlap {overlap:.2}: {} windows, copy error {exact:.1e}, biased mean {:.4}",
                spec.origins(h)?.len() * spec.origins(w)?.len(),
                seams.mean()
            );
        }
    }
    Ok(())
}
