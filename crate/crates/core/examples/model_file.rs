//! Saves a freshly initialized model, reloads it and confirms the outputs
//! are bit-identical; then shows how a corrupted file is rejected.

use ctiunet::unet::{build_unet, encode_model, load_model, save_model, UNetConfig};
use ctiunet::Tensor4;

fn main() -> ctiunet::Result<()> {
    let dir = std::env::temp_dir().join("ctiunet-model-file-example");
    std::fs::create_dir_all(&dir).map_err(|e| ctiunet::Error::io(&dir, e))?;
    let path = dir.join("model.ctiu");
    let model = build_unet(&UNetConfig::new(3, vec![8, 16, 32]), 42)?;
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    let x = Tensor4::from_vec(
        [1, 3, 32, 32],
        (0..3072).map(|i| (i as f64 * 0.01).sin()).collect(),
    )?;
    let same = model.predict_probs(&x)? == back.predict_probs(&x)?;
    let bytes = encode_model(&model);
    println!(
        "{} parameters, {} bytes, reload identical: {same}",
        model.parameter_count(),
        bytes.len()
    );
    std::fs::write(&path, &bytes[..bytes.len() - 7]).map_err(|e| ctiunet::Error::io(&path, e))?;
    match load_model(&path) {
        Ok(_) => println!("truncated file unexpectedly loaded"),
        Err(e) => println!("truncated file rejected: {e}"),
    }
    Ok(())
}
