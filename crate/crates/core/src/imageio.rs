//! 8-bit PNG reading and writing for tiles, masks and overlays.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// tEXt keyword carrying the configuration hash of the run that wrote a file.
pub const HASH_KEY: &str = "ctiunet-config-hash";

/// Decoded 8-bit raster, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub config_hash: Option<String>,
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let config_hash = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == HASH_KEY)
        .map(|t| t.text.clone());
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, e))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette image")),
    };
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        pixels: buf,
        config_hash,
    })
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: &[u8],
    config_hash: Option<&str>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(h) = config_hash {
        enc.add_text_chunk(HASH_KEY.to_string(), h.to_string())
            .map_err(|e| image_err(path, e))?;
    }
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}

pub fn write_gray(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    hash: Option<&str>,
) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, pixels, hash)
}

pub fn write_rgb(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    hash: Option<&str>,
) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, pixels, hash)
}

/// `[0, 1]` value to an 8-bit level (clamped, rounded).
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB raster (gray and alpha inputs are expanded / dropped) as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn raster_to_rgb(r: &Raster) -> Tensor4 {
    let (h, w) = (r.height, r.width);
    let mut t = Tensor4::zeros([1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = &r.pixels[(y * w + x) * r.channels..(y * w + x + 1) * r.channels];
            let rgb = match r.channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            for (c, v) in rgb.iter().enumerate() {
                t.set(0, c, y, x, f64::from(*v) / 255.0);
            }
        }
    }
    t
}

/// Interleaved 8-bit RGB bytes of batch item 0 of a `(_, 3, h, w)` tensor.
pub fn rgb_bytes(image: &Tensor4) -> Vec<u8> {
    let s = image.shape();
    let mut out = Vec::with_capacity(s.plane() * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(to_u8(image.at(0, c, y, x)));
            }
        }
    }
    out
}

/// 8-bit bytes of channel `c` of batch item 0.
pub fn gray_bytes(t: &Tensor4, c: usize) -> Vec<u8> {
    t.plane(0, c).iter().map(|&v| to_u8(v)).collect()
}

/// Binary mask `{0, 1}` as `{0, 255}` bytes.
pub fn mask_bytes(mask: &Tensor4) -> Vec<u8> {
    mask.plane(0, 0)
        .iter()
        .map(|&v| if v >= 0.5 { 255 } else { 0 })
        .collect()
}
