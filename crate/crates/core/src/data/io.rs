use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Condition, Dataset, Sample};
use crate::error::{Error, LoadIssue, Result};
use crate::imageio::{self, Raster};
use crate::tensor::Tensor4;

pub const MANIFEST_FILE: &str = "manifest.tsv";

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn mask_from_raster(r: &Raster, path: &Path) -> std::result::Result<Tensor4, LoadIssue> {
    let mut m = Tensor4::zeros([1, 1, r.height, r.width]);
    for (i, v) in m.data_mut().iter_mut().enumerate() {
        match r.pixels[i * r.channels] {
            0 => {}
            255 => *v = 1.0,
            value => {
                return Err(LoadIssue::NonBinaryMask {
                    path: path.to_path_buf(),
                    value,
                })
            }
        }
    }
    Ok(m)
}

/// Loads `<root>/<condition>/{img,mask}/<id>.png` pairs.
///
/// All per-file problems are collected; if there is any, loading fails with
/// [`Error::DatasetLoad`] listing every one of them.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut issues = Vec::new();
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(condition) = Condition::from_dir_name(name) else {
            log::warn!("skipping unrecognized directory {}", dir.display());
            continue;
        };
        let images = png_stems(&dir.join("img"))?;
        let masks = png_stems(&dir.join("mask"))?;
        for (stem, path) in &masks {
            if !images.contains_key(stem) {
                issues.push(LoadIssue::OrphanMask(path.clone()));
            }
        }
        for (stem, img_path) in &images {
            let Some(mask_path) = masks.get(stem) else {
                issues.push(LoadIssue::OrphanImage(img_path.clone()));
                continue;
            };
            if !seen.insert(stem.clone()) {
                issues.push(LoadIssue::DuplicateId(stem.clone()));
                continue;
            }
            let read = |p: &Path| {
                imageio::read_png(p).map_err(|e| LoadIssue::Unreadable {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })
            };
            let (img, mask) = match (read(img_path), read(mask_path)) {
                (Ok(i), Ok(m)) => (i, m),
                (i, m) => {
                    issues.extend(i.err());
                    issues.extend(m.err());
                    continue;
                }
            };
            if (img.width, img.height) != (mask.width, mask.height) {
                issues.push(LoadIssue::SizeMismatch {
                    image: img_path.clone(),
                    mask: mask_path.clone(),
                });
                continue;
            }
            let mask = match mask_from_raster(&mask, mask_path) {
                Ok(m) => m,
                Err(issue) => {
                    issues.push(issue);
                    continue;
                }
            };
            let image = imageio::raster_to_rgb(&img);
            samples.push(Sample {
                id: stem.clone(),
                condition,
                image,
                mask,
            });
        }
    }
    if !issues.is_empty() {
        return Err(Error::DatasetLoad(issues));
    }
    let mut ds = Dataset::new(samples)?;
    ds.root = Some(root.to_path_buf());
    Ok(ds)
}

fn relative_paths(s: &Sample) -> (String, String) {
    let d = s.condition.dir_name();
    (
        format!("{d}/img/{}.png", s.id),
        format!("{d}/mask/{}.png", s.id),
    )
}

/// SHA-256 over the 8-bit pixel content of a sample (extent, image, mask).
fn content_hash(s: &Sample) -> String {
    let shape = s.image.shape();
    let mut h = Sha256::new();
    h.update((shape.h as u64).to_le_bytes());
    h.update((shape.w as u64).to_le_bytes());
    h.update(imageio::rgb_bytes(&s.image));
    h.update(imageio::mask_bytes(&s.mask));
    hex::encode(h.finalize())
}

/// Tab-separated manifest with one row per sample in identifier order.
pub fn manifest_text(ds: &Dataset) -> String {
    let mut out = String::from("id\tcondition\timage\tmask\tsha256\n");
    for s in ds.iter() {
        let (img, mask) = relative_paths(s);
        let _ = writeln!(
            out,
            "{}\t{}\t{img}\t{mask}\t{}",
            s.id,
            s.condition.dir_name(),
            content_hash(s)
        );
    }
    out
}

pub fn write_manifest(ds: &Dataset, root: &Path) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest_text(ds)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// Writes every sample as PNGs under `root`, then the manifest.
///
/// The manifest is written last, so a failed write never leaves a manifest
/// describing files that do not exist.
pub fn write_dataset(ds: &Dataset, root: &Path, config_hash: Option<&str>) -> Result<()> {
    for s in ds.iter() {
        let d = root.join(s.condition.dir_name());
        for sub in ["img", "mask"] {
            fs::create_dir_all(d.join(sub)).map_err(|e| Error::io(d.join(sub), e))?;
        }
        let (img, mask) = relative_paths(s);
        let shape = s.image.shape();
        imageio::write_rgb(
            &root.join(img),
            shape.w,
            shape.h,
            &imageio::rgb_bytes(&s.image),
            config_hash,
        )?;
        imageio::write_gray(
            &root.join(mask),
            shape.w,
            shape.h,
            &imageio::mask_bytes(&s.mask),
            config_hash,
        )?;
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_manifest(ds, root)
}
