//! Samples, datasets, preprocessing and deterministic splitting.

mod io;
mod synthetic;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, manifest_text, write_dataset, write_manifest, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor4;

/// Tissue condition of a tile. Directory names follow the challenge layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "56Nx")]
    Nephrectomy56,
    #[serde(rename = "DN")]
    DiabeticNephropathy,
    #[serde(rename = "NEP25")]
    Nep25,
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Condition {
    pub const KIDNEY: [Condition; 4] = [
        Condition::Nephrectomy56,
        Condition::DiabeticNephropathy,
        Condition::Nep25,
        Condition::Normal,
    ];

    pub const ALL: [Condition; 5] = [
        Condition::Nephrectomy56,
        Condition::DiabeticNephropathy,
        Condition::Nep25,
        Condition::Normal,
        Condition::Synthetic,
    ];

    /// Report label.
    pub fn label(self) -> &'static str {
        match self {
            Condition::Nephrectomy56 => "5/6Nx",
            Condition::DiabeticNephropathy => "DN",
            Condition::Nep25 => "NEP25",
            Condition::Normal => "Normal",
            Condition::Synthetic => "Synthetic",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Condition::Nephrectomy56 => "56Nx",
            Condition::DiabeticNephropathy => "DN",
            Condition::Nep25 => "NEP25",
            Condition::Normal => "normal",
            Condition::Synthetic => "synthetic",
        }
    }

    pub fn from_dir_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| {
            c.dir_name().eq_ignore_ascii_case(name) || c.label().eq_ignore_ascii_case(name)
        })
    }
}

/// One tile with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub condition: Condition,
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor4,
    /// `(1, 1, h, w)` binary.
    pub mask: Tensor4,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        condition: Condition,
        image: Tensor4,
        mask: Tensor4,
    ) -> Result<Self> {
        let (si, sm) = (image.shape(), mask.shape());
        if si.n != 1 || si.c != 3 || sm.n != 1 || sm.c != 1 {
            return Err(Error::validation(format!(
                "sample needs a (1,3,h,w) image and (1,1,h,w) mask, got {si} and {sm}"
            )));
        }
        if (si.h, si.w) != (sm.h, sm.w) {
            return Err(Error::validation(format!(
                "image {si} and mask {sm} differ in extent"
            )));
        }
        if !mask.is_binary() {
            return Err(Error::validation("sample mask must be binary"));
        }
        Ok(Self {
            id: id.into(),
            condition,
            image,
            mask,
        })
    }
}

/// Samples kept in sorted identifier order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    pub root: Option<PathBuf>,
}

impl Dataset {
    pub fn new(mut samples: Vec<Sample>) -> Result<Self> {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = samples.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::validation(format!(
                "duplicate sample id {}",
                w[0].id
            )));
        }
        Ok(Self {
            samples,
            root: None,
        })
    }

    pub fn empty() -> Self {
        Self {
            samples: Vec::new(),
            root: None,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// SHA-256 of the canonical manifest text.
    pub fn manifest_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(manifest_text(self).as_bytes()))
    }
}

/// Per (batch, channel) standardization: `(x - mean) / max(std, 1e-6)`.
/// Constant planes map to zero.
pub fn normalize(image: &Tensor4) -> Tensor4 {
    let s = image.shape();
    let mut out = image.clone();
    let p = s.plane() as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = out.plane_mut(n, c);
            // exact check; a rounded mean would leave ~1e-10 residue
            if plane.iter().all(|&v| v == plane[0]) {
                plane.fill(0.0);
                continue;
            }
            let mean = plane.iter().sum::<f64>() / p;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p;
            let std = var.sqrt().max(1e-6);
            plane.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    out
}

/// Luminance `0.299 R + 0.587 G + 0.114 B` of a 3-channel image.
pub fn to_grayscale(image: &Tensor4) -> Result<Tensor4> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::validation(format!(
            "grayscale conversion needs 3 channels, got {}",
            s.c
        )));
    }
    let mut out = Tensor4::zeros([s.n, 1, s.h, s.w]);
    for n in 0..s.n {
        let (r, g, b) = (image.plane(n, 0), image.plane(n, 1), image.plane(n, 2));
        for (i, v) in out.plane_mut(n, 0).iter_mut().enumerate() {
            *v = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Stratified split: within each condition, samples are ordered by a seeded
/// per-identifier random key and the first `floor(train_fraction * n)` go to
/// training. Both halves keep sorted identifier order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::config(format!(
            "train fraction {} outside [0, 1]",
            spec.train_fraction
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for cond in Condition::ALL {
        let mut group: Vec<(u64, &Sample)> = dataset
            .iter()
            .filter(|s| s.condition == cond)
            .map(|s| {
                let key =
                    rng::stream(&[rng::TAG_SPLIT, spec.seed, rng::hash_str(&s.id)]).random::<u64>();
                (key, s)
            })
            .collect();
        group.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        let n_train = (spec.train_fraction * group.len() as f64 + 1e-9).floor() as usize;
        for (i, (_, s)) in group.into_iter().enumerate() {
            if i < n_train {
                train.push(s.clone());
            } else {
                val.push(s.clone());
            }
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(val)?))
}
