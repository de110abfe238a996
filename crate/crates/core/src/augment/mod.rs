//! Stochastic training augmentation.
//!
//! The default [`AugmentSpec`] lists ten transforms, each applied
//! independently with its own probability, in a fixed order. Geometric
//! transforms move image and mask together; intensity transforms touch the
//! image only.

pub mod geometric;
pub mod intensity;

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor4;

pub use geometric::{affine, axis_flip, grid_distortion, rotate90, warp, zoom, DistortionGrid};
pub use intensity::{
    adjust_contrast, gaussian_noise, gaussian_smooth, histogram_shift, shift_intensity,
    IntensityCurve,
};

/// Transform kind and its parameter ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Transform {
    /// Quarter turns `k` drawn from `{1, 2, 3}`.
    Rotate90,
    Zoom {
        min: f64,
        max: f64,
    },
    /// Axis drawn from `{0, 1}`.
    AxisFlip,
    /// Each parameter drawn uniformly in `±value`.
    Affine {
        rotate: f64,
        scale: f64,
        shear: f64,
    },
    GridDistortion {
        limit: f64,
        cells: usize,
    },
    GaussianNoise {
        mean: f64,
        std: f64,
    },
    AdjustContrast {
        gamma_min: f64,
        gamma_max: f64,
    },
    ShiftIntensity {
        offset_min: f64,
        offset_max: f64,
    },
    HistogramShift {
        control_points: usize,
        perturbation: f64,
    },
    GaussianSmooth {
        sigma_min: f64,
        sigma_max: f64,
    },
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Rotate90 => "rotate90",
            Transform::Zoom { .. } => "zoom",
            Transform::AxisFlip => "axis_flip",
            Transform::Affine { .. } => "affine",
            Transform::GridDistortion { .. } => "grid_distortion",
            Transform::GaussianNoise { .. } => "gaussian_noise",
            Transform::AdjustContrast { .. } => "adjust_contrast",
            Transform::ShiftIntensity { .. } => "shift_intensity",
            Transform::HistogramShift { .. } => "histogram_shift",
            Transform::GaussianSmooth { .. } => "gaussian_smooth",
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            Transform::Rotate90
                | Transform::Zoom { .. }
                | Transform::AxisFlip
                | Transform::Affine { .. }
                | Transform::GridDistortion { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformEntry {
    #[serde(flatten)]
    pub transform: Transform,
    pub p: f64,
}

impl TransformEntry {
    pub fn new(transform: Transform, p: f64) -> Self {
        Self { transform, p }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub transforms: Vec<TransformEntry>,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        use Transform::*;
        let t = |transform, p| TransformEntry::new(transform, p);
        Self {
            transforms: vec![
                t(Rotate90, 0.5),
                t(Zoom { min: 0.9, max: 1.1 }, 0.5),
                t(AxisFlip, 0.5),
                t(
                    Affine {
                        rotate: 0.1,
                        scale: 0.1,
                        shear: 0.1,
                    },
                    0.5,
                ),
                t(
                    GridDistortion {
                        limit: 0.03,
                        cells: 5,
                    },
                    0.5,
                ),
                t(
                    GaussianNoise {
                        mean: 0.0,
                        std: 0.1,
                    },
                    0.2,
                ),
                t(
                    AdjustContrast {
                        gamma_min: 0.7,
                        gamma_max: 1.5,
                    },
                    0.5,
                ),
                t(
                    ShiftIntensity {
                        offset_min: 0.1,
                        offset_max: 0.2,
                    },
                    0.5,
                ),
                t(
                    HistogramShift {
                        control_points: 3,
                        perturbation: 0.1,
                    },
                    0.5,
                ),
                t(
                    GaussianSmooth {
                        sigma_min: 0.5,
                        sigma_max: 1.0,
                    },
                    0.5,
                ),
            ],
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// No transforms at all.
    pub fn disabled() -> Self {
        Self {
            transforms: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.transforms {
            if !(0.0..=1.0).contains(&e.p) {
                return Err(Error::config(format!(
                    "{} probability {} outside [0, 1]",
                    e.transform.name(),
                    e.p
                )));
            }
            let ordered = |lo: f64, hi: f64| lo <= hi && lo.is_finite() && hi.is_finite();
            let ok = match &e.transform {
                Transform::Zoom { min, max } => ordered(*min, *max) && *min > 0.0,
                Transform::AdjustContrast {
                    gamma_min,
                    gamma_max,
                } => ordered(*gamma_min, *gamma_max) && *gamma_min > 0.0,
                Transform::ShiftIntensity {
                    offset_min,
                    offset_max,
                } => ordered(*offset_min, *offset_max),
                Transform::GaussianSmooth {
                    sigma_min,
                    sigma_max,
                } => ordered(*sigma_min, *sigma_max) && *sigma_min >= 0.0,
                Transform::GaussianNoise { std, .. } => *std >= 0.0,
                Transform::GridDistortion { limit, cells } => *cells > 0 && *limit >= 0.0,
                Transform::Affine {
                    rotate,
                    scale,
                    shear,
                } => *rotate >= 0.0 && *shear >= 0.0 && (0.0..1.0).contains(scale),
                Transform::HistogramShift {
                    control_points,
                    perturbation,
                } => *control_points >= 2 && *perturbation >= 0.0,
                Transform::Rotate90 | Transform::AxisFlip => true,
            };
            if !ok {
                return Err(Error::config(format!(
                    "invalid parameters for {}",
                    e.transform.name()
                )));
            }
        }
        Ok(())
    }
}

/// One applied transform with its drawn parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedTransform {
    pub name: String,
    pub params: Vec<(String, f64)>,
}

impl fmt::Display for AppliedTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v:.4}")?;
        }
        write!(f, ")")
    }
}

/// Image `(1, C, H, W)` and binary mask `(1, 1, H, W)` moving together.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub image: Tensor4,
    pub mask: Tensor4,
    pub log: Vec<AppliedTransform>,
}

impl AugmentedPair {
    pub fn new(image: Tensor4, mask: Tensor4) -> Self {
        Self {
            image,
            mask,
            log: Vec::new(),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn apply_one(pair: AugmentedPair, t: &Transform, rng: &mut ChaCha8Rng) -> AugmentedPair {
    let mut params = Vec::new();
    let mut p = |k: &str, v: f64| params.push((k.to_string(), v));
    let mut out = match t {
        Transform::Rotate90 => {
            let k = rng.random_range(1..=3usize);
            p("k", k as f64);
            rotate90(&pair, k)
        }
        Transform::Zoom { min, max } => {
            let f = draw(rng, *min, *max);
            p("factor", f);
            zoom(&pair, f)
        }
        Transform::AxisFlip => {
            let axis = rng.random_range(0..2usize);
            p("axis", axis as f64);
            axis_flip(&pair, axis)
        }
        Transform::Affine {
            rotate,
            scale,
            shear,
        } => {
            let r = draw(rng, -rotate, *rotate);
            let sh = draw(rng, -shear, *shear);
            let sx = draw(rng, -scale, *scale);
            let sy = draw(rng, -scale, *scale);
            p("rotate", r);
            p("shear", sh);
            p("scale_x", sx);
            p("scale_y", sy);
            affine(&pair, r, sh, (sx, sy))
        }
        Transform::GridDistortion { limit, cells } => {
            let s = pair.image.shape();
            let (cw, ch) = (s.w as f64 / *cells as f64, s.h as f64 / *cells as f64);
            let offsets: Vec<(f64, f64)> = (0..(cells + 1) * (cells + 1))
                .map(|_| {
                    (
                        draw(rng, -limit, *limit) * cw,
                        draw(rng, -limit, *limit) * ch,
                    )
                })
                .collect();
            let max = offsets
                .iter()
                .fold(0.0f64, |m, o| m.max(o.0.abs()).max(o.1.abs()));
            p("max_offset_px", max);
            grid_distortion(
                &pair,
                &DistortionGrid {
                    cells: *cells,
                    offsets,
                },
            )
        }
        Transform::GaussianNoise { mean, std } => {
            p("mean", *mean);
            p("std", *std);
            AugmentedPair {
                image: gaussian_noise(&pair.image, *mean, *std, rng),
                ..pair
            }
        }
        Transform::AdjustContrast {
            gamma_min,
            gamma_max,
        } => {
            let g = draw(rng, *gamma_min, *gamma_max);
            p("gamma", g);
            AugmentedPair {
                image: adjust_contrast(&pair.image, g),
                ..pair
            }
        }
        Transform::ShiftIntensity {
            offset_min,
            offset_max,
        } => {
            let o = draw(rng, *offset_min, *offset_max);
            p("offset", o);
            AugmentedPair {
                image: shift_intensity(&pair.image, o),
                ..pair
            }
        }
        Transform::HistogramShift {
            control_points,
            perturbation,
        } => {
            let curve = IntensityCurve::random(*control_points, *perturbation, rng);
            for (i, y) in curve.ys.iter().enumerate() {
                p(&format!("y{i}"), *y);
            }
            AugmentedPair {
                image: histogram_shift(&pair.image, &curve),
                ..pair
            }
        }
        Transform::GaussianSmooth {
            sigma_min,
            sigma_max,
        } => {
            let s = draw(rng, *sigma_min, *sigma_max);
            p("sigma", s);
            AugmentedPair {
                image: gaussian_smooth(&pair.image, s),
                ..pair
            }
        }
    };
    out.log.push(AppliedTransform {
        name: t.name().to_string(),
        params,
    });
    out
}

/// Runs the pipeline with the stream keyed by `(spec.seed, sample, epoch)`.
pub fn apply_pipeline(
    pair: AugmentedPair,
    spec: &AugmentSpec,
    sample: u64,
    epoch: u64,
) -> AugmentedPair {
    let mut rng = rng::stream(&[rng::TAG_AUGMENT, spec.seed, sample, epoch]);
    apply_with_rng(pair, spec, &mut rng)
}

pub fn apply_with_rng(
    mut pair: AugmentedPair,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> AugmentedPair {
    for e in &spec.transforms {
        // always consume the coin so later draws do not shift with p
        let coin: f64 = rng.random();
        if coin < e.p {
            pair = apply_one(pair, &e.transform, rng);
        }
    }
    for a in &pair.log {
        log::debug!("augment {a}");
    }
    pair
}
