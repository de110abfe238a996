use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Condition, Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor4;

/// Parameters of the synthetic tile generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Tile side length in pixels.
    pub size: usize,
    pub seed: u64,
    /// In `[0, 1]`; scales background clutter, noise and edge softness.
    pub difficulty: f64,
    /// Conditions assigned round-robin by sample index.
    pub conditions: Vec<Condition>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 16,
            size: 64,
            seed: 0,
            difficulty: 0.5,
            conditions: Condition::KIDNEY.to_vec(),
        }
    }
}

const BACKGROUND: [f64; 3] = [0.93, 0.76, 0.86];
const CLUTTER: [f64; 3] = [0.80, 0.55, 0.72];
const BLOB: [f64; 3] = [0.50, 0.24, 0.62];

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        Self {
            cx: rng.random_range(0.15..0.85) * size,
            cy: rng.random_range(0.15..0.85) * size,
            a: rng.random_range(0.08..0.20) * size,
            b: rng.random_range(0.08..0.20) * size,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Normalized radius (1 on the boundary) and approximate pixel distance
    /// to the boundary, signed positive outside.
    fn radius(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        let r = (u * u + v * v).sqrt();
        (r, (r - 1.0) * self.a.min(self.b))
    }
}

/// Smooth low-frequency texture in roughly `[-1, 1]`.
struct Texture {
    waves: Vec<(f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, size: f64, scale: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = rng.random_range(1.0..4.0) * scale * std::f64::consts::TAU / size;
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|(kx, ky, ph)| (kx * x + ky * y + ph).sin())
            .sum::<f64>()
            / self.waves.len() as f64
    }
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<Sample> {
    let mut rng = rng::stream(&[rng::TAG_SYNTHETIC, spec.seed, index as u64]);
    let n = spec.size;
    let size = n as f64;
    let d = spec.difficulty;
    let edge_sigma = 0.5 + 1.5 * d;
    let noise = Normal::new(0.0, 0.01 + 0.04 * d).expect("finite sigma");

    let background = Texture::random(&mut rng, size, 1.0);
    let stain = Texture::random(&mut rng, size, 3.0);
    let blobs: Vec<Ellipse> = (0..rng.random_range(1..=5))
        .map(|_| Ellipse::random(&mut rng, size))
        .collect();
    let n_clutter = (d * size * size / 128.0).round() as usize;
    let clutter: Vec<(f64, f64, f64)> = (0..n_clutter)
        .map(|_| {
            (
                rng.random_range(0.0..size),
                rng.random_range(0.0..size),
                rng.random_range(0.8..2.0),
            )
        })
        .collect();

    let mut image = Tensor4::zeros([1, 3, n, n]);
    let mut mask = Tensor4::zeros([1, 1, n, n]);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            let mut alpha: f64 = 0.0;
            for e in &blobs {
                let (r, dist) = e.radius(px, py);
                inside |= r <= 1.0;
                // Gaussian falloff on both sides, crossing 0.5 at the boundary
                let g = 0.5 * (-(dist * dist) / (2.0 * edge_sigma * edge_sigma)).exp();
                alpha = alpha.max(if r <= 1.0 { 1.0 - g } else { g });
            }
            let clutter_alpha = clutter
                .iter()
                .map(|(cx, cy, rad)| {
                    let r2 = ((px - cx).powi(2) + (py - cy).powi(2)) / (rad * rad);
                    (-r2).exp()
                })
                .fold(0.0, f64::max)
                * d;
            let bg_shift = 0.04 * (1.0 + d) * background.at(px, py);
            let fg_shift = 0.06 * stain.at(px, py);
            for c in 0..3 {
                let bg = BACKGROUND[c] + bg_shift;
                let bg = bg + (CLUTTER[c] - bg) * clutter_alpha;
                let fg = BLOB[c] + fg_shift;
                let v = bg + (fg - bg) * alpha + noise.sample(&mut rng);
                image.set(0, c, y, x, v.clamp(0.0, 1.0));
            }
            if inside {
                mask.set(0, 0, y, x, 1.0);
            }
        }
    }
    if mask.sum() == 0.0 {
        // a blob smaller than a pixel: force its center pixel into the mask
        let e = &blobs[0];
        let (x, y) = ((e.cx as usize).min(n - 1), (e.cy as usize).min(n - 1));
        mask.set(0, 0, y, x, 1.0);
    }
    let condition = spec.conditions[index % spec.conditions.len()];
    Sample::new(format!("syn{index:05}"), condition, image, mask)
}

/// Pathology-like tiles: purple soft-edged ellipses on a textured pink
/// background. Masks are the exact ellipses. Sample `i` depends only on
/// `(seed, i)`, so a larger count extends a smaller one.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.count > 0 && spec.size == 0 {
        return Err(Error::config("synthetic tile size must be positive"));
    }
    if spec.conditions.is_empty() {
        return Err(Error::config(
            "synthetic generator needs at least one condition",
        ));
    }
    if !(0.0..=1.0).contains(&spec.difficulty) {
        return Err(Error::config(format!(
            "difficulty {} outside [0, 1]",
            spec.difficulty
        )));
    }
    let samples = (0..spec.count)
        .map(|i| generate_one(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}
