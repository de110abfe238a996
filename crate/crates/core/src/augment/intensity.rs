//! Image-only intensity transforms on `[0, 1]` data.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometric::reflect;
use crate::tensor::Tensor4;

/// Adds i.i.d. `N(mean, std)` noise; values are not clamped.
pub fn gaussian_noise(image: &Tensor4, mean: f64, std: f64, rng: &mut impl Rng) -> Tensor4 {
    let mut out = image.clone();
    if std == 0.0 {
        out.data_mut().iter_mut().for_each(|v| *v += mean);
        return out;
    }
    let dist = Normal::new(mean, std.abs()).expect("finite noise parameters");
    for v in out.data_mut() {
        *v += dist.sample(rng);
    }
    out
}

/// `x -> x^gamma` after clamping to `[0, 1]`.
pub fn adjust_contrast(image: &Tensor4, gamma: f64) -> Tensor4 {
    image.map(|v| v.clamp(0.0, 1.0).powf(gamma))
}

/// `x -> clamp(x + offset, 0, 1)`.
pub fn shift_intensity(image: &Tensor4, offset: f64) -> Tensor4 {
    image.map(|v| (v + offset).clamp(0.0, 1.0))
}

/// Monotone piecewise-linear intensity map through `(xs[i], ys[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl IntensityCurve {
    /// `points` knots evenly spaced over `[0, 1]`, each target perturbed by
    /// up to `±perturbation`, clamped to `[0, 1]` and repaired to be
    /// non-decreasing with a running maximum.
    pub fn random(points: usize, perturbation: f64, rng: &mut impl Rng) -> Self {
        let points = points.max(2);
        let xs: Vec<f64> = (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect();
        let mut ys = Vec::with_capacity(points);
        let mut running = 0.0f64;
        for &x in &xs {
            let y = (x + rng.random_range(-perturbation..=perturbation)).clamp(0.0, 1.0);
            running = running.max(y);
            ys.push(running);
        }
        Self { xs, ys }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let i = self
            .xs
            .windows(2)
            .position(|w| v <= w[1])
            .unwrap_or(self.xs.len() - 2);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let t = if x1 > x0 { (v - x0) / (x1 - x0) } else { 0.0 };
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }
}

pub fn histogram_shift(image: &Tensor4, curve: &IntensityCurve) -> Tensor4 {
    image.map(|v| curve.eval(v))
}

/// Normalized Gaussian taps on `[-ceil(3 sigma), ceil(3 sigma)]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(0.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable isotropic Gaussian blur with reflect padding.
pub fn gaussian_smooth(image: &Tensor4, sigma: f64) -> Tensor4 {
    if sigma <= 0.0 {
        return image.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let s = image.shape();
    let mut out = image.clone();
    let mut tmp = vec![0.0; s.plane()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    tmp[y * s.w + x] = k
                        .iter()
                        .enumerate()
                        .map(|(i, kv)| {
                            kv * src[y * s.w + reflect(x as isize + i as isize - r, s.w)]
                        })
                        .sum();
                }
            }
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    dst[y * s.w + x] = k
                        .iter()
                        .enumerate()
                        .map(|(i, kv)| {
                            kv * tmp[reflect(y as isize + i as isize - r, s.h) * s.w + x]
                        })
                        .sum();
                }
            }
        }
    }
    out
}
