//! Multi-threshold binarization, model-2 input assembly, sliding-window
//! inference and end-to-end cascade execution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize, to_grayscale};
use crate::error::{Error, Result};
use crate::imageio;
use crate::tensor::Tensor4;
use crate::unet::UNetModel;

/// Strictly ascending thresholds in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("threshold set is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::config(format!("threshold {v} outside (0, 1)")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!(
                "thresholds {values:?} are not strictly ascending"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self(vec![0.01, 0.1, 0.6])
    }
}

impl TryFrom<Vec<f64>> for ThresholdSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdSet> for Vec<f64> {
    fn from(t: ThresholdSet) -> Self {
        t.0
    }
}

/// Binary masks `(1, T, H, W)`, channel `i` for threshold `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    pub masks: Tensor4,
    pub thresholds: ThresholdSet,
}

impl MaskStack {
    pub fn channel(&self, i: usize) -> Result<Tensor4> {
        self.masks.slice_channels(i, 1)
    }
}

/// Channel `i` is 1 where `prob >= thresholds[i]`.
pub fn binarize_multi(probs: &Tensor4, thresholds: &ThresholdSet) -> Result<MaskStack> {
    let s = probs.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::validation(format!(
            "binarize_multi expects a (1,1,h,w) probability map, got {s}"
        )));
    }
    let mut masks = Tensor4::zeros([1, thresholds.len(), s.h, s.w]);
    for (i, &t) in thresholds.values().iter().enumerate() {
        for (m, &p) in masks.plane_mut(0, i).iter_mut().zip(probs.data()) {
            *m = if p >= t { 1.0 } else { 0.0 };
        }
    }
    Ok(MaskStack {
        masks,
        thresholds: thresholds.clone(),
    })
}

/// Checks that a model-2 input width matches `1 + thresholds`; the error
/// names the mask-channel count the model expects and the threshold count.
pub fn check_model2_channels(in_channels: usize, thresholds: &ThresholdSet) -> Result<()> {
    if in_channels != thresholds.len() + 1 {
        return Err(Error::config(format!(
            "model 2 expects {} mask channels ({in_channels} inputs including gray) but the threshold set has {}",
            in_channels.saturating_sub(1),
            thresholds.len()
        )));
    }
    Ok(())
}

/// `[gray, mask@t1, mask@t2, ...]`. `gray` should already be normalized.
pub fn assemble_model2_input(
    gray: &Tensor4,
    stack: &MaskStack,
    in_channels: usize,
) -> Result<Tensor4> {
    check_model2_channels(in_channels, &stack.thresholds)?;
    let (g, m) = (gray.shape(), stack.masks.shape());
    if g.n != 1 || g.c != 1 || (g.h, g.w) != (m.h, m.w) {
        return Err(Error::config(format!(
            "gray {g} does not match mask stack {m}"
        )));
    }
    let mut out = Tensor4::zeros([1, in_channels, g.h, g.w]);
    out.plane_mut(0, 0).copy_from_slice(gray.data());
    for i in 0..stack.thresholds.len() {
        out.plane_mut(0, i + 1)
            .copy_from_slice(stack.masks.plane(0, i));
    }
    Ok(out)
}

/// Normalized grayscale of a raw `[0, 1]` RGB image, as fed to model 2.
pub fn model2_gray(image: &Tensor4) -> Result<Tensor4> {
    Ok(normalize(&to_grayscale(image)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    #[default]
    Constant,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub window: usize,
    pub overlap: f64,
    pub blend: Blend,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window: 64,
            overlap: 0.25,
            blend: Blend::Constant,
        }
    }
}

impl WindowSpec {
    pub fn stride(&self) -> usize {
        ((self.window as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    pub fn validate(&self, spatial_factor: usize) -> Result<()> {
        if self.window == 0 || !self.window.is_multiple_of(spatial_factor.max(1)) {
            return Err(Error::config(format!(
                "window {} is not a positive multiple of {spatial_factor}",
                self.window
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::config(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        Ok(())
    }

    /// Window origins along an axis of length `extent`; the last window is
    /// clamped to end at the edge.
    pub fn origins(&self, extent: usize) -> Result<Vec<usize>> {
        if self.window > extent {
            return Err(Error::config(format!(
                "window {} larger than image extent {extent}",
                self.window
            )));
        }
        let last = extent - self.window;
        let mut out: Vec<usize> = (0..=last).step_by(self.stride()).collect();
        if out.last() != Some(&last) {
            out.push(last);
        }
        Ok(out)
    }

    fn weights(&self) -> Vec<f64> {
        let w = self.window;
        match self.blend {
            Blend::Constant => vec![1.0; w * w],
            Blend::Gaussian => {
                let sigma = w as f64 / 8.0;
                let c = (w as f64 - 1.0) / 2.0;
                let g: Vec<f64> = (0..w)
                    .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let mut out = Vec::with_capacity(w * w);
                for y in 0..w {
                    for x in 0..w {
                        out.push((g[y] * g[x]).max(1e-3));
                    }
                }
                out
            }
        }
    }
}

/// Anything mapping a `(1, C, w, w)` window to `(1, 1, w, w)` probabilities.
pub trait WindowPredictor {
    fn predict_window(&self, window: &Tensor4) -> Result<Tensor4>;
}

impl WindowPredictor for UNetModel {
    fn predict_window(&self, window: &Tensor4) -> Result<Tensor4> {
        self.predict_probs(window)
    }
}

impl<F: Fn(&Tensor4) -> Result<Tensor4>> WindowPredictor for F {
    fn predict_window(&self, window: &Tensor4) -> Result<Tensor4> {
        self(window)
    }
}

/// Blends per-window probabilities into one `(1, 1, H, W)` map. Windows are
/// visited in row-major origin order.
pub fn sliding_window_infer(
    model: &dyn WindowPredictor,
    image: &Tensor4,
    spec: &WindowSpec,
) -> Result<Tensor4> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::validation(format!(
            "sliding window takes one image at a time, got batch {}",
            s.n
        )));
    }
    let ys = spec.origins(s.h)?;
    let xs = spec.origins(s.w)?;
    let weights = spec.weights();
    let w = spec.window;
    let mut num = vec![0.0; s.plane()];
    let mut den = vec![0.0; s.plane()];
    for &y0 in &ys {
        for &x0 in &xs {
            let crop = image.crop(y0, x0, w, w)?;
            let p = model.predict_window(&crop)?;
            if p.shape() != [1, 1, w, w].into() {
                return Err(Error::harness(format!(
                    "window predictor returned {} for a {w}x{w} window",
                    p.shape()
                )));
            }
            let pd = p.data();
            for dy in 0..w {
                let row = (y0 + dy) * s.w + x0;
                for dx in 0..w {
                    let k = dy * w + dx;
                    num[row + dx] += weights[k] * pd[k];
                    den[row + dx] += weights[k];
                }
            }
        }
    }
    let data = num.iter().zip(&den).map(|(n, d)| n / d).collect();
    Tensor4::from_vec([1, 1, s.h, s.w], data)
}

/// Everything produced by one cascade run.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput {
    pub probs1: Tensor4,
    pub stack: MaskStack,
    pub model2_input: Tensor4,
    pub probs2: Tensor4,
    pub mask: Tensor4,
}

/// `image` is a raw `(1, 3, H, W)` tile in `[0, 1]`.
pub fn run_cascade(
    model1: &dyn WindowPredictor,
    model2: &dyn WindowPredictor,
    model2_in_channels: usize,
    image: &Tensor4,
    thresholds: &ThresholdSet,
    spec: &WindowSpec,
) -> Result<CascadeOutput> {
    check_model2_channels(model2_in_channels, thresholds)?;
    let probs1 = sliding_window_infer(model1, &normalize(image), spec)?;
    let stack = binarize_multi(&probs1, thresholds)?;
    let model2_input = assemble_model2_input(&model2_gray(image)?, &stack, model2_in_channels)?;
    let probs2 = sliding_window_infer(model2, &model2_input, spec)?;
    let mask = probs2.map(|p| if p >= 0.5 { 1.0 } else { 0.0 });
    Ok(CascadeOutput {
        probs1,
        stack,
        model2_input,
        probs2,
        mask,
    })
}

/// Cascade with two U-Nets, checking their channel counts up front.
pub fn run_cascade_models(
    model1: &UNetModel,
    model2: &UNetModel,
    image: &Tensor4,
    thresholds: &ThresholdSet,
    spec: &WindowSpec,
) -> Result<CascadeOutput> {
    if model1.config().in_channels != 3 {
        return Err(Error::config(format!(
            "model 1 must take 3 channels, has {}",
            model1.config().in_channels
        )));
    }
    spec.validate(model1.config().spatial_factor())?;
    spec.validate(model2.config().spatial_factor())?;
    run_cascade(
        model1,
        model2,
        model2.config().in_channels,
        image,
        thresholds,
        spec,
    )
}

/// Binary mask boundary: foreground pixels with a 4-neighbour outside.
pub fn mask_boundary(mask: &Tensor4) -> Vec<bool> {
    let s = mask.shape();
    let m = mask.plane(0, 0);
    let on = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && (y as usize) < s.h
            && (x as usize) < s.w
            && m[y as usize * s.w + x as usize] >= 0.5
    };
    let mut out = vec![false; s.plane()];
    for y in 0..s.h as isize {
        for x in 0..s.w as isize {
            if on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1)) {
                out[y as usize * s.w + x as usize] = true;
            }
        }
    }
    out
}

/// Input RGB with the mask boundary painted green.
pub fn overlay_rgb(image: &Tensor4, mask: &Tensor4) -> Vec<u8> {
    let mut rgb = imageio::rgb_bytes(image);
    for (i, b) in mask_boundary(mask).into_iter().enumerate() {
        if b {
            rgb[3 * i..3 * i + 3].copy_from_slice(&[0, 255, 0]);
        }
    }
    rgb
}

/// Writes `<stem>_mask.png`, `<stem>_heatmap.png`, `<stem>_t<i>.png` per
/// threshold and `<stem>_overlay.png`. Returns the written paths.
pub fn export_intermediates(
    out: &CascadeOutput,
    image: &Tensor4,
    dir: &Path,
    stem: &str,
    config_hash: Option<&str>,
    all: bool,
) -> Result<Vec<std::path::PathBuf>> {
    let s = out.mask.shape();
    let (w, h) = (s.w, s.h);
    let mut paths = Vec::new();
    let path = dir.join(format!("{stem}_mask.png"));
    imageio::write_gray(&path, w, h, &imageio::mask_bytes(&out.mask), config_hash)?;
    paths.push(path);
    if !all {
        return Ok(paths);
    }
    let path = dir.join(format!("{stem}_heatmap.png"));
    imageio::write_gray(
        &path,
        w,
        h,
        &imageio::gray_bytes(&out.probs1, 0),
        config_hash,
    )?;
    paths.push(path);
    for i in 0..out.stack.thresholds.len() {
        let path = dir.join(format!("{stem}_t{i}.png"));
        let ch = out.stack.channel(i)?;
        imageio::write_gray(&path, w, h, &imageio::mask_bytes(&ch), config_hash)?;
        paths.push(path);
    }
    let path = dir.join(format!("{stem}_overlay.png"));
    imageio::write_rgb(&path, w, h, &overlay_rgb(image, &out.mask), config_hash)?;
    paths.push(path);
    Ok(paths)
}
