//! Two-stage training: model 1 on RGB tiles, then model 2 on
//! `[gray, thresholded teacher masks]` with model 1 (or a stand-in) frozen.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, gaussian_smooth, AugmentSpec, AugmentedPair};
use crate::cascade::{
    assemble_model2_input, binarize_multi, check_model2_channels, model2_gray,
    sliding_window_infer, ThresholdSet, WindowSpec,
};
use crate::data::{normalize, Dataset, Sample};
use crate::error::{Error, Result};
use crate::loss::{composite_loss, composite_node, CompositeLossConfig};
use crate::metrics::{confusion, dsc};
use crate::nn::{Adam, AdamConfig, Graph};
use crate::rng;
use crate::tensor::Tensor4;
use crate::unet::{save_model, UNetModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: CompositeLossConfig,
    pub augment: AugmentSpec,
    /// Train on random square crops of this side instead of whole tiles.
    #[serde(default)]
    pub crop: Option<usize>,
    /// Seeds batch shuffling and crop placement.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_dsc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: u8,
    pub config_hash: Option<String>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the best checkpoint (0 is the initialization).
    pub best_epoch: usize,
    pub best_val_dsc: Option<f64>,
    pub wall_seconds: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Where to write checkpoints; both are replaced atomically.
#[derive(Clone, Debug)]
pub struct Checkpoints {
    pub best: PathBuf,
    pub last: PathBuf,
}

impl Checkpoints {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self {
            best: dir.join(format!("{stem}_best.ctiu")),
            last: dir.join(format!("{stem}_last.ctiu")),
        }
    }
}

/// Produces one training example (input, target) from a sample. Without
/// options the whole tile is used unaugmented.
trait ExampleSource {
    fn example(
        &self,
        sample: &Sample,
        index: u64,
        epoch: u64,
        opts: Option<&TrainOptions>,
    ) -> Result<(Tensor4, Tensor4)>;
}

/// Random crop (if configured), then augmentation.
fn augmented(
    sample: &Sample,
    index: u64,
    epoch: u64,
    opts: Option<&TrainOptions>,
) -> Result<AugmentedPair> {
    let Some(opts) = opts else {
        return Ok(AugmentedPair::new(
            sample.image.clone(),
            sample.mask.clone(),
        ));
    };
    let pair = match opts.crop {
        Some(c) => {
            let s = sample.image.shape();
            if c > s.h || c > s.w {
                return Err(Error::config(format!(
                    "crop {c} exceeds tile {} ({}x{})",
                    sample.id, s.h, s.w
                )));
            }
            let mut r = rng::stream(&[rng::TAG_CROP, opts.seed, index, epoch]);
            let (y0, x0) = (r.random_range(0..=s.h - c), r.random_range(0..=s.w - c));
            AugmentedPair::new(
                sample.image.crop(y0, x0, c, c)?,
                sample.mask.crop(y0, x0, c, c)?,
            )
        }
        None => AugmentedPair::new(sample.image.clone(), sample.mask.clone()),
    };
    Ok(apply_pipeline(pair, &opts.augment, index, epoch))
}

struct Stage1Source;

impl ExampleSource for Stage1Source {
    fn example(
        &self,
        sample: &Sample,
        index: u64,
        epoch: u64,
        opts: Option<&TrainOptions>,
    ) -> Result<(Tensor4, Tensor4)> {
        let p = augmented(sample, index, epoch, opts)?;
        Ok((normalize(&p.image), p.mask))
    }
}

/// Source of the model-1 probability map that stage 2 thresholds.
pub trait Teacher {
    /// `image` is a raw `(1, 3, h, w)` tile and `mask` its ground truth,
    /// both after augmentation; `(index, epoch)` key any randomness.
    fn probs(&self, image: &Tensor4, mask: &Tensor4, index: u64, epoch: u64) -> Result<Tensor4>;
}

/// A frozen model 1.
pub struct ModelTeacher<'a> {
    pub model: &'a UNetModel,
    pub window: WindowSpec,
}

impl Teacher for ModelTeacher<'_> {
    fn probs(&self, image: &Tensor4, _mask: &Tensor4, _index: u64, _epoch: u64) -> Result<Tensor4> {
        let x = normalize(image);
        let s = x.shape();
        if s.h <= self.window.window && s.w <= self.window.window {
            self.model.predict_probs(&x)
        } else {
            sliding_window_infer(self.model, &x, &self.window)
        }
    }
}

/// Emits the ground-truth mask as probabilities.
pub struct GroundTruthTeacher;

impl Teacher for GroundTruthTeacher {
    fn probs(&self, _image: &Tensor4, mask: &Tensor4, _index: u64, _epoch: u64) -> Result<Tensor4> {
        Ok(mask.clone())
    }
}

/// Ground truth blurred by a Gaussian and corrupted with additive normal
/// noise, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyTeacher {
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for NoisyTeacher {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            noise_std: 0.15,
            seed: 0,
        }
    }
}

impl Teacher for NoisyTeacher {
    fn probs(&self, _image: &Tensor4, mask: &Tensor4, index: u64, epoch: u64) -> Result<Tensor4> {
        let mut rng = rng::stream(&[rng::TAG_TEACHER, self.seed, index, epoch]);
        let normal = Normal::new(0.0, self.noise_std).map_err(|e| Error::config(e.to_string()))?;
        let mut p = gaussian_smooth(mask, self.blur_sigma);
        for v in p.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
        Ok(p)
    }
}

struct Stage2Source<'a> {
    teacher: &'a dyn Teacher,
    thresholds: &'a ThresholdSet,
    in_channels: usize,
}

impl ExampleSource for Stage2Source<'_> {
    fn example(
        &self,
        sample: &Sample,
        index: u64,
        epoch: u64,
        opts: Option<&TrainOptions>,
    ) -> Result<(Tensor4, Tensor4)> {
        // augment first so the teacher sees the same geometry as the mask
        let p = augmented(sample, index, epoch, opts)?;
        let probs = self.teacher.probs(&p.image, &p.mask, index, epoch)?;
        let stack = binarize_multi(&probs, self.thresholds)?;
        let x = assemble_model2_input(&model2_gray(&p.image)?, &stack, self.in_channels)?;
        Ok((x, p.mask))
    }
}

/// Epoch key used for validation inputs, distinct from every training epoch.
pub const VALIDATION_EPOCH: u64 = u64::MAX;

/// Mean per-sample DSC of `probs >= 0.5` and the mean composite loss.
pub fn evaluate_examples(
    model: &UNetModel,
    examples: &[(Tensor4, Tensor4)],
    loss: &CompositeLossConfig,
) -> Result<(f64, f64)> {
    let mut dsc_sum = 0.0;
    let mut loss_sum = 0.0;
    for (x, y) in examples {
        let p = model.predict_probs(x)?;
        loss_sum += composite_loss(&p, y, loss)?;
        let pred = p.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        dsc_sum += dsc(&confusion(&pred, y)?);
    }
    let n = examples.len().max(1) as f64;
    Ok((dsc_sum / n, loss_sum / n))
}

fn validate_options(opts: &TrainOptions) -> Result<()> {
    if opts.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !(opts.adam.lr >= 0.0 && opts.adam.lr.is_finite()) {
        return Err(Error::config(format!(
            "learning rate {} is invalid",
            opts.adam.lr
        )));
    }
    opts.loss.tversky.validate()?;
    if opts.crop == Some(0) {
        return Err(Error::config("crop size must be positive"));
    }
    opts.augment.validate()
}

fn run(
    model: &mut UNetModel,
    source: &dyn ExampleSource,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
    checkpoints: Option<&Checkpoints>,
    stage: u8,
) -> Result<TrainLog> {
    validate_options(opts)?;
    let started = Instant::now();
    let mut log = TrainLog {
        stage,
        config_hash: model.run_hash.clone(),
        ..Default::default()
    };
    let save = |m: &UNetModel, path: &Path| -> Result<PathBuf> {
        save_model(m, path)?;
        Ok(path.to_path_buf())
    };
    if let Some(c) = checkpoints {
        log.best_checkpoint = Some(save(model, &c.best)?);
        log.last_checkpoint = Some(save(model, &c.last)?);
    }
    if opts.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let val_examples = val
        .iter()
        .enumerate()
        .map(|(i, s)| source.example(s, i as u64, VALIDATION_EPOCH, None))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(opts.adam, model.params());
    let mut best: Option<f64> = None;
    let samples = train.samples();
    for epoch in 1..=opts.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(&[
            rng::TAG_SHUFFLE,
            opts.seed,
            epoch as u64,
        ]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (x, y) = source.example(&samples[i], i as u64, epoch as u64, Some(opts))?;
                xs.push(x);
                ys.push(y);
            }
            let x = Tensor4::stack_batch(&xs.iter().collect::<Vec<_>>())?;
            let y = Tensor4::stack_batch(&ys.iter().collect::<Vec<_>>())?;
            let mut g = Graph::new();
            let xv = g.input(x);
            let logits = model.forward_graph(&mut g, xv)?;
            let probs = g.sigmoid(logits);
            let loss = composite_node(&mut g, probs, &y, &opts.loss)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::harness(format!("non-finite loss at epoch {epoch}")));
            }
            let grads = g.backward(loss);
            model.params_mut().zero_grad();
            g.accumulate_param_grads(&grads, model.params_mut())?;
            adam.step(model.params_mut())?;
            model.params_mut().round_to_f32();
            loss_sum += value;
            batches += 1;
        }
        let (val_dsc, val_loss) = if val_examples.is_empty() {
            (None, None)
        } else {
            let (d, l) = evaluate_examples(model, &val_examples, &opts.loss)?;
            (Some(d), Some(l))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_dsc,
            seconds: t0.elapsed().as_secs_f64(),
        };
        // without validation data the training loss decides
        let score = val_dsc.unwrap_or(-record.train_loss);
        let improved = best.is_none_or(|b| score > b);
        log::info!(
            "stage {stage} epoch {epoch}/{}: loss {:.4} val_dsc {} ({:.1}s)",
            opts.epochs,
            record.train_loss,
            val_dsc.map_or("-".to_string(), |d| format!("{d:.4}")),
            record.seconds
        );
        if improved {
            best = Some(score);
            log.best_epoch = epoch;
            log.best_val_dsc = val_dsc;
        }
        if let Some(c) = checkpoints {
            save_model(model, &c.last)?;
            if improved {
                save_model(model, &c.best)?;
            }
        }
        log.epochs.push(record);
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(log)
}

/// Trains model 1 on normalized RGB tiles.
pub fn train_stage1(
    model: &mut UNetModel,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
    checkpoints: Option<&Checkpoints>,
) -> Result<TrainLog> {
    if model.config().in_channels != 3 {
        return Err(Error::config(format!(
            "model 1 must take 3 channels, has {}",
            model.config().in_channels
        )));
    }
    run(model, &Stage1Source, train, val, opts, checkpoints, 1)
}

/// Trains model 2 on inputs derived from `teacher`, which is never updated.
pub fn train_stage2(
    model: &mut UNetModel,
    teacher: &dyn Teacher,
    thresholds: &ThresholdSet,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
    checkpoints: Option<&Checkpoints>,
) -> Result<TrainLog> {
    check_model2_channels(model.config().in_channels, thresholds)?;
    let source = Stage2Source {
        teacher,
        thresholds,
        in_channels: model.config().in_channels,
    };
    run(model, &source, train, val, opts, checkpoints, 2)
}

/// Stage-2 validation inputs for `dataset` (no augmentation).
pub fn stage2_examples(
    teacher: &dyn Teacher,
    thresholds: &ThresholdSet,
    in_channels: usize,
    dataset: &Dataset,
) -> Result<Vec<(Tensor4, Tensor4)>> {
    let source = Stage2Source {
        teacher,
        thresholds,
        in_channels,
    };
    dataset
        .iter()
        .enumerate()
        .map(|(i, s)| source.example(s, i as u64, VALIDATION_EPOCH, None))
        .collect()
}
