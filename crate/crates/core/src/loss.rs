//! Soft Tversky loss, binary cross-entropy and their weighted combination.
//!
//! Losses consume sigmoid probabilities (not logits) so that the training
//! objective and the cascade thresholds see the same quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::tensor::Tensor4;

/// Clamp applied to probabilities before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Weights of the soft Tversky index: `alpha` scales false positives,
/// `beta` false negatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TverskyParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_smooth")]
    pub smooth: f64,
}

fn default_smooth() -> f64 {
    1e-5
}

impl TverskyParams {
    /// FP-heavy weighting used for the initial segmentation network.
    pub const STAGE1: TverskyParams = TverskyParams {
        alpha: 0.7,
        beta: 0.3,
        smooth: 1e-5,
    };

    /// Equal FP/FN weighting used for the threshold integration network.
    pub const BALANCED: TverskyParams = TverskyParams {
        alpha: 0.5,
        beta: 0.5,
        smooth: 1e-5,
    };

    pub fn new(alpha: f64, beta: f64, smooth: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            smooth,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!(
                "tversky alpha/beta must lie in [0, 1], got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if self.smooth.is_nan() || self.smooth <= 0.0 {
            return Err(Error::config("tversky smoothing must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossConfig {
    pub tversky: TverskyParams,
    #[serde(default = "default_ce_weight")]
    pub ce_weight: f64,
}

fn default_ce_weight() -> f64 {
    0.5
}

impl CompositeLossConfig {
    pub fn new(tversky: TverskyParams) -> Self {
        Self {
            tversky,
            ce_weight: default_ce_weight(),
        }
    }
}

fn check_pair(probs: &Tensor4, targets: &Tensor4) -> Result<()> {
    if probs.shape() != targets.shape() {
        return Err(Error::config(format!(
            "loss operands differ in shape: {} vs {}",
            probs.shape(),
            targets.shape()
        )));
    }
    if !targets.is_binary() {
        return Err(Error::validation("loss targets must be binary (0 or 1)"));
    }
    Ok(())
}

/// Raw overlap terms of the soft Tversky index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

pub fn soft_counts(probs: &Tensor4, targets: &Tensor4) -> SoftCounts {
    let mut c = SoftCounts {
        tp: 0.0,
        fp: 0.0,
        fn_: 0.0,
    };
    for (&p, &t) in probs.data().iter().zip(targets.data()) {
        c.tp += p * t;
        c.fp += p * (1.0 - t);
        c.fn_ += (1.0 - p) * t;
    }
    c
}

/// Value and gradient (w.r.t. `probs`) of `1 - TI`, reduced over the whole batch.
pub fn tversky_with_grad(
    probs: &Tensor4,
    targets: &Tensor4,
    params: &TverskyParams,
) -> Result<(f64, Tensor4)> {
    check_pair(probs, targets)?;
    params.validate()?;
    let TverskyParams {
        alpha,
        beta,
        smooth,
    } = *params;
    let c = soft_counts(probs, targets);
    let num = c.tp + smooth;
    let den = c.tp + alpha * c.fp + beta * c.fn_ + smooth;
    let index = num / den;
    let grad = Tensor4::from_vec(
        probs.shape(),
        targets
            .data()
            .iter()
            .map(|&t| {
                let d_den = t + alpha * (1.0 - t) - beta * t;
                -(t * den - num * d_den) / (den * den)
            })
            .collect(),
    )?;
    Ok((1.0 - index, grad))
}

pub fn tversky_loss(probs: &Tensor4, targets: &Tensor4, params: &TverskyParams) -> Result<f64> {
    tversky_with_grad(probs, targets, params).map(|(v, _)| v)
}

/// Value and gradient of the mean binary cross-entropy.
pub fn bce_with_grad(probs: &Tensor4, targets: &Tensor4) -> Result<(f64, Tensor4)> {
    check_pair(probs, targets)?;
    let n = probs.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Tensor4::zeros(probs.shape());
    for ((&p, &t), g) in probs.data().iter().zip(targets.data()).zip(grad.data_mut()) {
        let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        // the clamp is flat outside [eps, 1 - eps]
        *g = if p > BCE_EPS && p < 1.0 - BCE_EPS {
            (-t / q + (1.0 - t) / (1.0 - q)) / n
        } else {
            0.0
        };
    }
    Ok((total / n, grad))
}

pub fn bce_loss(probs: &Tensor4, targets: &Tensor4) -> Result<f64> {
    bce_with_grad(probs, targets).map(|(v, _)| v)
}

pub fn composite_loss(
    probs: &Tensor4,
    targets: &Tensor4,
    config: &CompositeLossConfig,
) -> Result<f64> {
    Ok(tversky_loss(probs, targets, &config.tversky)?
        + config.ce_weight * bce_loss(probs, targets)?)
}

/// Tversky loss as a node on the tape.
pub fn tversky_node(
    g: &mut Graph,
    probs: Var,
    targets: &Tensor4,
    params: &TverskyParams,
) -> Result<Var> {
    let (v, grad) = tversky_with_grad(g.value(probs), targets, params)?;
    g.scalar_fn(probs, v, grad)
}

pub fn bce_node(g: &mut Graph, probs: Var, targets: &Tensor4) -> Result<Var> {
    let (v, grad) = bce_with_grad(g.value(probs), targets)?;
    g.scalar_fn(probs, v, grad)
}

/// `tversky + ce_weight * bce` on the tape.
pub fn composite_node(
    g: &mut Graph,
    probs: Var,
    targets: &Tensor4,
    config: &CompositeLossConfig,
) -> Result<Var> {
    let t = tversky_node(g, probs, targets, &config.tversky)?;
    let b = bce_node(g, probs, targets)?;
    let b = g.scale(b, config.ce_weight);
    g.add(t, b)
}
