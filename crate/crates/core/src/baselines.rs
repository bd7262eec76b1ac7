//! Robust comparison losses: plain BCE, symmetric cross-entropy, soft
//! bootstrapping, and a probability-correction loss with a global flip
//! rate `rho`.
//!
//! Every loss is a scalar function of one (logit, target) pair returning
//! `(loss, d loss / d logit)`.  Each robust loss collapses to plain BCE
//! at a corner of its parameter space, and the reductions are exact at
//! the bit level, not merely close:
//!
//! * `rho = 0` — the correction is the identity, so the code delegates
//!   to the stable logit-space BCE path instead of evaluating
//!   `-y log p - (1-y) log(1-p)` in probability space.
//! * `beta = 1` — the bootstrap soft target equals the label exactly.
//! * `sce beta = 0` — the reversed term vanishes and `alpha = 1` leaves
//!   plain BCE.
//!
//! Training trajectories under these corner settings are bit-identical
//! to BCE trajectories, which the integration suite asserts.

use crate::error::Error;
use crate::loss::{bce_raw, bce_unscaled, sigmoid};
use crate::Result;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Clamp applied to the label inside logarithms of the reversed SCE
/// term, where hard labels would send `log y` to minus infinity.
const SCE_LABEL_FLOOR: f64 = 1e-4;

/// Which comparison loss to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Bce,
    Sce,
    Bootstrap,
    RhoDc,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BaselineKind::Bce => "bce",
            BaselineKind::Sce => "sce",
            BaselineKind::Bootstrap => "bootstrap",
            BaselineKind::RhoDc => "rho_dc",
        };
        write!(f, "{s}")
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(BaselineKind::Bce),
            "sce" => Ok(BaselineKind::Sce),
            "bootstrap" => Ok(BaselineKind::Bootstrap),
            "rho_dc" => Ok(BaselineKind::RhoDc),
            other => Err(Error::InvalidParameter(format!(
                "unknown baseline loss {other:?} (expected bce, sce, bootstrap, or rho_dc)"
            ))),
        }
    }
}

/// A baseline loss with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Global flip rate for `rho_dc`, in `[0, 0.5)`.
    pub rho: f64,
    /// Bootstrap mixing weight on the observed label, in `(0, 1]`.
    pub beta: f64,
    /// Forward-term weight for `sce`.
    pub sce_alpha: f64,
    /// Reversed-term weight for `sce`.
    pub sce_beta: f64,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineConfig {
            kind,
            rho: 0.025,
            beta: 0.95,
            sce_alpha: 1.0,
            sce_beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 0.5), got {}",
                self.rho
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bootstrap beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if !(self.sce_alpha >= 0.0 && self.sce_beta >= 0.0) || self.sce_alpha + self.sce_beta == 0.0
        {
            return Err(Error::InvalidParameter(format!(
                "sce weights must be non-negative and not both zero, got alpha={} beta={}",
                self.sce_alpha, self.sce_beta
            )));
        }
        Ok(())
    }

    /// Loss and logit gradient for one (logit, target) pair.
    pub fn loss_and_grad(&self, f: f64, y: f64) -> Result<(f64, f64)> {
        match self.kind {
            BaselineKind::Bce => bce_loss(f, y),
            BaselineKind::Sce => sce_loss(f, y, self.sce_alpha, self.sce_beta),
            BaselineKind::Bootstrap => bootstrap_loss(f, y, self.beta),
            BaselineKind::RhoDc => rho_corrected_loss(f, y, self.rho),
        }
    }
}

/// Plain BCE in logit space.
pub fn bce_loss(f: f64, y: f64) -> Result<(f64, f64)> {
    let loss = bce_unscaled(f, y)?;
    Ok((loss, sigmoid(f) - y))
}

/// Symmetric cross-entropy: `alpha * bce + beta * reversed`, where the
/// reversed term swaps the roles of prediction and label and clamps the
/// label away from 0/1 inside its logarithms.
pub fn sce_loss(f: f64, y: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let forward = bce_unscaled(f, y)?;
    let p = sigmoid(f);
    let yc = y.clamp(SCE_LABEL_FLOOR, 1.0 - SCE_LABEL_FLOOR);
    let reversed = -p * yc.ln() - (1.0 - p) * (1.0 - yc).ln();
    let loss = alpha * forward + beta * reversed;
    let grad = alpha * (p - y) + beta * ((1.0 - yc) / yc).ln() * p * (1.0 - p);
    Ok((loss, grad))
}

/// Soft bootstrapping: BCE against `beta * y + (1 - beta) * p`, with
/// the model's own probability `p` treated as a constant (no gradient
/// flows through the soft part of the target).
pub fn bootstrap_loss(f: f64, y: f64, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bootstrap beta must lie in (0, 1], got {beta}"
        )));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidParameter(format!(
            "target must lie in [0, 1], got {y}"
        )));
    }
    // BCE against the blended target; same stable kernel as the plain
    // BCE path so beta = 1 reduces to it bit for bit.
    let soft = beta * y + (1.0 - beta) * sigmoid(f);
    let loss = bce_raw(f, soft);
    Ok((loss, sigmoid(f) - soft))
}

/// Probability-corrected BCE under a global flip rate: the predicted
/// probability is squeezed to `q = rho + (1 - 2 rho) p` before the
/// cross-entropy, keeping `q` inside `[rho, 1 - rho]` so saturated
/// logits stay finite.
pub fn rho_corrected_loss(f: f64, y: f64, rho: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "rho must lie in [0, 0.5), got {rho}"
        )));
    }
    if rho == 0.0 {
        // Identity correction: take the stable logit-space path so the
        // reduction to BCE is exact in every bit.
        return bce_loss(f, y);
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidParameter(format!(
            "target must lie in [0, 1], got {y}"
        )));
    }
    let p = sigmoid(f);
    let scale = 1.0 - 2.0 * rho;
    let q = rho + scale * p;
    let q_complement = rho + scale * (1.0 - p);
    let loss = -y * q.ln() - (1.0 - y) * q_complement.ln();
    let grad = (-y / q + (1.0 - y) / q_complement) * scale * p * (1.0 - p);
    Ok((loss, grad))
}

/// Batch objective for a baseline: mean over rows of the per-row sum of
/// per-class losses, with the matching logit gradient.  Sequential
/// row-major accumulation keeps reruns bit-identical.
pub fn baseline_objective(
    config: &BaselineConfig,
    logits: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    config.validate()?;
    let (n, c) = logits.dim();
    if targets.dim() != (n, c) {
        return Err(Error::ShapeMismatch(format!(
            "logits are {:?} but targets are {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((n, c));
    for row in 0..n {
        for i in 0..c {
            let (l, g) = config.loss_and_grad(logits[[row, i]], targets[[row, i]])?;
            value += l;
            grad[[row, i]] = g * inv_n;
        }
    }
    Ok((value * inv_n, grad))
}
