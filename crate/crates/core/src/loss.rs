//! Sigma-weighted surrogate objective for multi-label training.
//!
//! Each class `i` carries a learnable unreliability scalar `sigma_i > 0`.
//! The exact negative log-likelihood of a sigma-scaled logit couples the
//! logit gradient to `sigmoid(f / sigma^2)`, which stalls learning for
//! large sigma.  The surrogate used here instead divides the plain binary
//! cross-entropy by `sigma^2` and adds a `log(sigma + 1)` barrier:
//!
//! ```text
//! surrogate(f, y, sigma) = bce(f, y) / sigma^2 + log(sigma + 1)
//! ```
//!
//! Its logit gradient is `(sigmoid(f) - y) / sigma^2` — the plain BCE
//! gradient attenuated by `1 / sigma^2` — and its sigma gradient is
//! `-2 bce / sigma^3 + 1 / (sigma + 1)`, so sigma settles where the two
//! terms balance: `2 bce (sigma + 1) = sigma^3`.
//!
//! Sigmas are optimized in an unconstrained space through
//! [`positive_map`]; [`SigmaVector`] owns the free parameters and the
//! positivity clamp.  At `sigma = 1` every quantity reduces to plain BCE
//! (plus the constant `log 2` barrier), which the tests pin down.

use crate::error::Error;
use crate::Result;
use ndarray::Array2;

/// Lower clamp for sigma after an optimizer step.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper clamp for sigma after an optimizer step.
pub const SIGMA_MAX: f64 = 1e3;

/// Numerically stable `log(1 + exp(x))`.
///
/// Exact overflow-free form: `max(x, 0) + log1p(exp(-|x|))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable `log(1 + exp(f)) - y f`, grouped as
/// `(max(f, 0) - y f) + log1p(exp(-|f|))` so no large intermediate
/// cancels: at `f = 10, y = 1` the naive `softplus(f) - f` loses eleven
/// significant digits, this form loses none.
pub(crate) fn bce_raw(f: f64, y: f64) -> f64 {
    (f.max(0.0) - y * f) + (-f.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained-to-positive reparameterization for sigma.
///
/// Returns `(sigma, d sigma / d s)`; both equal `exp(s)`, and `s = 0`
/// maps to `sigma = 1`.
pub fn positive_map(s: f64) -> (f64, f64) {
    let sigma = s.exp();
    (sigma, sigma)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be a finite positive number, got {sigma}"
        )));
    }
    Ok(())
}

fn check_target(y: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidParameter(format!(
            "target must lie in [0, 1], got {y}"
        )));
    }
    Ok(())
}

/// Logit divided by sigma squared.
pub fn scaled_logit(f: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(f / (sigma * sigma))
}

/// Exact per-class negative log-likelihood of the sigma-scaled logit:
/// `log(1 + exp(z)) - y z` with `z = f / sigma^2`.
pub fn exact_nll(f: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_target(y)?;
    let z = f / (sigma * sigma);
    Ok(bce_raw(z, y))
}

/// Logit gradient of [`exact_nll`]: `(sigmoid(z) - y) / sigma^2`.
///
/// As sigma grows, `sigmoid(z)` is pinned near `1/2` regardless of `f`,
/// which is why the exact likelihood is not used for training.
pub fn exact_nll_grad_f(f: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_target(y)?;
    let s2 = sigma * sigma;
    Ok((sigmoid(f / s2) - y) / s2)
}

/// Plain binary cross-entropy on an unscaled logit:
/// `log(1 + exp(f)) - y f`.  Non-negative for `y` in `[0, 1]`.
pub fn bce_unscaled(f: f64, y: f64) -> Result<f64> {
    check_target(y)?;
    Ok(bce_raw(f, y))
}

/// Surrogate per-class loss: `bce(f, y) / sigma^2 + log(sigma + 1)`.
pub fn surrogate_loss(f: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_target(y)?;
    Ok(surrogate_raw(f, y, sigma))
}

fn surrogate_raw(f: f64, y: f64, sigma: f64) -> f64 {
    bce_raw(f, y) / (sigma * sigma) + (sigma + 1.0).ln()
}

/// Logit gradient of [`surrogate_loss`]: `(sigmoid(f) - y) / sigma^2`.
///
/// The sigmoid sees the unscaled logit, so large sigma only attenuates
/// the BCE gradient instead of flattening it.
pub fn surrogate_grad_f(f: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_target(y)?;
    Ok((sigmoid(f) - y) / (sigma * sigma))
}

/// Sigma gradient of [`surrogate_loss`]:
/// `-2 bce / sigma^3 + 1 / (sigma + 1)`.
pub fn surrogate_grad_sigma(f: f64, y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_target(y)?;
    let bce = bce_raw(f, y);
    Ok(-2.0 * bce / (sigma * sigma * sigma) + 1.0 / (sigma + 1.0))
}

/// BCE and surrogate value for one (logit, target, sigma) triple.
///
/// Invariants: `bce >= 0` and `surrogate >= log(sigma + 1)`, since the
/// weighted BCE term is non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerClassLoss {
    pub bce: f64,
    pub surrogate: f64,
}

impl PerClassLoss {
    pub fn compute(f: f64, y: f64, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        check_target(y)?;
        let bce = bce_raw(f, y);
        Ok(PerClassLoss {
            bce,
            surrogate: bce / (sigma * sigma) + (sigma + 1.0).ln(),
        })
    }
}

/// Per-class sigmas stored as unconstrained free parameters.
///
/// `sigma_i = exp(free_i)`, so fresh vectors (`free = 0`) start at
/// `sigma = 1` and the optimizer never sees the positivity constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaVector {
    free: Vec<f64>,
}

impl SigmaVector {
    /// One unit sigma per class.
    pub fn ones(num_classes: usize) -> Self {
        SigmaVector {
            free: vec![0.0; num_classes],
        }
    }

    /// Wrap existing free parameters.
    pub fn from_free(free: Vec<f64>) -> Result<Self> {
        if let Some(bad) = free.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "free sigma parameter must be finite, got {bad}"
            )));
        }
        Ok(SigmaVector { free })
    }

    /// Build from explicit sigmas; each must be finite and positive.
    pub fn from_sigmas(sigmas: &[f64]) -> Result<Self> {
        let mut free = Vec::with_capacity(sigmas.len());
        for &s in sigmas {
            check_sigma(s)?;
            free.push(s.ln());
        }
        Ok(SigmaVector { free })
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn free(&self) -> &[f64] {
        &self.free
    }

    pub fn free_mut(&mut self) -> &mut [f64] {
        &mut self.free
    }

    /// Materialized sigmas, `exp(free)` per class.
    pub fn sigmas(&self) -> Vec<f64> {
        self.free.iter().map(|s| s.exp()).collect()
    }

    /// Clamp sigmas into `[SIGMA_MIN, SIGMA_MAX]` by clamping the free
    /// parameters; returns how many entries were clamped.
    pub fn clamp(&mut self) -> usize {
        let lo = SIGMA_MIN.ln();
        let hi = SIGMA_MAX.ln();
        let mut clamped = 0;
        for s in &mut self.free {
            if *s < lo {
                *s = lo;
                clamped += 1;
            } else if *s > hi {
                *s = hi;
                clamped += 1;
            }
        }
        clamped
    }
}

/// Batch objective: mean over rows of the per-row sum of surrogate
/// losses.
///
/// Returns the scalar value, the gradient with respect to every logit,
/// and the gradient with respect to the free sigma parameters (already
/// chained through [`positive_map`]).  Each class contributes its
/// `log(sigma + 1)` barrier exactly once because the barrier is constant
/// across rows.  Accumulation is sequential in row-major order so equal
/// inputs give bit-equal outputs.
pub fn total_objective(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    sigmas: &SigmaVector,
) -> Result<(f64, Array2<f64>, Vec<f64>)> {
    let (n, c) = logits.dim();
    if targets.dim() != (n, c) {
        return Err(Error::ShapeMismatch(format!(
            "logits are {:?} but targets are {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if sigmas.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} classes but {} sigmas",
            c,
            sigmas.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let sig = sigmas.sigmas();
    for &s in &sig {
        check_sigma(s)?;
    }

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_logits = Array2::zeros((n, c));
    // Accumulates mean of -2 bce / sigma^3 per class before the barrier
    // term and the chain rule are applied.
    let mut grad_sigma = vec![0.0; c];

    for row in 0..n {
        for i in 0..c {
            let f = logits[[row, i]];
            let y = targets[[row, i]];
            check_target(y)?;
            let s = sig[i];
            let s2 = s * s;
            let bce = bce_raw(f, y);
            value += bce / s2 + (s + 1.0).ln();
            grad_logits[[row, i]] = (sigmoid(f) - y) / s2 * inv_n;
            grad_sigma[i] += -2.0 * bce / (s2 * s) * inv_n;
        }
    }
    value *= inv_n;

    let grad_free: Vec<f64> = (0..c)
        .map(|i| {
            let total = grad_sigma[i] + 1.0 / (sig[i] + 1.0);
            // d sigma / d free = sigma for the exp map.
            total * sig[i]
        })
        .collect();

    Ok((value, grad_logits, grad_free))
}
