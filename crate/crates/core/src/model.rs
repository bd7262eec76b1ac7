//! The classifier: a linear map or a one-hidden-layer ReLU MLP, with
//! hand-written forward and reverse passes.
//!
//! Gradients are exact reverse-mode derivatives of the batch objective
//! with respect to every tensor, given the objective's gradient at the
//! logits.  Parameters flatten to a single `Vec<f64>` in the fixed
//! order `w1, b1, w2, b2` so the optimizer and the geometry probes can
//! treat the model as one parameter vector.

use crate::data::LogitMatrix;
use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    OneHidden { hidden_dim: usize },
}

/// All trainable tensors.  `w1`/`b1` are absent for the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub w1: Option<Array2<f64>>,
    pub b1: Option<Array1<f64>>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub w1: Option<Array2<f64>>,
    pub b1: Option<Array1<f64>>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ModelParams {
    /// Seeded Gaussian initialization scaled by `1/sqrt(fan_in)`;
    /// biases start at zero.
    pub fn init(kind: ModelKind, feature_dim: usize, num_classes: usize, rng: &mut ChaCha20Rng) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidData(
                "model needs at least one feature and one class".into(),
            ));
        }
        let mut draw = |rows: usize, cols: usize, scale: f64| {
            let mut m = Array2::zeros((rows, cols));
            for v in m.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) * scale;
            }
            m
        };
        match kind {
            ModelKind::Linear => Ok(ModelParams {
                kind,
                feature_dim,
                num_classes,
                w1: None,
                b1: None,
                w2: draw(feature_dim, num_classes, 1.0 / (feature_dim as f64).sqrt()),
                b2: Array1::zeros(num_classes),
            }),
            ModelKind::OneHidden { hidden_dim } => {
                if hidden_dim == 0 {
                    return Err(Error::InvalidData("hidden_dim must be positive".into()));
                }
                Ok(ModelParams {
                    kind,
                    feature_dim,
                    num_classes,
                    w1: Some(draw(feature_dim, hidden_dim, (2.0 / feature_dim as f64).sqrt())),
                    b1: Some(Array1::zeros(hidden_dim)),
                    w2: draw(hidden_dim, num_classes, (2.0 / hidden_dim as f64).sqrt()),
                    b2: Array1::zeros(num_classes),
                })
            }
        }
    }

    fn check_features(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns but the model expects {}",
                features.ncols(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Logits for a batch.
    pub fn forward(&self, features: &Array2<f64>) -> Result<LogitMatrix> {
        let (logits, _) = self.forward_cached(features)?;
        LogitMatrix::new(logits)
    }

    /// Logits plus the post-activation hidden layer needed by
    /// [`ModelParams::backward`] (None for the linear model).
    pub fn forward_cached(&self, features: &Array2<f64>) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        self.check_features(features)?;
        match self.kind {
            ModelKind::Linear => Ok((features.dot(&self.w2) + &self.b2, None)),
            ModelKind::OneHidden { .. } => {
                let w1 = self.w1.as_ref().expect("hidden model carries w1");
                let b1 = self.b1.as_ref().expect("hidden model carries b1");
                let mut hidden = features.dot(w1) + b1;
                hidden.mapv_inplace(|v| v.max(0.0));
                let logits = hidden.dot(&self.w2) + &self.b2;
                Ok((logits, Some(hidden)))
            }
        }
    }

    /// Reverse pass: given `d objective / d logits`, produce gradients
    /// for every tensor.  `hidden` must come from the matching
    /// [`ModelParams::forward_cached`] call.
    pub fn backward(
        &self,
        features: &Array2<f64>,
        hidden: Option<&Array2<f64>>,
        grad_logits: &Array2<f64>,
    ) -> Result<ModelGrads> {
        self.check_features(features)?;
        if grad_logits.nrows() != features.nrows() || grad_logits.ncols() != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "grad_logits are {:?} but expected ({}, {})",
                grad_logits.dim(),
                features.nrows(),
                self.num_classes
            )));
        }
        match self.kind {
            ModelKind::Linear => Ok(ModelGrads {
                w1: None,
                b1: None,
                w2: features.t().dot(grad_logits),
                b2: grad_logits.sum_axis(Axis(0)),
            }),
            ModelKind::OneHidden { .. } => {
                let h = hidden.ok_or_else(|| {
                    Error::InvalidParameter("hidden activations required for the MLP backward pass".into())
                })?;
                let mut grad_hidden = grad_logits.dot(&self.w2.t());
                // ReLU derivative: pass-through where the activation is
                // strictly positive.
                grad_hidden.zip_mut_with(h, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                Ok(ModelGrads {
                    w1: Some(features.t().dot(&grad_hidden)),
                    b1: Some(grad_hidden.sum_axis(Axis(0))),
                    w2: h.t().dot(grad_logits),
                    b2: grad_logits.sum_axis(Axis(0)),
                })
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        let mut n = self.w2.len() + self.b2.len();
        if let Some(w1) = &self.w1 {
            n += w1.len();
        }
        if let Some(b1) = &self.b1 {
            n += b1.len();
        }
        n
    }

    /// Flatten in the fixed order `w1, b1, w2, b2` (row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        if let Some(w1) = &self.w1 {
            flat.extend(w1.iter());
        }
        if let Some(b1) = &self.b1 {
            flat.extend(b1.iter());
        }
        flat.extend(self.w2.iter());
        flat.extend(self.b2.iter());
        flat
    }

    /// Overwrite every tensor from a flat vector laid out as
    /// [`ModelParams::to_flat`].
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries but the model has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter();
        if let Some(w1) = &mut self.w1 {
            for v in w1.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        if let Some(b1) = &mut self.b1 {
            for v in b1.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for v in self.w2.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b2.iter_mut() {
            *v = *it.next().unwrap();
        }
        Ok(())
    }
}

impl ModelGrads {
    /// Flatten in the same order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        if let Some(w1) = &self.w1 {
            flat.extend(w1.iter());
        }
        if let Some(b1) = &self.b1 {
            flat.extend(b1.iter());
        }
        flat.extend(self.w2.iter());
        flat.extend(self.b2.iter());
        flat
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(42)
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let params = ModelParams {
            kind: ModelKind::Linear,
            feature_dim: 3,
            num_classes: 2,
            w1: None,
            b1: None,
            w2: Array2::zeros((3, 2)),
            b2: Array1::zeros(2),
        };
        let x = array![[1.0, -2.0, 0.5]];
        let logits = params.forward(&x).unwrap();
        assert_eq!(logits.array(), &Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn identity_linear_model_passes_features_through() {
        let params = ModelParams {
            kind: ModelKind::Linear,
            feature_dim: 2,
            num_classes: 2,
            w1: None,
            b1: None,
            w2: Array2::eye(2),
            b2: Array1::zeros(2),
        };
        let x = array![[0.3, -1.7], [2.0, 0.0]];
        let logits = params.forward(&x).unwrap();
        assert_eq!(logits.array(), &x);
    }

    #[test]
    fn mlp_forward_matches_hand_computation() {
        // 2 features -> 3 hidden -> 2 classes, fixed small weights.
        let params = ModelParams {
            kind: ModelKind::OneHidden { hidden_dim: 3 },
            feature_dim: 2,
            num_classes: 2,
            w1: Some(array![[1.0, 0.0, -1.0], [0.5, 2.0, 1.0]]),
            b1: Some(array![0.0, -1.0, 0.5]),
            w2: array![[1.0, -1.0], [0.5, 0.5], [2.0, 0.0]],
            b2: array![0.1, -0.1],
        };
        let x = array![[1.0, 2.0]];
        // pre-activation: [2.0, 3.0, 1.5]; relu keeps all.
        // logits: [2 + 1.5 + 3 + 0.1, -2 + 1.5 + 0 - 0.1] = [6.6, -0.6]
        let logits = params.forward(&x).unwrap();
        assert!((logits.array()[[0, 0]] - 6.6).abs() < 1e-12);
        assert!((logits.array()[[0, 1]] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn flat_round_trip_preserves_every_tensor() {
        let mut r = rng();
        for kind in [ModelKind::Linear, ModelKind::OneHidden { hidden_dim: 5 }] {
            let params = ModelParams::init(kind, 4, 3, &mut r).unwrap();
            let flat = params.to_flat();
            assert_eq!(flat.len(), params.num_params());
            let mut other = ModelParams::init(kind, 4, 3, &mut r).unwrap();
            other.set_from_flat(&flat).unwrap();
            assert_eq!(other.w1, params.w1);
            assert_eq!(other.b1, params.b1);
            assert_eq!(other.w2, params.w2);
            assert_eq!(other.b2, params.b2);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        let x = {
            let mut m = Array2::zeros((5, 4));
            for v in m.iter_mut() {
                *v = r.sample::<f64, _>(StandardNormal);
            }
            m
        };
        let targets = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 0.0]
        ];
        for kind in [ModelKind::Linear, ModelKind::OneHidden { hidden_dim: 6 }] {
            let mut params = ModelParams::init(kind, 4, 3, &mut r).unwrap();
            // Mean BCE objective over the batch.
            let objective = |p: &ModelParams| -> f64 {
                let (logits, _) = p.forward_cached(&x).unwrap();
                let mut total = 0.0;
                for row in 0..5 {
                    for col in 0..3 {
                        total += crate::loss::bce_unscaled(logits[[row, col]], targets[[row, col]]).unwrap();
                    }
                }
                total / 5.0
            };
            let (logits, hidden) = params.forward_cached(&x).unwrap();
            let mut grad_logits = Array2::zeros((5, 3));
            for row in 0..5 {
                for col in 0..3 {
                    grad_logits[[row, col]] =
                        (crate::loss::sigmoid(logits[[row, col]]) - targets[[row, col]]) / 5.0;
                }
            }
            let grads = params.backward(&x, hidden.as_ref(), &grad_logits).unwrap();
            let flat_grads = grads.to_flat();
            let flat = params.to_flat();
            let h = 1e-6;
            for idx in 0..flat.len() {
                let mut bumped = flat.clone();
                bumped[idx] += h;
                params.set_from_flat(&bumped).unwrap();
                let up = objective(&params);
                bumped[idx] -= 2.0 * h;
                params.set_from_flat(&bumped).unwrap();
                let down = objective(&params);
                params.set_from_flat(&flat).unwrap();
                let fd = (up - down) / (2.0 * h);
                let rel = (flat_grads[idx] - fd).abs()
                    / flat_grads[idx].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-5, "param {idx}: analytic {} vs fd {fd}", flat_grads[idx]);
            }
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut r = rng();
        let params = ModelParams::init(ModelKind::Linear, 4, 3, &mut r).unwrap();
        let x = Array2::zeros((2, 5));
        assert!(params.forward(&x).is_err());
        let x = Array2::zeros((2, 4));
        let bad_grad = Array2::zeros((3, 3));
        assert!(params.backward(&x, None, &bad_grad).is_err());
    }
}
