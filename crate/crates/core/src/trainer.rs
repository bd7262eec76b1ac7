//! Seeded end-to-end training with early stopping.
//!
//! One run: seeded init, per-epoch shuffled mini-batches (last partial
//! batch kept), a joint Adam update over the model tensors and — when
//! the sigma-weighted loss is active — the sigma free parameters, and
//! per-epoch validation mAP for model selection.  Training stops when
//! validation mAP has not improved for `patience` epochs, counted only
//! after `warmup_epochs`, and never runs past `max_epochs`; with the
//! default 20 + 10 recipe the earliest possible stop is epoch 30.
//!
//! Inference is always `sigmoid(logit)`: sigma shapes the training
//! signal but never touches predictions.
//!
//! Determinism: (config, seed, data) fixes the entire trajectory bit
//! for bit.  The run record therefore excludes wall-clock time from
//! serialization; it is kept in memory only.

use crate::adam::{AdamConfig, AdamState};
use crate::baselines::{self, BaselineConfig, BaselineKind};
use crate::data::DatasetBundle;
use crate::error::Error;
use crate::loss::{self, sigmoid, SigmaVector};
use crate::metrics;
use crate::model::{ModelKind, ModelParams};
use crate::Result;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// Which training objective drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSelector {
    /// The sigma-weighted surrogate with learnable per-class sigmas.
    Sigma,
    /// A fixed comparison loss.
    Baseline(BaselineConfig),
}

impl LossSelector {
    /// Short token used in directory names and summaries.
    pub fn name(&self) -> String {
        match self {
            LossSelector::Sigma => "sigma".to_string(),
            LossSelector::Baseline(cfg) => cfg.kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSelector::Sigma => Ok(()),
            LossSelector::Baseline(cfg) => cfg.validate(),
        }
    }
}

impl FromStr for LossSelector {
    type Err = Error;

    /// Parse a loss token with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        if s == "sigma" {
            return Ok(LossSelector::Sigma);
        }
        Ok(LossSelector::Baseline(BaselineConfig::new(
            BaselineKind::from_str(s).map_err(|_| {
                Error::InvalidParameter(format!(
                    "unknown loss {s:?} (expected sigma, bce, sce, bootstrap, or rho_dc)"
                ))
            })?,
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Staleness is only counted after this epoch.
    pub warmup_epochs: usize,
    /// `None` trains the linear model.
    pub hidden_dim: Option<usize>,
    pub seed: u64,
    pub loss: LossSelector,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            warmup_epochs: 20,
            hidden_dim: None,
            seed: 0,
            loss: LossSelector::Sigma,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidParameter("patience must be positive".into()));
        }
        if let Some(h) = self.hidden_dim {
            if h == 0 {
                return Err(Error::InvalidParameter("hidden_dim must be positive".into()));
            }
        }
        self.loss.validate()
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.hidden_dim {
            None => ModelKind::Linear,
            Some(hidden_dim) => ModelKind::OneHidden { hidden_dim },
        }
    }
}

/// One epoch of the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_map: f64,
    /// Per-class sigmas after this epoch; empty when the sigma loss is
    /// not active.
    pub sigmas: Vec<f64>,
    /// Sigma clamp events during this epoch.
    pub clamp_events: usize,
}

/// Everything a run produced, epoch by epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub loss_name: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_map: f64,
    pub stopped_epoch: usize,
    /// Sigmas at the last epoch run (not the best checkpoint); empty
    /// when the sigma loss is not active.
    pub final_sigmas: Vec<f64>,
    pub total_clamp_events: usize,
    /// Wall-clock seconds; memory only, never serialized, so reruns of
    /// a cell stay byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

// Equality ignores the timing field: two reruns of the same cell are
// "the same run" even though their wall clocks differ.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.loss_name == other.loss_name
            && self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_valid_map == other.best_valid_map
            && self.stopped_epoch == other.stopped_epoch
            && self.final_sigmas == other.final_sigmas
            && self.total_clamp_events == other.total_clamp_events
    }
}

impl RunRecord {
    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Best-checkpoint state plus the full record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub sigmas: SigmaVector,
    pub record: RunRecord,
}

/// Serializable best-checkpoint snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub loss_name: String,
    pub best_epoch: usize,
    pub params: ModelParams,
    /// Materialized sigmas of the checkpoint; empty for baselines.
    pub sigmas: Vec<f64>,
}

impl Checkpoint {
    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Predicted probabilities: plain `sigmoid(logit)`.  Sigma is a
/// training-time device and never enters inference.
pub fn predict_probs(params: &ModelParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    let logits = params.forward(features)?;
    let mut probs = logits.into_array();
    probs.mapv_inplace(sigmoid);
    Ok(probs)
}

fn check_bundles(train: &DatasetBundle, valid: &DatasetBundle, test: &DatasetBundle) -> Result<()> {
    for (bundle, name) in [(train, "train"), (valid, "valid"), (test, "test")] {
        if bundle.num_samples() == 0 {
            return Err(Error::InvalidData(format!("{name} split is empty")));
        }
    }
    let (d, c) = (train.feature_dim(), train.num_classes());
    for (bundle, name) in [(valid, "valid"), (test, "test")] {
        if bundle.feature_dim() != d || bundle.num_classes() != c {
            return Err(Error::ShapeMismatch(format!(
                "{name} split is {}x{} but train is {d}x{c}",
                bundle.feature_dim(),
                bundle.num_classes()
            )));
        }
        if !bundle.targets.is_hard() {
            return Err(Error::InvalidData(format!(
                "{name} targets must stay clean hard labels"
            )));
        }
    }
    DatasetBundle::check_disjoint(&[train, valid, test])
}

/// Loss value and gradients for one batch under the selected objective.
/// Returns `(value, grad_logits, sigma_free_grads)`; the sigma grads
/// are empty for baselines.
fn batch_objective(
    selector: &LossSelector,
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    sigmas: &SigmaVector,
) -> Result<(f64, Array2<f64>, Vec<f64>)> {
    match selector {
        LossSelector::Sigma => loss::total_objective(logits, targets, sigmas),
        LossSelector::Baseline(cfg) => {
            let (value, grad) = baselines::baseline_objective(cfg, logits, targets)?;
            Ok((value, grad, Vec::new()))
        }
    }
}

/// Train on the train split, select on validation mAP, and return the
/// best-checkpoint parameters with the complete trajectory record.
/// The test split is only checked for shape/cleanliness/disjointness
/// here; evaluation is a separate step.
pub fn train(
    train: &DatasetBundle,
    valid: &DatasetBundle,
    test: &DatasetBundle,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_bundles(train, valid, test)?;
    let start = Instant::now();

    let n = train.num_samples();
    let c = train.num_classes();
    let sigma_active = matches!(config.loss, LossSelector::Sigma);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.model_kind(), train.feature_dim(), c, &mut rng)?;
    let mut sigmas = SigmaVector::ones(c);
    let model_len = params.num_params();
    let sigma_len = if sigma_active { c } else { 0 };
    let mut adam = AdamState::new(model_len + sigma_len);
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);

    let mut best_map = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut best_sigmas = sigmas.clone();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut total_clamp_events = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    let mut stopped_epoch = 0usize;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut clamp_events = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch_x = train.features.array().select(Axis(0), chunk);
            let batch_y = train.targets.array().select(Axis(0), chunk);
            let (logits, hidden) = params.forward_cached(&batch_x)?;
            let (value, grad_logits, sigma_grads) =
                batch_objective(&config.loss, &logits, &batch_y, &sigmas)?;
            let grads = params.backward(&batch_x, hidden.as_ref(), &grad_logits)?;

            let mut flat = params.to_flat();
            flat.extend_from_slice(&sigmas.free()[..sigma_len]);
            let mut flat_grads = grads.to_flat();
            flat_grads.extend_from_slice(&sigma_grads);
            adam.step(&adam_cfg, &mut flat, &flat_grads)?;
            params.set_from_flat(&flat[..model_len])?;
            if sigma_active {
                sigmas.free_mut().copy_from_slice(&flat[model_len..]);
                clamp_events += sigmas.clamp();
            }
            epoch_loss += value * chunk.len() as f64;
        }
        total_clamp_events += clamp_events;

        let probs = predict_probs(&params, valid.features.array())?;
        let report = metrics::evaluate(&probs, &valid.targets)?;
        let valid_map = report.map;

        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            valid_map,
            sigmas: if sigma_active { sigmas.sigmas() } else { Vec::new() },
            clamp_events,
        });

        // Two comparisons on purpose: the staleness counter resets only on
        // strict improvement (a flat plateau is "not improving" and must
        // still trigger the stop), while the returned checkpoint rides ties
        // so a plateau at the metric ceiling yields the latest, best-fit
        // parameters rather than the near-init first arrival.
        if valid_map >= best_map {
            if valid_map > best_map {
                best_epoch = epoch;
            }
            best_map = valid_map;
            best_params = params.clone();
            best_sigmas = sigmas.clone();
        }

        stopped_epoch = epoch;
        let stale_since = best_epoch.max(config.warmup_epochs);
        if epoch > config.warmup_epochs && epoch - stale_since >= config.patience {
            break;
        }
    }

    let final_sigmas = epochs
        .last()
        .map(|e| e.sigmas.clone())
        .unwrap_or_default();
    let record = RunRecord {
        seed: config.seed,
        loss_name: config.loss.name(),
        epochs,
        best_epoch,
        best_valid_map: best_map,
        stopped_epoch,
        final_sigmas,
        total_clamp_events,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        params: best_params,
        sigmas: best_sigmas,
        record,
    })
}
