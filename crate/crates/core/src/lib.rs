//! Numerical laboratory for class-wise unreliability weighting in
//! multi-label classification.
//!
//! The crate trains small multi-label classifiers under controlled label
//! corruption and studies a per-class unreliability scalar `sigma` that is
//! learned jointly with the model weights.  Everything numerical — losses,
//! gradients, corruption injectors, the optimizer, metrics, and the
//! diagnostic estimators — is implemented here in plain `f64` with
//! deterministic, seeded randomness so that every experiment is exactly
//! reproducible.
//!
//! Module map:
//!
//! * [`data`] — dataset containers, the synthetic generator, CSV I/O.
//! * [`corruption`] — the three label-corruption injectors and their mix.
//! * [`loss`] — the sigma-weighted surrogate objective and its gradients.
//! * [`baselines`] — robust comparison losses (BCE, symmetric CE,
//!   bootstrapping, density correction).
//! * [`model`] / [`adam`] / [`trainer`] — the classifier, the optimizer,
//!   and the training loop with early stopping.
//! * [`metrics`] — ranking and thresholded evaluation metrics.
//! * [`analysis`] — sigma trajectories, KDEs, score-plane surfaces, and
//!   local loss-geometry probes.
//! * [`config`] / [`sweep`] — TOML experiment configs and the resumable
//!   grid runner behind the CLI.

pub mod adam;
pub mod analysis;
pub mod baselines;
pub mod config;
pub mod corruption;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod sweep;
pub mod trainer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
