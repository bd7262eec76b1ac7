//! Python bindings for the sigma-lab core.
//!
//! Exposes the scalar loss kernels, the batch objective, the corruption
//! injectors, the synthetic generator, the evaluation metrics, and the
//! training loop.  Matrices cross the boundary as plain nested lists of
//! floats; results come back as dicts keyed like the corresponding Rust
//! struct fields.

use std::collections::BTreeMap;

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sigma_lab::baselines::{BaselineConfig, BaselineKind};
use sigma_lab::corruption::{inject, CorruptionKind, CorruptionReport, CorruptionSpec};
use sigma_lab::data::{generate_synthetic, DatasetBundle, FeatureMatrix, Split, SynthSpec, TargetMatrix};
use sigma_lab::loss::{self, SigmaVector};
use sigma_lab::metrics::{self, MetricReport};
use sigma_lab::trainer::{self, LossSelector, TrainConfig};

fn err(e: sigma_lab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array2(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} has no rows")));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(arr: &Array2<f64>) -> Vec<Vec<f64>> {
    arr.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn bundle(features: &[Vec<f64>], targets: &[Vec<f64>], split: Split, what: &str) -> PyResult<DatasetBundle> {
    let x = FeatureMatrix::new(to_array2(features, &format!("{what} features"))?).map_err(err)?;
    let t = TargetMatrix::new(to_array2(targets, &format!("{what} targets"))?).map_err(err)?;
    let names = (0..t.num_classes()).map(|i| format!("class_{i}")).collect();
    DatasetBundle::new(x, t, split, names).map_err(err)
}

fn split_dict<'py>(py: Python<'py>, b: &DatasetBundle) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("features", to_rows(b.features.array()))?;
    d.set_item("targets", to_rows(b.targets.array()))?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("map", r.map)?;
    d.set_item("per_class_ap", r.per_class_ap.clone())?;
    d.set_item("auprc_macro", r.auprc_macro)?;
    d.set_item("roc_auc_macro", r.roc_auc_macro)?;
    d.set_item("per_class_auc", r.per_class_auc.clone())?;
    d.set_item("f1_micro", r.f1_micro)?;
    d.set_item("exact_match_acc", r.exact_match_acc)?;
    d.set_item("argmax_acc", r.argmax_acc)?;
    d.set_item("n_samples", r.n_samples)?;
    d.set_item("skipped_ap", r.skipped_ap.clone())?;
    d.set_item("skipped_auc", r.skipped_auc.clone())?;
    Ok(d)
}

fn corruption_dict<'py>(
    py: Python<'py>,
    targets: &TargetMatrix,
    report: &CorruptionReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("targets", to_rows(targets.array()))?;
    d.set_item("kind", report.kind.to_string())?;
    d.set_item("ratio", report.ratio)?;
    d.set_item("per_class_eligible", report.per_class_eligible.clone())?;
    d.set_item("per_class_counts", report.per_class_counts.clone())?;
    let records: Vec<Bound<'py, PyDict>> = report
        .records
        .iter()
        .map(|rec| {
            let r = PyDict::new(py);
            r.set_item("sample_id", rec.sample_id)?;
            r.set_item("kind", rec.kind.to_string())?;
            r.set_item("class_from", rec.class_from)?;
            r.set_item("class_to", rec.class_to)?;
            r.set_item("old", rec.old)?;
            r.set_item("new", rec.new)?;
            Ok(r)
        })
        .collect::<PyResult<_>>()?;
    d.set_item("records", records)?;
    Ok(d)
}

/// Per-class-scaled binary cross-entropy plus the `ln(sigma + 1)` barrier.
#[pyfunction]
fn surrogate_loss(logit: f64, target: f64, sigma: f64) -> PyResult<f64> {
    loss::surrogate_loss(logit, target, sigma).map_err(err)
}

/// Gradient of the surrogate in `(logit, sigma)`.
#[pyfunction]
fn surrogate_grad(logit: f64, target: f64, sigma: f64) -> PyResult<(f64, f64)> {
    let gf = loss::surrogate_grad_f(logit, target, sigma).map_err(err)?;
    let gs = loss::surrogate_grad_sigma(logit, target, sigma).map_err(err)?;
    Ok((gf, gs))
}

/// Negative log-likelihood of the sigma-tempered probability itself.
#[pyfunction]
fn exact_nll(logit: f64, target: f64, sigma: f64) -> PyResult<f64> {
    loss::exact_nll(logit, target, sigma).map_err(err)
}

/// Plain binary cross-entropy on a logit.
#[pyfunction]
fn bce(logit: f64, target: f64) -> PyResult<f64> {
    loss::bce_unscaled(logit, target).map_err(err)
}

fn baseline_config(kind: &str, rho: f64, beta: f64, sce_alpha: f64, sce_beta: f64) -> PyResult<BaselineConfig> {
    let kind: BaselineKind = kind.parse().map_err(err)?;
    Ok(BaselineConfig { kind, rho, beta, sce_alpha, sce_beta })
}

/// A comparison loss and its logit gradient: `bce`, `sce`, `bootstrap`, or `rho_dc`.
#[pyfunction]
#[pyo3(signature = (kind, logit, target, rho = 0.025, beta = 0.95, sce_alpha = 1.0, sce_beta = 1.0))]
fn baseline_loss(
    kind: &str,
    logit: f64,
    target: f64,
    rho: f64,
    beta: f64,
    sce_alpha: f64,
    sce_beta: f64,
) -> PyResult<(f64, f64)> {
    let cfg = baseline_config(kind, rho, beta, sce_alpha, sce_beta)?;
    cfg.loss_and_grad(logit, target).map_err(err)
}

/// Mean surrogate objective over a batch.
///
/// Returns `(value, grad_logits, grad_sigma_free)` where the sigma gradient
/// is taken in the unconstrained log parametrization the optimizer uses.
#[pyfunction]
fn objective(
    logits: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    sigmas: Vec<f64>,
) -> PyResult<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let logits = to_array2(&logits, "logits")?;
    let targets = to_array2(&targets, "targets")?;
    let sig = SigmaVector::from_sigmas(&sigmas).map_err(err)?;
    let (value, grad_logits, grad_free) =
        loss::total_objective(&logits, &targets, &sig).map_err(err)?;
    Ok((value, to_rows(&grad_logits), grad_free))
}

/// Corrupt a hard 0/1 target matrix in one of the four modes.
#[pyfunction]
#[pyo3(signature = (targets, kind, ratio, seed, soft_value = 0.6, confusion = None))]
fn corrupt<'py>(
    py: Python<'py>,
    targets: Vec<Vec<f64>>,
    kind: &str,
    ratio: f64,
    seed: u64,
    soft_value: f64,
    confusion: Option<BTreeMap<usize, Vec<usize>>>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: CorruptionKind = kind.parse().map_err(err)?;
    let targets = TargetMatrix::new(to_array2(&targets, "targets")?).map_err(err)?;
    let mut spec = CorruptionSpec::new(kind, ratio, seed);
    spec.soft_value = soft_value;
    spec.confusion_map = confusion;
    let (corrupted, report) = inject(&targets, &spec).map_err(err)?;
    corruption_dict(py, &corrupted, &report)
}

/// Draw a fresh synthetic dataset; returns `{"train"|"valid"|"test": {"features", "targets"}}`.
#[pyfunction]
#[pyo3(signature = (num_classes, feature_dim, train_per_class, valid_per_class, test_per_class, noise_scale = 0.3, cooccurrence_prob = 0.1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate<'py>(
    py: Python<'py>,
    num_classes: usize,
    feature_dim: usize,
    train_per_class: usize,
    valid_per_class: usize,
    test_per_class: usize,
    noise_scale: f64,
    cooccurrence_prob: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SynthSpec {
        num_classes,
        feature_dim,
        train_per_class,
        valid_per_class,
        test_per_class,
        noise_scale,
        cooccurrence_prob,
        seed,
    };
    let (train, valid, test) = generate_synthetic(&spec).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("train", split_dict(py, &train)?)?;
    d.set_item("valid", split_dict(py, &valid)?)?;
    d.set_item("test", split_dict(py, &test)?)?;
    Ok(d)
}

/// Ranking average precision over one class; `None` when no positive exists.
#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(metrics::average_precision(&scores, &labels))
}

/// ROC-AUC over one class; `None` without both a positive and a negative.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(metrics::roc_auc(&scores, &labels))
}

/// Full metric report for a score matrix against targets.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, scores: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let scores = to_array2(&scores, "scores")?;
    let targets = TargetMatrix::new(to_array2(&targets, "targets")?).map_err(err)?;
    let report = metrics::evaluate(&scores, &targets).map_err(err)?;
    report_dict(py, &report)
}

/// Train a classifier and report the run, final sigmas, and test metrics.
#[pyfunction]
#[pyo3(signature = (
    train_features, train_targets, valid_features, valid_targets,
    test_features, test_targets, loss = "sigma", learning_rate = 1e-3,
    batch_size = 64, max_epochs = 100, patience = 10, warmup_epochs = 20,
    hidden_dim = None, seed = 0, rho = 0.025, beta = 0.95,
    sce_alpha = 1.0, sce_beta = 1.0,
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    train_features: Vec<Vec<f64>>,
    train_targets: Vec<Vec<f64>>,
    valid_features: Vec<Vec<f64>>,
    valid_targets: Vec<Vec<f64>>,
    test_features: Vec<Vec<f64>>,
    test_targets: Vec<Vec<f64>>,
    loss: &str,
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    warmup_epochs: usize,
    hidden_dim: Option<usize>,
    seed: u64,
    rho: f64,
    beta: f64,
    sce_alpha: f64,
    sce_beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let train_b = bundle(&train_features, &train_targets, Split::Train, "train")?;
    let valid_b = bundle(&valid_features, &valid_targets, Split::Valid, "valid")?;
    let test_b = bundle(&test_features, &test_targets, Split::Test, "test")?;
    let selector = if loss == "sigma" {
        LossSelector::Sigma
    } else {
        LossSelector::Baseline(baseline_config(loss, rho, beta, sce_alpha, sce_beta)?)
    };
    let config = TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        patience,
        warmup_epochs,
        hidden_dim,
        seed,
        loss: selector,
    };
    let outcome = trainer::train(&train_b, &valid_b, &test_b, &config).map_err(err)?;
    let probs = trainer::predict_probs(&outcome.params, test_b.features.array()).map_err(err)?;
    let report = metrics::evaluate(&probs, &test_b.targets).map_err(err)?;

    let rec = &outcome.record;
    let d = PyDict::new(py);
    d.set_item("loss", rec.loss_name.clone())?;
    d.set_item("seed", rec.seed)?;
    d.set_item("best_epoch", rec.best_epoch)?;
    d.set_item("best_valid_map", rec.best_valid_map)?;
    d.set_item("stopped_epoch", rec.stopped_epoch)?;
    d.set_item("final_sigmas", rec.final_sigmas.clone())?;
    d.set_item("total_clamp_events", rec.total_clamp_events)?;
    d.set_item("train_loss", rec.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())?;
    d.set_item("valid_map", rec.epochs.iter().map(|e| e.valid_map).collect::<Vec<_>>())?;
    d.set_item(
        "sigma_trajectory",
        rec.epochs.iter().map(|e| e.sigmas.clone()).collect::<Vec<_>>(),
    )?;
    d.set_item("test", report_dict(py, &report)?)?;
    Ok(d)
}

#[pymodule]
fn sigma_lab_py(_py: Python, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(surrogate_loss, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_grad, m)?)?;
    m.add_function(wrap_pyfunction!(exact_nll, m)?)?;
    m.add_function(wrap_pyfunction!(bce, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_loss, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
