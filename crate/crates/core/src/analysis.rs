//! Post-run diagnostics: sigma multiplier trajectories across seeds,
//! kernel density estimates of learned sigmas, loss surfaces over the
//! (target score, mean non-target score) plane, and local curvature /
//! basin probes around a trained parameter vector.
//!
//! Everything here consumes immutable run artifacts and emits plot-ready
//! CSV; nothing mutates training state.

use crate::data::{format_csv_value, FeatureMatrix, TargetMatrix};
use crate::error::Error;
use crate::loss::bce_raw;
use crate::model::ModelParams;
use crate::trainer::RunRecord;
use crate::Result;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Fixed resampling grid for trajectory aggregation.
pub const TRAJECTORY_GRID: usize = 101;
/// Evaluation points for kernel density curves.
pub const KDE_GRID: usize = 512;
/// Default bin count per axis for score-plane surfaces.
pub const SURFACE_BINS: usize = 32;
/// Default number of probe directions for local geometry.
pub const GEOMETRY_DIRECTIONS: usize = 64;

/// Mean and 95% band of the class-median multiplier 1 / sigma^2,
/// resampled onto a shared normalized-progress axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBand {
    pub progress: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-epoch median over classes of the effective multiplier 1 / sigma^2
/// for one run.
pub fn run_multiplier_series(record: &RunRecord) -> Result<Vec<f64>> {
    if record.epochs.is_empty() {
        return Err(Error::InvalidParameter(
            "run record has no epochs".to_string(),
        ));
    }
    record
        .epochs
        .iter()
        .map(|epoch| {
            if epoch.sigmas.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "epoch {} of a '{}' run carries no sigma snapshot; \
                     multiplier trajectories need sigma-loss records",
                    epoch.epoch, record.loss_name
                )));
            }
            let mut vals: Vec<f64> = epoch.sigmas.iter().map(|s| 1.0 / (s * s)).collect();
            Ok(median_in_place(&mut vals))
        })
        .collect()
}

/// Linear interpolation of an epoch series onto `grid` evenly spaced
/// points over normalized progress [0, 1].  A single-epoch series is
/// constant.
fn resample(series: &[f64], grid: usize) -> Vec<f64> {
    let e = series.len();
    (0..grid)
        .map(|k| {
            if e == 1 {
                return series[0];
            }
            let t = k as f64 / (grid - 1) as f64;
            let pos = t * (e - 1) as f64;
            let j = pos.floor() as usize;
            if j + 1 >= e {
                return series[e - 1];
            }
            series[j] + (pos - j as f64) * (series[j + 1] - series[j])
        })
        .collect()
}

/// Aggregate the per-run multiplier series of several seeds into a mean
/// curve with a normal-approximation 95% band (1.96 sd / sqrt(R), sample
/// sd).  A single run collapses the band onto the mean.
pub fn multiplier_trajectory(records: &[RunRecord]) -> Result<TrajectoryBand> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "trajectory aggregation needs at least one run record".to_string(),
        ));
    }
    let resampled: Vec<Vec<f64>> = records
        .iter()
        .map(|r| Ok(resample(&run_multiplier_series(r)?, TRAJECTORY_GRID)))
        .collect::<Result<_>>()?;
    let runs = resampled.len();
    let mut band = TrajectoryBand {
        progress: Vec::with_capacity(TRAJECTORY_GRID),
        mean: Vec::with_capacity(TRAJECTORY_GRID),
        lo: Vec::with_capacity(TRAJECTORY_GRID),
        hi: Vec::with_capacity(TRAJECTORY_GRID),
    };
    for k in 0..TRAJECTORY_GRID {
        // Summation over a sorted copy keeps the result independent of
        // the order runs were supplied in.
        let mut vals: Vec<f64> = resampled.iter().map(|s| s[k]).collect();
        vals.sort_unstable_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / runs as f64;
        let half = if runs > 1 {
            let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            let sd = (ss / (runs - 1) as f64).sqrt();
            1.96 * sd / (runs as f64).sqrt()
        } else {
            0.0
        };
        band.progress.push(k as f64 / (TRAJECTORY_GRID - 1) as f64);
        band.mean.push(mean);
        band.lo.push(mean - half);
        band.hi.push(mean + half);
    }
    Ok(band)
}

/// Gaussian kernel density over a fixed grid spanning four bandwidths
/// beyond the sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Set when the sample had zero spread and the fallback bandwidth
    /// 1e-3 was used.
    pub degenerate: bool,
}

impl KdeCurve {
    /// Trapezoid integral over the evaluation grid.
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        for i in 1..self.grid.len() {
            total += 0.5 * (self.density[i - 1] + self.density[i]) * (self.grid[i] - self.grid[i - 1]);
        }
        total
    }
}

/// Kernel density estimate of a sigma sample with Silverman's bandwidth
/// `1.06 sd n^(-1/5)` (sample sd).
pub fn sigma_kde(sigmas: &[f64]) -> Result<KdeCurve> {
    if sigmas.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "kernel density needs at least two values, got {}",
            sigmas.len()
        )));
    }
    if let Some(bad) = sigmas.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kernel density input contains non-finite value {bad}"
        )));
    }
    let n = sigmas.len() as f64;
    let mean = sigmas.iter().sum::<f64>() / n;
    let ss = sigmas.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    let (bandwidth, degenerate) = if sd > 0.0 {
        (1.06 * sd * n.powf(-0.2), false)
    } else {
        (1e-3, true)
    };
    let lo = sigmas.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = sigmas.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut grid = Vec::with_capacity(KDE_GRID);
    let mut density = Vec::with_capacity(KDE_GRID);
    for k in 0..KDE_GRID {
        let x = lo + k as f64 * step;
        let mut acc = 0.0;
        for s in sigmas {
            let z = (x - s) / bandwidth;
            acc += (-0.5 * z * z).exp();
        }
        grid.push(x);
        density.push(norm * acc);
    }
    Ok(KdeCurve {
        grid,
        density,
        bandwidth,
        degenerate,
    })
}

/// Binned loss surface over (target-class probability, mean non-target
/// probability).  Empty bins carry NaN mean loss, never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePlaneSurface {
    pub bins: usize,
    /// Row-major `bins x bins`: index `ix * bins + iy`.
    pub count: Vec<u64>,
    pub mean_loss: Vec<f64>,
    /// Rows with no positive class, excluded from every bin.
    pub skipped_rows: usize,
}

impl ScorePlaneSurface {
    pub fn at(&self, ix: usize, iy: usize) -> (f64, u64) {
        let idx = ix * self.bins + iy;
        (self.mean_loss[idx], self.count[idx])
    }

    pub fn total_count(&self) -> u64 {
        self.count.iter().sum()
    }
}

/// Bin every sample by (probability at its target class, mean probability
/// over the other classes) and average the full per-row cross-entropy
/// (summed over all classes) within each bin.
///
/// The target class of a multi-positive row is its first positive by
/// column index.  Probabilities must already be strictly inside (0, 1);
/// clamp upstream.
pub fn score_plane_surface(
    probs: &Array2<f64>,
    targets: &TargetMatrix,
    bins: usize,
) -> Result<ScorePlaneSurface> {
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "surface needs at least one bin per axis".to_string(),
        ));
    }
    let (n, c) = probs.dim();
    if (n, c) != (targets.num_samples(), targets.num_classes()) {
        return Err(Error::ShapeMismatch(format!(
            "probabilities are {n}x{c} but targets are {}x{}",
            targets.num_samples(),
            targets.num_classes()
        )));
    }
    if c < 2 {
        return Err(Error::InvalidParameter(
            "mean non-target score needs at least two classes".to_string(),
        ));
    }
    if !targets.is_hard() {
        return Err(Error::InvalidData(
            "score-plane surface needs hard 0/1 targets".to_string(),
        ));
    }
    if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidData(format!(
            "probability {bad} outside the open interval (0, 1); clamp before binning"
        )));
    }

    let mut count = vec![0u64; bins * bins];
    let mut sum = vec![0.0f64; bins * bins];
    let mut skipped_rows = 0usize;
    let t = targets.array();
    for row in 0..n {
        let target = (0..c).find(|&cl| t[[row, cl]] == 1.0);
        let Some(target) = target else {
            skipped_rows += 1;
            continue;
        };
        let x = probs[[row, target]];
        let mut other = 0.0;
        let mut loss = 0.0;
        for cl in 0..c {
            let p = probs[[row, cl]];
            let y = t[[row, cl]];
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            if cl != target {
                other += p;
            }
        }
        let y_mean = other / (c - 1) as f64;
        let ix = ((x * bins as f64).floor() as usize).min(bins - 1);
        let iy = ((y_mean * bins as f64).floor() as usize).min(bins - 1);
        count[ix * bins + iy] += 1;
        sum[ix * bins + iy] += loss;
    }
    let mean_loss = count
        .iter()
        .zip(&sum)
        .map(|(&k, &s)| if k > 0 { s / k as f64 } else { f64::NAN })
        .collect();
    Ok(ScorePlaneSurface {
        bins,
        count,
        mean_loss,
        skipped_rows,
    })
}

/// Probe settings for [`local_geometry`].
#[derive(Debug, Clone)]
pub struct GeometryConfig {
    pub directions: usize,
    /// Probe radius; defaults to 5% of the parameter norm.
    pub radius: Option<f64>,
    /// Basin threshold above the base loss; defaults to 5% of it.
    pub tau: Option<f64>,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            directions: GEOMETRY_DIRECTIONS,
            radius: None,
            tau: None,
            seed: 0,
        }
    }
}

/// Curvature and basin statistics of a loss around one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySummary {
    pub base_loss: f64,
    pub radius: f64,
    pub tau: f64,
    /// Mean directional second difference (L(t+rd) - 2L(t) + L(t-rd)) / r^2.
    pub curvature: f64,
    pub curvature_ci: (f64, f64),
    pub curvature_discarded: usize,
    /// Share of radius-r perturbations whose loss stays within tau of the
    /// base loss.
    pub basin_fraction: f64,
    pub basin_ci: (f64, f64),
    pub basin_discarded: usize,
}

fn unit_direction(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Seeded Monte-Carlo probe of the loss landscape at `theta`: central
/// second differences along `directions` random unit directions, and the
/// fraction of `4 * directions` radius-r perturbations whose loss stays
/// within `tau` of the base value.  Probes with non-finite loss are
/// discarded and counted.
pub fn local_geometry<F>(loss: F, theta: &[f64], config: &GeometryConfig) -> Result<GeometrySummary>
where
    F: Fn(&[f64]) -> f64,
{
    if theta.is_empty() {
        return Err(Error::InvalidParameter(
            "geometry probe needs a nonempty parameter vector".to_string(),
        ));
    }
    if config.directions == 0 {
        return Err(Error::InvalidParameter(
            "geometry probe needs at least one direction".to_string(),
        ));
    }
    let base_loss = loss(theta);
    if !base_loss.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "loss at the probed point is {base_loss}"
        )));
    }
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = config.radius.unwrap_or(0.05 * norm);
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "probe radius must be positive and finite, got {radius}; \
             pass an explicit radius for a zero parameter vector"
        )));
    }
    let tau = config.tau.unwrap_or(0.05 * base_loss);
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "basin threshold must be positive and finite, got {tau}; \
             pass an explicit tau when the base loss is zero"
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let dim = theta.len();
    let mut probe = vec![0.0f64; dim];

    let mut curvatures = Vec::with_capacity(config.directions);
    let mut curvature_discarded = 0usize;
    for _ in 0..config.directions {
        let d = unit_direction(&mut rng, dim);
        for i in 0..dim {
            probe[i] = theta[i] + radius * d[i];
        }
        let plus = loss(&probe);
        for i in 0..dim {
            probe[i] = theta[i] - radius * d[i];
        }
        let minus = loss(&probe);
        let curv = (plus - 2.0 * base_loss + minus) / (radius * radius);
        if curv.is_finite() {
            curvatures.push(curv);
        } else {
            curvature_discarded += 1;
        }
    }
    if curvatures.is_empty() {
        return Err(Error::InvalidParameter(
            "every curvature probe came back non-finite".to_string(),
        ));
    }
    let kept = curvatures.len() as f64;
    let curvature = curvatures.iter().sum::<f64>() / kept;
    let curv_half = if curvatures.len() > 1 {
        let ss = curvatures
            .iter()
            .map(|v| (v - curvature) * (v - curvature))
            .sum::<f64>();
        1.96 * (ss / (kept - 1.0)).sqrt() / kept.sqrt()
    } else {
        0.0
    };

    let draws = 4 * config.directions;
    let mut hits = 0usize;
    let mut basin_discarded = 0usize;
    for _ in 0..draws {
        let d = unit_direction(&mut rng, dim);
        for i in 0..dim {
            probe[i] = theta[i] + radius * d[i];
        }
        let l = loss(&probe);
        if !l.is_finite() {
            basin_discarded += 1;
        } else if l <= base_loss + tau {
            hits += 1;
        }
    }
    let basin_kept = draws - basin_discarded;
    if basin_kept == 0 {
        return Err(Error::InvalidParameter(
            "every basin probe came back non-finite".to_string(),
        ));
    }
    let basin_fraction = hits as f64 / basin_kept as f64;
    let basin_half = 1.96 * (basin_fraction * (1.0 - basin_fraction) / basin_kept as f64).sqrt();

    Ok(GeometrySummary {
        base_loss,
        radius,
        tau,
        curvature,
        curvature_ci: (curvature - curv_half, curvature + curv_half),
        curvature_discarded,
        basin_fraction,
        basin_ci: (
            (basin_fraction - basin_half).max(0.0),
            (basin_fraction + basin_half).min(1.0),
        ),
        basin_discarded,
    })
}

/// [`local_geometry`] of a trained classifier under plain summed-class
/// binary cross-entropy (mean over rows) on the given split.
pub fn model_bce_geometry(
    params: &ModelParams,
    features: &FeatureMatrix,
    targets: &TargetMatrix,
    config: &GeometryConfig,
) -> Result<GeometrySummary> {
    if features.num_samples() != targets.num_samples() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} target rows",
            features.num_samples(),
            targets.num_samples()
        )));
    }
    if features.num_samples() == 0 {
        return Err(Error::InvalidData("empty split".to_string()));
    }
    let template = params.clone();
    let x = features.array();
    let t = targets.array();
    let objective = move |flat: &[f64]| -> f64 {
        let mut p = template.clone();
        if p.set_from_flat(flat).is_err() {
            return f64::NAN;
        }
        let logits = match p.forward(x) {
            Ok(l) => l,
            Err(_) => return f64::NAN,
        };
        let l = logits.array();
        let (n, c) = l.dim();
        let mut total = 0.0;
        for row in 0..n {
            for cl in 0..c {
                total += bce_raw(l[[row, cl]], t[[row, cl]]);
            }
        }
        total / n as f64
    };
    local_geometry(objective, &params.to_flat(), config)
}

fn fmt_cell(v: f64) -> String {
    format_csv_value(v)
}

/// `progress,mean,lo,hi` rows.
pub fn trajectory_csv(band: &TrajectoryBand) -> String {
    let mut out = String::from("progress,mean,lo,hi\n");
    for k in 0..band.progress.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_cell(band.progress[k]),
            fmt_cell(band.mean[k]),
            fmt_cell(band.lo[k]),
            fmt_cell(band.hi[k])
        ));
    }
    out
}

/// `x,density` rows.
pub fn kde_csv(curve: &KdeCurve) -> String {
    let mut out = String::from("x,density\n");
    for (x, d) in curve.grid.iter().zip(&curve.density) {
        out.push_str(&format!("{},{}\n", fmt_cell(*x), fmt_cell(*d)));
    }
    out
}

/// `bin_x,bin_y,mean_loss,count` rows over bin centers; empty bins keep
/// NaN mean loss with count 0.
pub fn surface_csv(surface: &ScorePlaneSurface) -> String {
    let mut out = String::from("bin_x,bin_y,mean_loss,count\n");
    let b = surface.bins;
    for ix in 0..b {
        for iy in 0..b {
            let (loss, count) = surface.at(ix, iy);
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_cell((ix as f64 + 0.5) / b as f64),
                fmt_cell((iy as f64 + 0.5) / b as f64),
                fmt_cell(loss),
                count
            ));
        }
    }
    out
}

/// `metric,value,ci_lo,ci_hi` rows; scalar probe settings carry NaN CI
/// bounds.
pub fn geometry_csv(summary: &GeometrySummary) -> String {
    let mut out = String::from("metric,value,ci_lo,ci_hi\n");
    out.push_str(&format!(
        "curvature,{},{},{}\n",
        fmt_cell(summary.curvature),
        fmt_cell(summary.curvature_ci.0),
        fmt_cell(summary.curvature_ci.1)
    ));
    out.push_str(&format!(
        "basin_fraction,{},{},{}\n",
        fmt_cell(summary.basin_fraction),
        fmt_cell(summary.basin_ci.0),
        fmt_cell(summary.basin_ci.1)
    ));
    for (name, value) in [
        ("base_loss", summary.base_loss),
        ("radius", summary.radius),
        ("tau", summary.tau),
        ("curvature_discarded", summary.curvature_discarded as f64),
        ("basin_discarded", summary.basin_discarded as f64),
    ] {
        out.push_str(&format!("{name},{},NaN,NaN\n", fmt_cell(value)));
    }
    out
}
