//! Grid execution: expand an experiment config into (corruption kind,
//! ratio, loss, seed) cells, run each cell to artifacts on disk, and
//! aggregate the summary table and diagnostic CSVs.
//!
//! Layout under the output root:
//!
//! ```text
//! <out>/<confighash>/
//!   data/{train,valid,test}.csv
//!   corrupt/<kind>_<ratio>/{train.csv, report.jsonl}
//!   <kind>_<ratio>/<loss>/seed_<k>/{record.json, metrics.csv, run_<confighash>_<seed>.json}
//!   summary.csv
//!   analysis/*.csv
//! ```
//!
//! A cell whose artifacts exist is skipped on resume, so a rerun after
//! deleting one cell recomputes only that cell.  Cells only ever write
//! inside their own directory; the summary is aggregated after all cells
//! finish.

use crate::analysis::{
    geometry_csv, kde_csv, model_bce_geometry, multiplier_trajectory, score_plane_surface,
    sigma_kde, surface_csv, trajectory_csv, GeometryConfig, GeometrySummary, SURFACE_BINS,
};
use crate::config::{DataSource, ExperimentConfig};
use crate::corruption::{inject, CorruptionKind};
use crate::data::{
    format_csv_value, generate_synthetic, load_feature_csv, write_feature_csv, DatasetBundle,
    Split,
};
use crate::error::Error;
use crate::metrics::evaluate;
use crate::trainer::{predict_probs, train, Checkpoint, LossSelector, RunRecord, TrainOutcome};
use crate::Result;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Command-line level knobs shared by every subcommand.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Overrides the config's output directory when set.
    pub out: Option<PathBuf>,
    /// Worker threads for independent cells; each cell stays
    /// single-threaded for determinism.
    pub jobs: usize,
    /// Added to every configured seed, for spreading extra replicas
    /// without editing the config.
    pub seed_offset: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            out: None,
            jobs: 1,
            seed_offset: 0,
        }
    }
}

impl SweepOptions {
    fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// The expanded experiment grid.
#[derive(Debug, Clone)]
pub struct Grid {
    pub kinds: Vec<CorruptionKind>,
    pub ratios: Vec<f64>,
    pub selectors: Vec<LossSelector>,
    pub seeds: Vec<u64>,
}

impl Grid {
    pub fn from_config(config: &ExperimentConfig, seed_offset: u64) -> Result<Grid> {
        Ok(Grid {
            kinds: config.corruption.parsed_kinds()?,
            ratios: config.corruption.ratios.clone(),
            selectors: config.loss.selectors()?,
            seeds: config
                .run
                .seeds
                .iter()
                .map(|s| s.wrapping_add(seed_offset))
                .collect(),
        })
    }

    /// Cells in deterministic config order: kinds, then ratios, then
    /// losses, then seeds.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for kind in &self.kinds {
            for &ratio in &self.ratios {
                for selector in &self.selectors {
                    for &seed in &self.seeds {
                        cells.push(Cell {
                            kind: *kind,
                            ratio,
                            selector: selector.clone(),
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// One unit of sweep work.
#[derive(Debug, Clone)]
pub struct Cell {
    pub kind: CorruptionKind,
    pub ratio: f64,
    pub selector: LossSelector,
    pub seed: u64,
}

/// `<out>/<confighash>` for this config.
pub fn experiment_dir(config: &ExperimentConfig, options: &SweepOptions) -> PathBuf {
    let root = options
        .out
        .clone()
        .unwrap_or_else(|| config.run.output_dir.clone());
    root.join(config.hash())
}

fn cell_dir(exp_dir: &Path, kind: CorruptionKind, ratio: f64, loss_name: &str, seed: u64) -> PathBuf {
    exp_dir
        .join(format!("{kind}_{ratio}"))
        .join(loss_name)
        .join(format!("seed_{seed}"))
}

fn checkpoint_name(hash: &str, seed: u64) -> String {
    format!("run_{hash}_{seed}.json")
}

/// Resolve the three splits named by the config.
pub fn load_bundles(
    config: &ExperimentConfig,
) -> Result<(DatasetBundle, DatasetBundle, DatasetBundle)> {
    match config.data.source()? {
        DataSource::Synthetic(spec) => generate_synthetic(&spec),
        DataSource::Csv { train, valid, test } => {
            let train = load_feature_csv(train)?;
            let valid = load_feature_csv(valid)?.retag(Split::Valid)?;
            let test = load_feature_csv(test)?.retag(Split::Test)?;
            Ok((train, valid, test))
        }
    }
}

/// Write the resolved splits as CSV under `<exp>/data/`.
pub fn cmd_gen(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let dir = experiment_dir(config, options).join("data");
    std::fs::create_dir_all(&dir)?;
    let (train, valid, test) = load_bundles(config)?;
    for (bundle, name) in [(&train, "train"), (&valid, "valid"), (&test, "test")] {
        let path = dir.join(format!("{name}.csv"));
        write_feature_csv(bundle, &path)?;
        println!("wrote {} ({} samples)", path.display(), bundle.num_samples());
    }
    Ok(())
}

/// Corrupt the training targets once per (kind, ratio) with the section
/// seed alone and write the mutated dataset plus the change report.
pub fn cmd_corrupt(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let grid = Grid::from_config(config, options.seed_offset)?;
    let (train, _, _) = load_bundles(config)?;
    let root = experiment_dir(config, options).join("corrupt");
    for &kind in &grid.kinds {
        for &ratio in &grid.ratios {
            let spec = config.corruption.spec_for(kind, ratio, 0)?;
            let (targets, report) = inject(&train.targets, &spec)?;
            let dir = root.join(format!("{kind}_{ratio}"));
            std::fs::create_dir_all(&dir)?;
            write_feature_csv(&train.with_targets(targets)?, dir.join("train.csv"))?;
            report.write_jsonl(dir.join("report.jsonl"))?;
            println!(
                "corrupted {kind} at ratio {ratio}: {} changes -> {}",
                report.records.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

struct CellContext<'a> {
    config: &'a ExperimentConfig,
    hash: String,
    exp_dir: PathBuf,
    train: DatasetBundle,
    valid: DatasetBundle,
    test: DatasetBundle,
}

impl<'a> CellContext<'a> {
    fn new(config: &'a ExperimentConfig, options: &SweepOptions) -> Result<Self> {
        let (train, valid, test) = load_bundles(config)?;
        Ok(CellContext {
            config,
            hash: config.hash(),
            exp_dir: experiment_dir(config, options),
            train,
            valid,
            test,
        })
    }

    fn dir_for(&self, cell: &Cell) -> PathBuf {
        cell_dir(
            &self.exp_dir,
            cell.kind,
            cell.ratio,
            &cell.selector.name(),
            cell.seed,
        )
    }

    fn train_cell(&self, cell: &Cell) -> Result<TrainOutcome> {
        let spec = self
            .config
            .corruption
            .spec_for(cell.kind, cell.ratio, cell.seed)?;
        let (corrupted, _) = inject(&self.train.targets, &spec)?;
        let corrupted_train = self.train.with_targets(corrupted)?;
        let train_config = self.config.train_config(cell.seed, &cell.selector);
        train(&corrupted_train, &self.valid, &self.test, &train_config)
    }

    /// Train (and optionally evaluate) one cell, skipping it when its
    /// artifacts already exist.  Returns whether work was done.
    fn run_cell(&self, cell: &Cell, with_metrics: bool) -> Result<bool> {
        let dir = self.dir_for(cell);
        let record_path = dir.join("record.json");
        let metrics_path = dir.join("metrics.csv");
        if record_path.exists() && (!with_metrics || metrics_path.exists()) {
            return Ok(false);
        }
        std::fs::create_dir_all(&dir)?;
        let outcome = self.train_cell(cell)?;
        outcome.record.save_json(&record_path)?;
        let sigmas = match cell.selector {
            LossSelector::Sigma => outcome.sigmas.sigmas(),
            LossSelector::Baseline(_) => Vec::new(),
        };
        Checkpoint {
            config_hash: self.hash.clone(),
            seed: cell.seed,
            loss_name: cell.selector.name(),
            best_epoch: outcome.record.best_epoch,
            params: outcome.params.clone(),
            sigmas,
        }
        .save_json(dir.join(checkpoint_name(&self.hash, cell.seed)))?;
        if with_metrics {
            let probs = predict_probs(&outcome.params, self.test.features.array())?;
            let report = evaluate(&probs, &self.test.targets)?;
            report.write_csv(&metrics_path)?;
        }
        Ok(true)
    }

    fn load_record(&self, cell: &Cell) -> Result<RunRecord> {
        let path = self.dir_for(cell).join("record.json");
        if !path.exists() {
            return Err(Error::InvalidData(format!(
                "missing {}; run `sweep` (or `train`) for this config first",
                path.display()
            )));
        }
        RunRecord::load_json(path)
    }

    fn load_checkpoint(&self, cell: &Cell) -> Result<Checkpoint> {
        let path = self.dir_for(cell).join(checkpoint_name(&self.hash, cell.seed));
        if !path.exists() {
            return Err(Error::InvalidData(format!(
                "missing {}; run `sweep` (or `train`) for this config first",
                path.display()
            )));
        }
        Checkpoint::load_json(path)
    }
}

fn run_cells_parallel<F>(cells: &[Cell], jobs: usize, f: F) -> Result<usize>
where
    F: Fn(&Cell) -> Result<bool> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
    let ran: Vec<bool> = pool.install(|| cells.par_iter().map(|c| f(c)).collect::<Result<_>>())?;
    Ok(ran.iter().filter(|r| **r).count())
}

/// Train every grid cell, writing records and checkpoints.  Completed
/// cells (record present) are skipped.
pub fn cmd_train(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let context = CellContext::new(config, options)?;
    let cells = Grid::from_config(config, options.seed_offset)?.cells();
    let ran = run_cells_parallel(&cells, options.jobs, |cell| context.run_cell(cell, false))?;
    println!(
        "trained {ran} of {} cells under {}",
        cells.len(),
        context.exp_dir.display()
    );
    Ok(())
}

/// Evaluate every trained cell on the clean test split and refresh the
/// summary table.  Cells with metrics already present are skipped.
pub fn cmd_eval(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let context = CellContext::new(config, options)?;
    let grid = Grid::from_config(config, options.seed_offset)?;
    let cells = grid.cells();
    let ran = run_cells_parallel(&cells, options.jobs, |cell| {
        let metrics_path = context.dir_for(cell).join("metrics.csv");
        if metrics_path.exists() {
            return Ok(false);
        }
        let checkpoint = context.load_checkpoint(cell)?;
        let probs = predict_probs(&checkpoint.params, context.test.features.array())?;
        let report = evaluate(&probs, &context.test.targets)?;
        report.write_csv(&metrics_path)?;
        Ok(true)
    })?;
    write_summary(&context, &grid)?;
    println!("evaluated {ran} of {} cells", cells.len());
    Ok(())
}

/// The full pipeline per cell (corrupt, train, evaluate), resumable,
/// then the summary table.
pub fn cmd_sweep(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let context = CellContext::new(config, options)?;
    let grid = Grid::from_config(config, options.seed_offset)?;
    let cells = grid.cells();
    let ran = run_cells_parallel(&cells, options.jobs, |cell| context.run_cell(cell, true))?;
    write_summary(&context, &grid)?;
    println!(
        "ran {ran} of {} cells; summary at {}",
        cells.len(),
        context.exp_dir.join("summary.csv").display()
    );
    Ok(())
}

/// Mean and sample standard deviation (ddof 1; zero for a single value).
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

const SUMMARY_METRICS: [&str; 6] = [
    "map",
    "auprc_macro",
    "roc_auc_macro",
    "f1_micro",
    "exact_match_acc",
    "argmax_acc",
];

fn read_metric_row(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidData(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?
        .clone();
    let mut rows = reader.records();
    let row = rows
        .next()
        .ok_or_else(|| Error::InvalidData(format!("{} has no data row", path.display())))?
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (name, value) in headers.iter().zip(row.iter()) {
        let parsed: f64 = value.parse().map_err(|_| {
            Error::InvalidData(format!("{}: bad value '{value}' for {name}", path.display()))
        })?;
        map.insert(name.to_string(), parsed);
    }
    Ok(map)
}

/// One row per (kind, ratio, loss): seed count plus mean and sample sd
/// of every headline metric over seeds.
fn write_summary(context: &CellContext, grid: &Grid) -> Result<()> {
    let mut out = String::from("kind,ratio,loss,seeds");
    for metric in SUMMARY_METRICS {
        out.push_str(&format!(",{metric}_mean,{metric}_sd"));
    }
    out.push('\n');

    for &kind in &grid.kinds {
        for &ratio in &grid.ratios {
            for selector in &grid.selectors {
                let mut per_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for &seed in &grid.seeds {
                    let path = cell_dir(&context.exp_dir, kind, ratio, &selector.name(), seed)
                        .join("metrics.csv");
                    if !path.exists() {
                        return Err(Error::InvalidData(format!(
                            "missing {}; evaluate this cell before summarizing",
                            path.display()
                        )));
                    }
                    let row = read_metric_row(&path)?;
                    for metric in SUMMARY_METRICS {
                        let value = *row.get(metric).ok_or_else(|| {
                            Error::InvalidData(format!(
                                "{} lacks column {metric}",
                                path.display()
                            ))
                        })?;
                        per_metric.entry(metric).or_default().push(value);
                    }
                }
                out.push_str(&format!("{kind},{ratio},{},{}", selector.name(), grid.seeds.len()));
                for metric in SUMMARY_METRICS {
                    let (mean, sd) = mean_sd(&per_metric[metric]);
                    out.push_str(&format!(
                        ",{},{}",
                        format_csv_value(mean),
                        format_csv_value(sd)
                    ));
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(context.exp_dir.join("summary.csv"), out)?;
    Ok(())
}

/// Keep probabilities strictly inside (0, 1) for log-based binning.
fn clamp_probs(probs: &mut ndarray::Array2<f64>) {
    probs.mapv_inplace(|p| p.clamp(1e-12, 1.0 - 1e-12));
}

/// Export diagnostic CSVs for a finished sweep: multiplier trajectories
/// and sigma KDEs per (kind, ratio), score-plane surfaces and geometry
/// summaries per (kind, ratio, loss), and sigma-minus-bce geometry
/// deltas where both losses are present.
pub fn cmd_analyze(config: &ExperimentConfig, options: &SweepOptions) -> Result<()> {
    options.validate()?;
    let context = CellContext::new(config, options)?;
    let grid = Grid::from_config(config, options.seed_offset)?;
    let dir = context.exp_dir.join("analysis");
    std::fs::create_dir_all(&dir)?;

    let sigma_selector = grid
        .selectors
        .iter()
        .find(|s| matches!(s, LossSelector::Sigma))
        .cloned();
    let bce_selector = grid
        .selectors
        .iter()
        .find(|s| s.name() == "bce")
        .cloned();

    let mut written = 0usize;
    for &kind in &grid.kinds {
        for &ratio in &grid.ratios {
            if let Some(selector) = &sigma_selector {
                let records: Vec<RunRecord> = grid
                    .seeds
                    .iter()
                    .map(|&seed| {
                        context.load_record(&Cell {
                            kind,
                            ratio,
                            selector: selector.clone(),
                            seed,
                        })
                    })
                    .collect::<Result<_>>()?;
                let band = multiplier_trajectory(&records)?;
                std::fs::write(
                    dir.join(format!("trajectory_{kind}_{ratio}.csv")),
                    trajectory_csv(&band),
                )?;
                let pooled: Vec<f64> = records
                    .iter()
                    .flat_map(|r| r.final_sigmas.iter().copied())
                    .collect();
                let kde = sigma_kde(&pooled)?;
                std::fs::write(dir.join(format!("kde_{kind}_{ratio}.csv")), kde_csv(&kde))?;
                written += 2;
            }

            let mut geometry: BTreeMap<String, GeometrySummary> = BTreeMap::new();
            for selector in &grid.selectors {
                // Surfaces and geometry probe one representative model
                // per cell: the first configured seed's checkpoint.
                let cell = Cell {
                    kind,
                    ratio,
                    selector: selector.clone(),
                    seed: grid.seeds[0],
                };
                let checkpoint = context.load_checkpoint(&cell)?;
                let mut probs = predict_probs(&checkpoint.params, context.test.features.array())?;
                clamp_probs(&mut probs);
                let surface = score_plane_surface(&probs, &context.test.targets, SURFACE_BINS)?;
                let name = selector.name();
                std::fs::write(
                    dir.join(format!("surface_{kind}_{ratio}_{name}.csv")),
                    surface_csv(&surface),
                )?;
                let summary = model_bce_geometry(
                    &checkpoint.params,
                    &context.test.features,
                    &context.test.targets,
                    &GeometryConfig::default(),
                )?;
                std::fs::write(
                    dir.join(format!("geometry_{kind}_{ratio}_{name}.csv")),
                    geometry_csv(&summary),
                )?;
                geometry.insert(name, summary);
                written += 2;
            }

            if let (Some(_), Some(bce)) = (&sigma_selector, &bce_selector) {
                let sigma_summary = &geometry["sigma"];
                let bce_summary = &geometry[&bce.name()];
                let text = format!(
                    "metric,value,ci_lo,ci_hi\ncurvature_delta,{},NaN,NaN\nbasin_fraction_delta,{},NaN,NaN\n",
                    format_csv_value(sigma_summary.curvature - bce_summary.curvature),
                    format_csv_value(sigma_summary.basin_fraction - bce_summary.basin_fraction)
                );
                std::fs::write(dir.join(format!("geometry_delta_{kind}_{ratio}.csv")), text)?;
                written += 1;
            }
        }
    }
    println!("wrote {written} analysis files under {}", dir.display());
    Ok(())
}
