//! Experiment configuration: a sectioned TOML file covering data,
//! corruption grid, training recipe, loss grid, and run plan.  Unknown
//! keys are hard errors; a typo must never silently fall back to a
//! default.  The canonical hash of the parsed config names the sweep's
//! output directory, so cosmetic reordering or comments never invalidate
//! finished work.

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::corruption::{CorruptionKind, CorruptionSpec};
use crate::data::SynthSpec;
use crate::error::Error;
use crate::trainer::{LossSelector, TrainConfig};
use crate::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Parsed and validated experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub corruption: CorruptionSection,
    #[serde(default)]
    pub train: TrainSection,
    pub loss: LossSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Either a synthetic generation recipe or three CSV paths; mixing the
/// two is a config error.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub num_classes: Option<usize>,
    pub feature_dim: Option<usize>,
    pub train_per_class: Option<usize>,
    pub valid_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub noise_scale: Option<f64>,
    pub cooccurrence_prob: Option<f64>,
    pub seed: Option<u64>,
    pub train_csv: Option<PathBuf>,
    pub valid_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

/// Where the three splits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Csv {
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
    },
}

impl DataSection {
    fn any_synthetic_field(&self) -> bool {
        self.num_classes.is_some()
            || self.feature_dim.is_some()
            || self.train_per_class.is_some()
            || self.valid_per_class.is_some()
            || self.test_per_class.is_some()
            || self.noise_scale.is_some()
            || self.cooccurrence_prob.is_some()
            || self.seed.is_some()
    }

    fn any_csv_field(&self) -> bool {
        self.train_csv.is_some() || self.valid_csv.is_some() || self.test_csv.is_some()
    }

    pub fn source(&self) -> Result<DataSource> {
        if self.any_csv_field() {
            if self.any_synthetic_field() {
                return Err(Error::Config(
                    "data section mixes CSV paths with synthetic-generation keys; \
                     pick one source"
                        .to_string(),
                ));
            }
            let (Some(train), Some(valid), Some(test)) =
                (&self.train_csv, &self.valid_csv, &self.test_csv)
            else {
                return Err(Error::Config(
                    "CSV data needs all of train_csv, valid_csv, test_csv".to_string(),
                ));
            };
            return Ok(DataSource::Csv {
                train: train.clone(),
                valid: valid.clone(),
                test: test.clone(),
            });
        }
        Ok(DataSource::Synthetic(SynthSpec {
            num_classes: self.num_classes.unwrap_or(10),
            feature_dim: self.feature_dim.unwrap_or(32),
            train_per_class: self.train_per_class.unwrap_or(40),
            valid_per_class: self.valid_per_class.unwrap_or(10),
            test_per_class: self.test_per_class.unwrap_or(10),
            noise_scale: self.noise_scale.unwrap_or(1.0),
            cooccurrence_prob: self.cooccurrence_prob.unwrap_or(0.1),
            seed: self.seed.unwrap_or(7),
        }))
    }
}

fn default_kinds() -> Vec<String> {
    vec![
        "san".to_string(),
        "man".to_string(),
        "sln".to_string(),
        "mix".to_string(),
    ]
}

fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
}

fn default_soft_value() -> f64 {
    0.6
}

/// Corruption grid: every kind is combined with every ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<String>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_soft_value")]
    pub soft_value: f64,
    #[serde(default)]
    pub seed: u64,
    /// MAN destination lists keyed by source class index (TOML keys are
    /// strings).
    #[serde(default)]
    pub confusion_map: Option<BTreeMap<String, Vec<usize>>>,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        CorruptionSection {
            kinds: default_kinds(),
            ratios: default_ratios(),
            soft_value: default_soft_value(),
            seed: 0,
            confusion_map: None,
        }
    }
}

impl CorruptionSection {
    pub fn parsed_kinds(&self) -> Result<Vec<CorruptionKind>> {
        if self.kinds.is_empty() {
            return Err(Error::Config("corruption.kinds must not be empty".to_string()));
        }
        let kinds: Vec<CorruptionKind> = self
            .kinds
            .iter()
            .map(|token| {
                CorruptionKind::from_str(token)
                    .map_err(|e| Error::Config(format!("corruption.kinds: {e}")))
            })
            .collect::<Result<_>>()?;
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(Error::Config(format!(
                    "corruption.kinds lists '{k}' twice"
                )));
            }
        }
        Ok(kinds)
    }

    fn parsed_confusion_map(&self) -> Result<Option<BTreeMap<usize, Vec<usize>>>> {
        let Some(map) = &self.confusion_map else {
            return Ok(None);
        };
        let mut parsed = BTreeMap::new();
        for (key, dests) in map {
            let class: usize = key.parse().map_err(|_| {
                Error::Config(format!(
                    "corruption.confusion_map key '{key}' is not a class index"
                ))
            })?;
            parsed.insert(class, dests.clone());
        }
        Ok(Some(parsed))
    }

    fn validate(&self) -> Result<()> {
        self.parsed_kinds()?;
        self.parsed_confusion_map()?;
        if self.ratios.is_empty() {
            return Err(Error::Config("corruption.ratios must not be empty".to_string()));
        }
        for (i, r) in self.ratios.iter().enumerate() {
            if !(r.is_finite() && (0.0..=1.0).contains(r)) {
                return Err(Error::Config(format!(
                    "corruption ratio {r} outside [0, 1]"
                )));
            }
            if self.ratios[..i].contains(r) {
                return Err(Error::Config(format!(
                    "corruption.ratios lists {r} twice"
                )));
            }
        }
        if !(self.soft_value > 0.0 && self.soft_value < 1.0) {
            return Err(Error::Config(format!(
                "corruption.soft_value must lie strictly inside (0, 1), got {}",
                self.soft_value
            )));
        }
        Ok(())
    }

    /// Spec for one grid cell.  The injection seed folds the run seed
    /// into the section seed so each seed sees its own corruption draw
    /// while the dataset itself stays fixed.
    pub fn spec_for(&self, kind: CorruptionKind, ratio: f64, run_seed: u64) -> Result<CorruptionSpec> {
        let mut spec = CorruptionSpec::new(kind, ratio, self.seed.wrapping_add(run_seed));
        spec.soft_value = self.soft_value;
        spec.confusion_map = self.parsed_confusion_map()?;
        Ok(spec)
    }
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_batch_size() -> usize {
    64
}

fn default_max_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

fn default_warmup_epochs() -> usize {
    20
}

/// Training recipe shared by every sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    /// Absent means a linear model.
    #[serde(default)]
    pub hidden_dim: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            warmup_epochs: default_warmup_epochs(),
            hidden_dim: None,
        }
    }
}

fn default_rho() -> f64 {
    0.025
}

fn default_bootstrap_beta() -> f64 {
    0.95
}

fn default_sce_weight() -> f64 {
    1.0
}

/// Which losses to sweep, plus the baseline hyperparameters they share.
/// Exactly one of `kind` (a single token) or `kinds` (a list) must be
/// set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub kinds: Option<Vec<String>>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_bootstrap_beta")]
    pub bootstrap_beta: f64,
    #[serde(default = "default_sce_weight")]
    pub sce_alpha: f64,
    #[serde(default = "default_sce_weight")]
    pub sce_beta: f64,
}

impl LossSection {
    fn tokens(&self) -> Result<Vec<String>> {
        match (&self.kind, &self.kinds) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either loss.kind or loss.kinds, not both".to_string(),
            )),
            (Some(one), None) => Ok(vec![one.clone()]),
            (None, Some(many)) if many.is_empty() => {
                Err(Error::Config("loss.kinds must not be empty".to_string()))
            }
            (None, Some(many)) => Ok(many.clone()),
            (None, None) => Err(Error::Config(
                "missing loss.kind (or loss.kinds) in the config".to_string(),
            )),
        }
    }

    /// One selector per configured token, sharing this section's
    /// baseline hyperparameters.
    pub fn selectors(&self) -> Result<Vec<LossSelector>> {
        let tokens = self.tokens()?;
        let mut selectors = Vec::with_capacity(tokens.len());
        for token in &tokens {
            if tokens.iter().filter(|t| *t == token).count() > 1 {
                return Err(Error::Config(format!("loss.kinds lists '{token}' twice")));
            }
            let selector = if token == "sigma" {
                LossSelector::Sigma
            } else {
                let kind = BaselineKind::from_str(token)
                    .map_err(|e| Error::Config(format!("loss kind: {e}")))?;
                let mut cfg = BaselineConfig::new(kind);
                cfg.rho = self.rho;
                cfg.beta = self.bootstrap_beta;
                cfg.sce_alpha = self.sce_alpha;
                cfg.sce_beta = self.sce_beta;
                cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
                LossSelector::Baseline(cfg)
            };
            selectors.push(selector);
        }
        Ok(selectors)
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Seeds and output root.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate a TOML config file.  Every failure mode here
    /// is a config error (exit code 2), including unknown keys.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.source()?.validate_source()?;
        self.corruption.validate()?;
        self.loss.selectors()?;
        // Exercise the training recipe once with placeholder seed/loss.
        self.train_config(0, &LossSelector::Sigma)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".to_string()));
        }
        for (i, s) in self.run.seeds.iter().enumerate() {
            if self.run.seeds[..i].contains(s) {
                return Err(Error::Config(format!("run.seeds lists {s} twice")));
            }
        }
        Ok(())
    }

    /// Concrete trainer configuration for one (seed, loss) cell.
    pub fn train_config(&self, seed: u64, loss: &LossSelector) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            warmup_epochs: self.train.warmup_epochs,
            hidden_dim: self.train.hidden_dim,
            seed,
            loss: loss.clone(),
        }
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    /// The output directory is excluded: moving results elsewhere is not
    /// a different experiment.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct HashView<'a> {
            data: &'a DataSection,
            corruption: &'a CorruptionSection,
            train: &'a TrainSection,
            loss: &'a LossSection,
            seeds: &'a [u64],
        }
        let view = HashView {
            data: &self.data,
            corruption: &self.corruption,
            train: &self.train,
            loss: &self.loss,
            seeds: &self.run.seeds,
        };
        let json = serde_json::to_string(&view).expect("config serialization cannot fail");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

impl DataSource {
    fn validate_source(&self) -> Result<()> {
        match self {
            // Field ranges are checked by the generator's own rules;
            // surface those complaints as config errors.
            DataSource::Synthetic(spec) => {
                spec.validate().map_err(|e| Error::Config(e.to_string()))
            }
            DataSource::Csv { .. } => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
        [data]
        num_classes = 6
        feature_dim = 16
        train_per_class = 12
        valid_per_class = 4
        test_per_class = 4
        noise_scale = 0.8
        cooccurrence_prob = 0.2
        seed = 3

        [corruption]
        kinds = ["san", "man"]
        ratios = [0.0, 0.5]
        soft_value = 0.6
        seed = 40

        [train]
        learning_rate = 0.002
        batch_size = 32
        max_epochs = 50
        patience = 5
        warmup_epochs = 10

        [loss]
        kinds = ["sigma", "bce", "rho_dc"]
        rho = 0.1

        [run]
        seeds = [0, 1, 2]
        output_dir = "results"
    "#;

    #[test]
    fn full_config_parses_and_hashes() {
        let config = ExperimentConfig::from_toml(FULL).unwrap();
        assert_eq!(config.run.seeds, vec![0, 1, 2]);
        let selectors = config.loss.selectors().unwrap();
        assert_eq!(selectors.len(), 3);
        assert_eq!(selectors[0].name(), "sigma");
        assert_eq!(selectors[1].name(), "bce");
        match &selectors[2] {
            LossSelector::Baseline(cfg) => assert_eq!(cfg.rho, 0.1),
            other => panic!("expected baseline, got {other:?}"),
        }
        let hash = config.hash();
        assert_eq!(hash.len(), 12);
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config = ExperimentConfig::from_toml("[loss]\nkind = \"sigma\"\n").unwrap();
        assert_eq!(config.run.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(config.train.batch_size, 64);
        assert_eq!(config.train.learning_rate, 1e-3);
        assert_eq!(config.corruption.ratios, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(config.corruption.parsed_kinds().unwrap().len(), 4);
        match config.data.source().unwrap() {
            DataSource::Synthetic(spec) => {
                assert_eq!(spec.num_classes, 10);
                assert_eq!(spec.feature_dim, 32);
            }
            other => panic!("expected synthetic, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in [
            "[loss]\nkind = \"sigma\"\nbogus = 1\n",
            "[loss]\nkind = \"sigma\"\n[train]\nlearning_rat = 0.1\n",
            "[loss]\nkind = \"sigma\"\n[mystery]\nx = 1\n",
            "[loss]\nkind = \"sigma\"\n[data]\nnum_class = 4\n",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text} -> {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn comments_and_key_order_leave_the_hash_alone() {
        let a = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[train]\nbatch_size = 32\nlearning_rate = 0.01\n",
        )
        .unwrap();
        let b = ExperimentConfig::from_toml(
            "# a comment\n[train]\nlearning_rate = 0.01\nbatch_size = 32\n[loss]\nkind = \"sigma\"\n",
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());

        // Stating a default explicitly is also cosmetic.
        let c = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[train]\nbatch_size = 32\nlearning_rate = 0.01\nmax_epochs = 100\n",
        )
        .unwrap();
        assert_eq!(a.hash(), c.hash());

        let d = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[train]\nbatch_size = 64\nlearning_rate = 0.01\n",
        )
        .unwrap();
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn output_dir_is_cosmetic_for_the_hash() {
        let a = ExperimentConfig::from_toml("[loss]\nkind = \"sigma\"\n").unwrap();
        let b = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[run]\noutput_dir = \"elsewhere\"\n",
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml("[loss]\nkind = \"sigma\"\n[run]\nseeds = [1]\n")
            .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn loss_grid_rules_are_enforced() {
        for (text, needle) in [
            ("[loss]\nkind = \"sigma\"\nkinds = [\"bce\"]\n", "not both"),
            ("[loss]\nkinds = []\n", "empty"),
            ("[loss]\nrho = 0.1\n", "missing loss.kind"),
            ("[loss]\nkind = \"nope\"\n", "nope"),
            ("[loss]\nkinds = [\"bce\", \"bce\"]\n", "twice"),
            ("[loss]\nkind = \"rho_dc\"\nrho = 0.7\n", "rho"),
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(err.to_string().contains(needle), "{text} -> {err}");
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn grid_sections_reject_bad_values() {
        for text in [
            "[loss]\nkind = \"sigma\"\n[corruption]\nkinds = []\n",
            "[loss]\nkind = \"sigma\"\n[corruption]\nratios = []\n",
            "[loss]\nkind = \"sigma\"\n[corruption]\nratios = [0.0, 0.0]\n",
            "[loss]\nkind = \"sigma\"\n[corruption]\nratios = [1.5]\n",
            "[loss]\nkind = \"sigma\"\n[corruption]\nkinds = [\"san\", \"san\"]\n",
            "[loss]\nkind = \"sigma\"\n[corruption]\nsoft_value = 1.0\n",
            "[loss]\nkind = \"sigma\"\n[run]\nseeds = []\n",
            "[loss]\nkind = \"sigma\"\n[run]\nseeds = [3, 3]\n",
            "[loss]\nkind = \"sigma\"\n[train]\nbatch_size = 0\n",
            "[loss]\nkind = \"sigma\"\n[data]\nnum_classes = 1\n",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text} -> {err}");
        }
    }

    #[test]
    fn csv_source_requires_all_three_paths() {
        let err = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[data]\ntrain_csv = \"a.csv\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("all of"), "{err}");

        let err = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[data]\ntrain_csv = \"a.csv\"\nvalid_csv = \"b.csv\"\ntest_csv = \"c.csv\"\nnum_classes = 4\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("mixes"), "{err}");

        let ok = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[data]\ntrain_csv = \"a.csv\"\nvalid_csv = \"b.csv\"\ntest_csv = \"c.csv\"\n",
        )
        .unwrap();
        assert!(matches!(ok.data.source().unwrap(), DataSource::Csv { .. }));
    }

    #[test]
    fn confusion_map_keys_parse_as_class_indices() {
        let config = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[corruption.confusion_map]\n\"0\" = [1, 2]\n\"3\" = [0]\n",
        )
        .unwrap();
        let spec = config
            .corruption
            .spec_for(CorruptionKind::Man, 0.3, 5)
            .unwrap();
        let map = spec.confusion_map.unwrap();
        assert_eq!(map[&0], vec![1, 2]);
        assert_eq!(map[&3], vec![0]);

        let err = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[corruption.confusion_map]\nx = [1]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("class index"), "{err}");
    }

    #[test]
    fn cell_seeds_fold_the_run_seed_into_the_section_seed() {
        let config = ExperimentConfig::from_toml(
            "[loss]\nkind = \"sigma\"\n[corruption]\nseed = 100\n",
        )
        .unwrap();
        let spec = config
            .corruption
            .spec_for(CorruptionKind::San, 0.2, 7)
            .unwrap();
        assert_eq!(spec.seed, 107);
        assert_eq!(spec.soft_value, 0.6);
    }
}
