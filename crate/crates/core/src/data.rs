//! Dataset containers, the synthetic generator, and CSV I/O.
//!
//! All tabular data lives in validated newtypes over `ndarray::Array2`:
//! features and logits must be finite, targets must lie in `[0, 1]`.
//! A [`DatasetBundle`] ties features and targets to a split tag and
//! per-row sample ids; ids encode the split in their high bits, so any
//! train/valid/test triple is disjoint by construction.
//!
//! The synthetic generator draws one orthonormal prototype per class
//! (Gram-Schmidt on seeded Gaussian rows) and emits
//! `prototype + noise_scale * gaussian` rows, optionally blending in a
//! second prototype at half weight to create co-occurring positives.
//! A single ChaCha20 stream seeded from the spec makes every run
//! bit-identical.
//!
//! The CSV schema is `f_0..f_{D-1},y_0..y_{C-1}` with LF line endings;
//! floats are written in plain decimal with at least nine significant
//! digits and round-trip exactly.

use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;

/// A validated class index, guaranteed `< num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassIndex(usize);

impl ClassIndex {
    pub fn new(index: usize, num_classes: usize) -> Result<Self> {
        if index >= num_classes {
            return Err(Error::InvalidData(format!(
                "class index {index} out of range for {num_classes} classes"
            )));
        }
        Ok(ClassIndex(index))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense feature matrix, rows are samples.  All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite feature {v} at row {r}, column {c}"
                )));
            }
        }
        Ok(FeatureMatrix { data })
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Per-class supervision targets in `[0, 1]`.  Hard labels are exactly
/// 0 or 1; soft labels appear only after corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    data: Array2<f64>,
}

impl TargetMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidData(format!(
                    "target {v} at row {r}, column {c} outside [0, 1]"
                )));
            }
        }
        Ok(TargetMatrix { data })
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.data.ncols()
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_hard(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Model outputs, one logit per (sample, class).  All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    data: Array2<f64>,
}

impl LogitMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite logit {v} at row {r}, column {c}"
                )));
            }
        }
        Ok(LogitMatrix { data })
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}

/// Which split a bundle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        write!(f, "{s}")
    }
}

/// Features, targets, split tag, class names, and per-row sample ids.
///
/// Sample ids are `(split code << 32) | row`, so ids never collide
/// across splits and reruns assign identical ids.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub targets: TargetMatrix,
    pub split: Split,
    pub class_names: Vec<String>,
    pub sample_ids: Vec<u64>,
}

impl DatasetBundle {
    pub fn new(
        features: FeatureMatrix,
        targets: TargetMatrix,
        split: Split,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.num_samples() != targets.num_samples() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} target rows",
                features.num_samples(),
                targets.num_samples()
            )));
        }
        if class_names.len() != targets.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "{} class names but {} target columns",
                class_names.len(),
                targets.num_classes()
            )));
        }
        let sample_ids = (0..features.num_samples() as u64)
            .map(|row| (split.code() << 32) | row)
            .collect();
        Ok(DatasetBundle {
            features,
            targets,
            split,
            class_names,
            sample_ids,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.features.num_samples()
    }

    pub fn num_classes(&self) -> usize {
        self.targets.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.feature_dim()
    }

    /// Re-tag a bundle (e.g. a freshly loaded CSV) with a split; sample
    /// ids are re-derived from the new tag.
    pub fn retag(self, split: Split) -> Result<Self> {
        DatasetBundle::new(self.features, self.targets, split, self.class_names)
    }

    /// Swap in corrupted targets; shape must match.
    pub fn with_targets(&self, targets: TargetMatrix) -> Result<Self> {
        if targets.num_samples() != self.num_samples()
            || targets.num_classes() != self.num_classes()
        {
            return Err(Error::ShapeMismatch(format!(
                "replacement targets are {}x{} but bundle is {}x{}",
                targets.num_samples(),
                targets.num_classes(),
                self.num_samples(),
                self.num_classes()
            )));
        }
        let mut out = self.clone();
        out.targets = targets;
        Ok(out)
    }

    /// Verify that no sample id appears in more than one bundle.
    pub fn check_disjoint(bundles: &[&DatasetBundle]) -> Result<()> {
        let mut seen = HashSet::new();
        for b in bundles {
            for &id in &b.sample_ids {
                if !seen.insert(id) {
                    return Err(Error::InvalidData(format!(
                        "sample id {id} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Recipe for the synthetic multi-label dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_scale: f64,
    /// Probability that a sample blends in a second class prototype at
    /// half weight and gains that class as an extra positive.
    pub cooccurrence_prob: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::InvalidData(format!(
                "feature_dim {} cannot hold {} orthonormal prototypes",
                self.feature_dim, self.num_classes
            )));
        }
        if self.train_per_class == 0 || self.valid_per_class == 0 || self.test_per_class == 0
        {
            return Err(Error::InvalidData(
                "every split needs at least one sample per class".into(),
            ));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidData(format!(
                "noise_scale must be finite and non-negative, got {}",
                self.noise_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.cooccurrence_prob) {
            return Err(Error::InvalidData(format!(
                "cooccurrence_prob must lie in [0, 1], got {}",
                self.cooccurrence_prob
            )));
        }
        Ok(())
    }
}

/// Orthonormalize rows in place by modified Gram-Schmidt.
fn gram_schmidt(rows: &mut Array2<f64>) -> Result<()> {
    let n = rows.nrows();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = {
                let (ri, rj) = (rows.row(i), rows.row(j));
                ri.iter().zip(rj.iter()).map(|(a, b)| a * b).sum()
            };
            let rj = rows.row(j).to_owned();
            let mut ri = rows.row_mut(i);
            ri.iter_mut().zip(rj.iter()).for_each(|(a, b)| *a -= dot * b);
        }
        let norm: f64 = rows.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidData(
                "degenerate prototype draw during orthonormalization".into(),
            ));
        }
        rows.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

/// Generate train/valid/test bundles from one seeded stream.
///
/// Rows are laid out class-major inside each split and each class gets
/// exactly the per-class count the spec asks for, so splits are balanced
/// by construction.  Equal specs produce bit-identical bundles.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(DatasetBundle, DatasetBundle, DatasetBundle)> {
    spec.validate()?;
    let c = spec.num_classes;
    let d = spec.feature_dim;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut prototypes = Array2::zeros((c, d));
    for v in prototypes.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    gram_schmidt(&mut prototypes)?;

    let class_names: Vec<String> = (0..c).map(|i| format!("class_{i}")).collect();
    let mut bundles = Vec::with_capacity(3);
    for (split, per_class) in [
        (Split::Train, spec.train_per_class),
        (Split::Valid, spec.valid_per_class),
        (Split::Test, spec.test_per_class),
    ] {
        let n = per_class * c;
        let mut features = Array2::zeros((n, d));
        let mut targets = Array2::zeros((n, c));
        let mut row = 0;
        for class in 0..c {
            for _ in 0..per_class {
                for col in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    features[[row, col]] = prototypes[[class, col]] + spec.noise_scale * noise;
                }
                targets[[row, class]] = 1.0;
                let u: f64 = rng.random();
                if u < spec.cooccurrence_prob {
                    let mut partner = rng.random_range(0..c - 1);
                    if partner >= class {
                        partner += 1;
                    }
                    for col in 0..d {
                        features[[row, col]] += 0.5 * prototypes[[partner, col]];
                    }
                    targets[[row, partner]] = 1.0;
                }
                row += 1;
            }
        }
        bundles.push(DatasetBundle::new(
            FeatureMatrix::new(features)?,
            TargetMatrix::new(targets)?,
            split,
            class_names.clone(),
        )?);
    }
    let test = bundles.pop().unwrap();
    let valid = bundles.pop().unwrap();
    let train = bundles.pop().unwrap();
    Ok((train, valid, test))
}

/// [`format_float`] with non-finite values passed through as their
/// Display form (`NaN`, `inf`), for CSV cells that may legally hold them.
pub(crate) fn format_csv_value(v: f64) -> String {
    if v.is_finite() {
        format_float(v)
    } else {
        format!("{v}")
    }
}

/// Format a float in plain decimal, exactly round-trippable, with at
/// least nine significant digits.
pub(crate) fn format_float(v: f64) -> String {
    let shortest = format!("{v}");
    let digits = shortest
        .chars()
        .filter(|ch| ch.is_ascii_digit())
        .collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant >= 9 {
        return shortest;
    }
    let mut out = shortest;
    if !out.contains('.') {
        out.push('.');
    }
    let mut have = out
        .chars()
        .filter(|ch| ch.is_ascii_digit())
        .collect::<String>()
        .trim_start_matches('0')
        .len();
    // Zero has no significant digits at all; pad it to a fixed width.
    if have == 0 {
        have = 1;
        if out.ends_with('.') {
            out.push('0');
        }
    }
    while have < 9 {
        out.push('0');
        have += 1;
    }
    out
}

/// Write a bundle to the `f_*,y_*` CSV schema with LF line endings.
pub fn write_feature_csv<P: AsRef<Path>>(bundle: &DatasetBundle, path: P) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path.as_ref())
        .map_err(|e| Error::Csv(format!("{}: {e}", path.as_ref().display())))?;
    let d = bundle.feature_dim();
    let c = bundle.num_classes();
    let mut header = Vec::with_capacity(d + c);
    for j in 0..d {
        header.push(format!("f_{j}"));
    }
    for j in 0..c {
        header.push(format!("y_{j}"));
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::Csv(e.to_string()))?;
    let features = bundle.features.array();
    let targets = bundle.targets.array();
    for row in 0..bundle.num_samples() {
        let mut record = Vec::with_capacity(d + c);
        for j in 0..d {
            record.push(format_float(features[[row, j]]));
        }
        for j in 0..c {
            record.push(format_float(targets[[row, j]]));
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Load a `f_*,y_*` CSV into a bundle tagged [`Split::Train`]; use
/// [`DatasetBundle::retag`] for other splits.
pub fn load_feature_csv<P: AsRef<Path>>(path: P) -> Result<DatasetBundle> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;

    let header = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let d = names.iter().take_while(|n| n.starts_with("f_")).count();
    let c = names.len() - d;
    if d == 0 || c == 0 {
        return Err(Error::Csv(format!(
            "{}: header must be f_0..f_{{D-1}},y_0..y_{{C-1}}",
            path.display()
        )));
    }
    for (j, name) in names.iter().enumerate() {
        let expected = if j < d {
            format!("f_{j}")
        } else {
            format!("y_{}", j - d)
        };
        if *name != expected {
            return Err(Error::Csv(format!(
                "{}: header column {} is {:?}, expected {:?}",
                path.display(),
                j,
                name,
                expected
            )));
        }
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, record) in reader.records().enumerate() {
        // Header occupies line 1.
        let line = idx + 2;
        let record = record.map_err(|e| Error::Csv(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != d + c {
            return Err(Error::Csv(format!(
                "{}: line {line}: {} fields, expected {}",
                path.display(),
                record.len(),
                d + c
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Csv(format!(
                    "{}: line {line}: column {:?}: cannot parse {field:?} as a number",
                    path.display(),
                    names[j]
                ))
            })?;
            if j >= d && !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidData(format!(
                    "{}: line {line}: column {:?}: target {v} outside [0, 1]",
                    path.display(),
                    names[j]
                )));
            }
            rows.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData(format!(
            "{}: empty dataset",
            path.display()
        )));
    }

    let all = Array2::from_shape_vec((n, d + c), rows)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let features = all.slice(ndarray::s![.., ..d]).to_owned();
    let targets = all.slice(ndarray::s![.., d..]).to_owned();
    let class_names = (0..c).map(|i| format!("class_{i}")).collect();
    DatasetBundle::new(
        FeatureMatrix::new(features)?,
        TargetMatrix::new(targets)?,
        Split::Train,
        class_names,
    )
}

/// Column-stack helper used by tests and the trainer.
pub fn positives_per_class(targets: &TargetMatrix) -> Array1<f64> {
    targets.array().sum_axis(ndarray::Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_classes: 4,
            feature_dim: 8,
            train_per_class: 6,
            valid_per_class: 3,
            test_per_class: 3,
            noise_scale: 0.5,
            cooccurrence_prob: 0.25,
            seed: 7,
        }
    }

    #[test]
    fn generator_is_deterministic_and_balanced() {
        let spec = small_spec();
        let (train_a, valid_a, test_a) = generate_synthetic(&spec).unwrap();
        let (train_b, _, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(train_a.features.array(), train_b.features.array());
        assert_eq!(train_a.targets.array(), train_b.targets.array());

        assert_eq!(train_a.num_samples(), 24);
        assert_eq!(valid_a.num_samples(), 12);
        assert_eq!(test_a.num_samples(), 12);
        // Class-major layout: the primary positive of row r is r / per_class.
        for row in 0..train_a.num_samples() {
            assert_eq!(train_a.targets.array()[[row, row / 6]], 1.0);
        }
        DatasetBundle::check_disjoint(&[&train_a, &valid_a, &test_a]).unwrap();
    }

    #[test]
    fn different_seeds_differ() {
        let mut spec = small_spec();
        let (a, _, _) = generate_synthetic(&spec).unwrap();
        spec.seed = 8;
        let (b, _, _) = generate_synthetic(&spec).unwrap();
        assert_ne!(a.features.array(), b.features.array());
    }

    #[test]
    fn prototypes_are_orthonormal() {
        let mut rows = Array2::zeros((3, 5));
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for v in rows.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        gram_schmidt(&mut rows).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = rows
                    .row(i)
                    .iter()
                    .zip(rows.row(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "({i},{j}) dot = {dot}");
            }
        }
    }

    #[test]
    fn generator_rejects_bad_specs() {
        let mut spec = small_spec();
        spec.num_classes = 1;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = small_spec();
        spec.feature_dim = 2;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = small_spec();
        spec.noise_scale = -0.1;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn target_matrix_rejects_out_of_range() {
        let bad = ndarray::array![[0.0, 1.2]];
        let err = TargetMatrix::new(bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 0"), "{msg}");
        assert!(msg.contains("column 1"), "{msg}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = small_spec();
        let (train, _, _) = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_feature_csv(&train, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.starts_with("f_0,"));

        let loaded = load_feature_csv(&path).unwrap().retag(Split::Train).unwrap();
        assert_eq!(loaded.features.array(), train.features.array());
        assert_eq!(loaded.targets.array(), train.targets.array());
        assert_eq!(loaded.sample_ids, train.sample_ids);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f_0,y_0\n0.5,1.0\noops,0.0\n").unwrap();
        let err = load_feature_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        std::fs::write(&path, "f_0,y_0\n0.5,1.5\n").unwrap();
        let err = load_feature_csv(&path).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"), "{err}");

        std::fs::write(&path, "f_0,y_0\n").unwrap();
        let err = load_feature_csv(&path).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");

        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(load_feature_csv(&path).is_err());
    }

    #[test]
    fn float_formatting_keeps_nine_significant_digits() {
        assert_eq!(format_float(0.5), "0.500000000");
        assert_eq!(format_float(0.0), "0.000000000");
        assert_eq!(format_float(1.0), "1.00000000");
        assert_eq!(format_float(-2.25), "-2.25000000");
        let full = 0.123_456_789_012_345_68;
        assert_eq!(format_float(full), format!("{full}"));
    }

    proptest! {
        #[test]
        fn format_float_round_trips(v in -1e6f64..1e6) {
            let s = format_float(v);
            prop_assert!(!s.contains('e') && !s.contains('E'));
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
            let digits = s.chars().filter(|ch| ch.is_ascii_digit()).count();
            prop_assert!(digits >= 9);
        }
    }
}
