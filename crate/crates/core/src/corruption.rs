//! Label-corruption injectors.
//!
//! Three corruption patterns, plus an equal-share mix:
//!
//! * **SAN** (spurious additional noise): an eligible clip gains one
//!   extra positive at a uniformly chosen absent class.  Nothing is
//!   removed; existing positives are untouched.
//! * **MAN** (mislabeled assignment noise): a positive moves from its
//!   class to a uniformly chosen non-positive class, optionally guided
//!   by a confusion map.  The per-row label sum is preserved exactly.
//! * **SLN** (soft-label noise): a hard positive is replaced by a soft
//!   value strictly inside `(0, 1)`, default `0.6`.
//! * **MIX**: every class splits its corrupted clips into near-equal
//!   SAN/MAN/SLN groups, remainders handed out in that order, and each
//!   clip receives exactly one corruption type.
//!
//! Per class, the eligible pool is shuffled with a ChaCha20 stream and
//! the first `round_half_up(ratio * pool_len)` clips are corrupted, so
//! the same spec on the same targets always picks the same clips.
//! Eligibility is computed on the clean matrix; mutations are applied to
//! a working copy (SAN's spurious class is drawn from the working row,
//! so a clip never gains the same positive twice).  Validation and test
//! labels are never corrupted by any caller in this crate.

use crate::data::TargetMatrix;
use crate::error::Error;
use crate::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Corruption ratios the experiment grid is expected to use.
pub const CANONICAL_RATIOS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Which injector to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    San,
    Man,
    Sln,
    Mix,
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CorruptionKind::San => "san",
            CorruptionKind::Man => "man",
            CorruptionKind::Sln => "sln",
            CorruptionKind::Mix => "mix",
        };
        write!(f, "{s}")
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "san" => Ok(CorruptionKind::San),
            "man" => Ok(CorruptionKind::Man),
            "sln" => Ok(CorruptionKind::Sln),
            "mix" => Ok(CorruptionKind::Mix),
            other => Err(Error::InvalidCorruption(format!(
                "unknown corruption kind {other:?} (expected san, man, sln, or mix)"
            ))),
        }
    }
}

/// Full description of one corruption pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Fraction of each class's eligible pool to corrupt, in `[0, 1]`.
    pub ratio: f64,
    /// Replacement value for SLN, strictly inside `(0, 1)`.
    pub soft_value: f64,
    pub seed: u64,
    /// Optional MAN destination lists per source class.  A listed class
    /// must differ from its source; classes without an entry fall back
    /// to "any other class".
    pub confusion_map: Option<BTreeMap<usize, Vec<usize>>>,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, ratio: f64, seed: u64) -> Self {
        CorruptionSpec {
            kind,
            ratio,
            soft_value: 0.6,
            seed,
            confusion_map: None,
        }
    }

    /// True when the ratio is not one of the canonical grid values.
    /// Off-grid ratios are legal; callers may want to warn.
    pub fn ratio_off_grid(&self) -> bool {
        !CANONICAL_RATIOS.iter().any(|r| (r - self.ratio).abs() < 1e-12)
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidCorruption(format!(
                "ratio must lie in [0, 1], got {}",
                self.ratio
            )));
        }
        if !(self.soft_value > 0.0 && self.soft_value < 1.0) {
            return Err(Error::InvalidCorruption(format!(
                "soft_value must lie strictly inside (0, 1), got {}",
                self.soft_value
            )));
        }
        if let Some(map) = &self.confusion_map {
            for (&from, tos) in map {
                if from >= num_classes {
                    return Err(Error::InvalidCorruption(format!(
                        "confusion map source class {from} out of range"
                    )));
                }
                if tos.is_empty() {
                    return Err(Error::InvalidCorruption(format!(
                        "confusion map entry for class {from} is empty"
                    )));
                }
                for &to in tos {
                    if to >= num_classes {
                        return Err(Error::InvalidCorruption(format!(
                            "confusion map destination class {to} out of range"
                        )));
                    }
                    if to == from {
                        return Err(Error::InvalidCorruption(format!(
                            "confusion map maps class {from} to itself"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One label edit.  `old`/`new` are the stored values at the affected
/// position: SAN writes a fresh positive (`0 -> 1` at `class_to`), MAN
/// moves one (`1` leaves `class_from`, `1` lands on `class_to`), SLN
/// softens in place (`class_from == class_to`, `1 -> soft_value`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub sample_id: usize,
    pub kind: CorruptionKind,
    pub class_from: usize,
    pub class_to: usize,
    pub old: f64,
    pub new: f64,
}

/// Everything a corruption pass did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub kind: CorruptionKind,
    pub ratio: f64,
    pub num_samples: usize,
    /// Eligible pool size per class, measured on the clean targets.
    pub per_class_eligible: Vec<usize>,
    /// Clips actually corrupted per class.
    pub per_class_counts: Vec<usize>,
    pub records: Vec<CorruptionRecord>,
}

impl CorruptionReport {
    /// Count records for one class broken down by applied kind; useful
    /// for inspecting the mix partition.
    pub fn class_kind_count(&self, class: usize, kind: CorruptionKind) -> usize {
        self.records
            .iter()
            .filter(|r| r.class_from == class && r.kind == kind)
            .count()
    }

    /// Write one JSON object per record, newline separated.
    pub fn write_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &self.records {
            serde_json::to_writer(&mut file, record)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }
}

/// Half-up rounding of a non-negative count.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Lowest-index positive column of a row, if any.
fn dominant_positive(row: ndarray::ArrayView1<'_, f64>) -> Option<usize> {
    row.iter().position(|&v| v == 1.0)
}

/// Shuffle a class's eligible pool and take its corruption quota.
fn select(pool: &mut Vec<usize>, ratio: f64, rng: &mut ChaCha20Rng) -> usize {
    pool.shuffle(rng);
    round_half_up(ratio * pool.len() as f64)
}

fn draw_absent(
    working: &Array2<f64>,
    row: usize,
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    let absent: Vec<usize> = (0..working.ncols())
        .filter(|&j| working[[row, j]] == 0.0)
        .collect();
    if absent.is_empty() {
        return Err(Error::InvalidCorruption(format!(
            "row {row} has no absent class to receive a spurious positive"
        )));
    }
    Ok(absent[rng.random_range(0..absent.len())])
}

fn draw_destination(
    working: &Array2<f64>,
    row: usize,
    from: usize,
    confusion: Option<&BTreeMap<usize, Vec<usize>>>,
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    let candidates: Vec<usize> = match confusion.and_then(|m| m.get(&from)) {
        Some(tos) => tos
            .iter()
            .copied()
            .filter(|&j| working[[row, j]] == 0.0)
            .collect(),
        None => (0..working.ncols())
            .filter(|&j| j != from && working[[row, j]] == 0.0)
            .collect(),
    };
    if candidates.is_empty() {
        return Err(Error::InvalidCorruption(format!(
            "row {row}: no eligible destination class for a positive moving off class {from}"
        )));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Run the injector named by the spec.  Targets must be hard 0/1.
///
/// Equal `(targets, spec)` pairs produce bit-identical outputs and
/// reports.
pub fn inject(targets: &TargetMatrix, spec: &CorruptionSpec) -> Result<(TargetMatrix, CorruptionReport)> {
    let c = targets.num_classes();
    spec.validate(c)?;
    if !targets.is_hard() {
        return Err(Error::InvalidCorruption(
            "corruption requires hard 0/1 targets".into(),
        ));
    }
    if c < 2 && spec.ratio > 0.0 {
        return Err(Error::InvalidCorruption(
            "corruption needs at least 2 classes".into(),
        ));
    }

    let clean = targets.array();
    let mut working = clean.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut per_class_eligible = vec![0usize; c];
    let mut per_class_counts = vec![0usize; c];
    let mut records = Vec::new();
    let mut claimed: HashSet<usize> = HashSet::new();

    for class in 0..c {
        let mut pool: Vec<usize> = match spec.kind {
            CorruptionKind::San => (0..clean.nrows())
                .filter(|&r| dominant_positive(clean.row(r)) == Some(class))
                .collect(),
            _ => (0..clean.nrows())
                .filter(|&r| clean[[r, class]] == 1.0)
                .collect(),
        };
        per_class_eligible[class] = pool.len();
        let quota = select(&mut pool, spec.ratio, &mut rng);

        match spec.kind {
            CorruptionKind::San => {
                for &row in pool.iter().take(quota) {
                    let to = draw_absent(&working, row, &mut rng)?;
                    working[[row, to]] = 1.0;
                    records.push(CorruptionRecord {
                        sample_id: row,
                        kind: CorruptionKind::San,
                        class_from: class,
                        class_to: to,
                        old: 0.0,
                        new: 1.0,
                    });
                    per_class_counts[class] += 1;
                }
            }
            CorruptionKind::Man => {
                for &row in pool.iter().take(quota) {
                    let to = draw_destination(
                        &working,
                        row,
                        class,
                        spec.confusion_map.as_ref(),
                        &mut rng,
                    )?;
                    working[[row, class]] = 0.0;
                    working[[row, to]] = 1.0;
                    records.push(CorruptionRecord {
                        sample_id: row,
                        kind: CorruptionKind::Man,
                        class_from: class,
                        class_to: to,
                        old: 1.0,
                        new: 1.0,
                    });
                    per_class_counts[class] += 1;
                }
            }
            CorruptionKind::Sln => {
                for &row in pool.iter().take(quota) {
                    working[[row, class]] = spec.soft_value;
                    records.push(CorruptionRecord {
                        sample_id: row,
                        kind: CorruptionKind::Sln,
                        class_from: class,
                        class_to: class,
                        old: 1.0,
                        new: spec.soft_value,
                    });
                    per_class_counts[class] += 1;
                }
            }
            CorruptionKind::Mix => {
                // Every clip gets exactly one corruption type; clips
                // already claimed by an earlier class are skipped.
                let taken: Vec<usize> = pool
                    .iter()
                    .copied()
                    .filter(|r| !claimed.contains(r))
                    .take(quota)
                    .collect();
                let k = taken.len();
                let base = k / 3;
                let rem = k % 3;
                let san_n = base + usize::from(rem >= 1);
                let man_n = base + usize::from(rem >= 2);
                for (i, &row) in taken.iter().enumerate() {
                    claimed.insert(row);
                    if i < san_n {
                        let to = draw_absent(&working, row, &mut rng)?;
                        working[[row, to]] = 1.0;
                        records.push(CorruptionRecord {
                            sample_id: row,
                            kind: CorruptionKind::San,
                            class_from: class,
                            class_to: to,
                            old: 0.0,
                            new: 1.0,
                        });
                    } else if i < san_n + man_n {
                        let to = draw_destination(
                            &working,
                            row,
                            class,
                            spec.confusion_map.as_ref(),
                            &mut rng,
                        )?;
                        working[[row, class]] = 0.0;
                        working[[row, to]] = 1.0;
                        records.push(CorruptionRecord {
                            sample_id: row,
                            kind: CorruptionKind::Man,
                            class_from: class,
                            class_to: to,
                            old: 1.0,
                            new: 1.0,
                        });
                    } else {
                        working[[row, class]] = spec.soft_value;
                        records.push(CorruptionRecord {
                            sample_id: row,
                            kind: CorruptionKind::Sln,
                            class_from: class,
                            class_to: class,
                            old: 1.0,
                            new: spec.soft_value,
                        });
                    }
                    per_class_counts[class] += 1;
                }
            }
        }
    }

    let corrupted = TargetMatrix::new(working)?;
    let report = CorruptionReport {
        kind: spec.kind,
        ratio: spec.ratio,
        num_samples: clean.nrows(),
        per_class_eligible,
        per_class_counts,
        records,
    };
    Ok((corrupted, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    /// `n_per_class` single-positive rows per class, class-major.
    fn single_positive(num_classes: usize, n_per_class: usize) -> TargetMatrix {
        let n = num_classes * n_per_class;
        let mut t = Array2::zeros((n, num_classes));
        for row in 0..n {
            t[[row, row / n_per_class]] = 1.0;
        }
        TargetMatrix::new(t).unwrap()
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(0.0), 0);
        assert_eq!(round_half_up(0.49), 0);
        assert_eq!(round_half_up(0.5), 1);
        assert_eq!(round_half_up(2.4), 2);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(7.5), 8);
    }

    #[test]
    fn san_only_adds_positives() {
        let targets = single_positive(5, 10);
        let spec = CorruptionSpec::new(CorruptionKind::San, 0.3, 17);
        let (out, report) = inject(&targets, &spec).unwrap();

        assert_eq!(report.per_class_counts, vec![3; 5]);
        assert_eq!(report.records.len(), 15);
        for record in &report.records {
            assert_eq!(record.kind, CorruptionKind::San);
            assert_eq!(record.old, 0.0);
            assert_eq!(record.new, 1.0);
            assert_ne!(record.class_to, record.class_from);
        }
        // Original positives all survive and corrupted rows gain exactly one.
        for row in 0..targets.num_samples() {
            for class in 0..5 {
                if targets.array()[[row, class]] == 1.0 {
                    assert_eq!(out.array()[[row, class]], 1.0);
                }
            }
            let clean_sum: f64 = targets.array().row(row).sum();
            let new_sum: f64 = out.array().row(row).sum();
            assert!(new_sum == clean_sum || new_sum == clean_sum + 1.0);
        }
    }

    #[test]
    fn man_moves_positives_and_preserves_row_sums() {
        let mut t = Array2::zeros((6, 4));
        // Two positives per row so moves have interesting company.
        for row in 0..6 {
            t[[row, row % 4]] = 1.0;
            t[[row, (row + 2) % 4]] = 1.0;
        }
        let targets = TargetMatrix::new(t).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::Man, 0.5, 3);
        let (out, report) = inject(&targets, &spec).unwrap();

        for row in 0..6 {
            let before: f64 = targets.array().row(row).sum();
            let after: f64 = out.array().row(row).sum();
            assert_eq!(before, after, "row {row} sum changed");
        }
        for record in &report.records {
            assert_eq!(record.kind, CorruptionKind::Man);
            assert_ne!(record.class_from, record.class_to);
        }
        assert!(out.is_hard());
    }

    #[test]
    fn man_follows_confusion_map() {
        // One positive at class 2; the map forces it onto class 1.
        let targets = TargetMatrix::new(array![[0.0, 0.0, 1.0, 0.0]]).unwrap();
        let mut spec = CorruptionSpec::new(CorruptionKind::Man, 1.0, 0);
        spec.confusion_map = Some(BTreeMap::from([(2, vec![1])]));
        let (out, report) = inject(&targets, &spec).unwrap();
        assert_eq!(out.array(), &array![[0.0, 1.0, 0.0, 0.0]]);
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].class_from, 2);
        assert_eq!(report.records[0].class_to, 1);
    }

    #[test]
    fn sln_softens_in_place() {
        let targets = TargetMatrix::new(array![[0.0, 0.0, 0.0, 1.0]]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::Sln, 1.0, 0);
        let (out, report) = inject(&targets, &spec).unwrap();
        assert_eq!(out.array(), &array![[0.0, 0.0, 0.0, 0.6]]);
        assert_eq!(report.records[0].class_from, 3);
        assert_eq!(report.records[0].class_to, 3);
        assert_eq!(report.records[0].old, 1.0);
        assert_eq!(report.records[0].new, 0.6);
        assert!(!out.is_hard());
    }

    #[test]
    fn san_keeps_existing_positives_on_multi_label_rows() {
        // Dominant positive is class 0; the spurious class must be 1 or 3.
        let targets = TargetMatrix::new(array![[1.0, 0.0, 1.0, 0.0]]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::San, 1.0, 5);
        let (out, report) = inject(&targets, &spec).unwrap();
        assert_eq!(out.array()[[0, 0]], 1.0);
        assert_eq!(out.array()[[0, 2]], 1.0);
        let added = report.records[0].class_to;
        assert!(added == 1 || added == 3);
        assert_eq!(out.array()[[0, added]], 1.0);
        assert_eq!(out.array().row(0).sum(), 3.0);
    }

    #[test]
    fn mix_partitions_with_remainders_toward_san_then_man() {
        // ratio 1 on 7 eligible clips per class: 3 SAN, 2 MAN, 2 SLN.
        let targets = single_positive(3, 7);
        let spec = CorruptionSpec::new(CorruptionKind::Mix, 1.0, 9);
        let (_, report) = inject(&targets, &spec).unwrap();
        for class in 0..3 {
            assert_eq!(report.class_kind_count(class, CorruptionKind::San), 3);
            assert_eq!(report.class_kind_count(class, CorruptionKind::Man), 2);
            assert_eq!(report.class_kind_count(class, CorruptionKind::Sln), 2);
        }
        // Single-positive rows: each clip is touched exactly once.
        let mut seen = HashSet::new();
        for record in &report.records {
            assert!(seen.insert(record.sample_id), "clip corrupted twice");
        }
    }

    #[test]
    fn injectors_are_deterministic() {
        let targets = single_positive(4, 9);
        for kind in [
            CorruptionKind::San,
            CorruptionKind::Man,
            CorruptionKind::Sln,
            CorruptionKind::Mix,
        ] {
            let spec = CorruptionSpec::new(kind, 0.4, 123);
            let (a, ra) = inject(&targets, &spec).unwrap();
            let (b, rb) = inject(&targets, &spec).unwrap();
            assert_eq!(a.array(), b.array());
            assert_eq!(ra, rb);
            let other = CorruptionSpec::new(kind, 0.4, 124);
            let (c, _) = inject(&targets, &other).unwrap();
            if kind != CorruptionKind::Sln {
                // A different seed picks different clips or destinations.
                assert_ne!(a.array(), c.array());
            }
        }
    }

    #[test]
    fn rejects_soft_targets_and_bad_specs() {
        let soft = TargetMatrix::new(array![[0.6, 1.0]]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::Sln, 0.5, 0);
        assert!(inject(&soft, &spec).is_err());

        let hard = single_positive(2, 4);
        let mut spec = CorruptionSpec::new(CorruptionKind::Sln, 0.5, 0);
        spec.soft_value = 1.0;
        assert!(inject(&hard, &spec).is_err());
        spec.soft_value = 0.0;
        assert!(inject(&hard, &spec).is_err());

        let mut spec = CorruptionSpec::new(CorruptionKind::Man, 0.5, 0);
        spec.confusion_map = Some(BTreeMap::from([(0, vec![0])]));
        assert!(inject(&hard, &spec).is_err());
        spec.confusion_map = Some(BTreeMap::from([(0, vec![])]));
        assert!(inject(&hard, &spec).is_err());

        let spec = CorruptionSpec::new(CorruptionKind::San, 1.5, 0);
        assert!(inject(&hard, &spec).is_err());
    }

    #[test]
    fn san_errors_when_no_class_is_absent() {
        let targets = TargetMatrix::new(array![[1.0, 1.0], [1.0, 0.0]]).unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::San, 1.0, 0);
        assert!(inject(&targets, &spec).is_err());
    }

    #[test]
    fn off_grid_ratios_are_flagged_not_rejected() {
        let spec = CorruptionSpec::new(CorruptionKind::San, 0.25, 0);
        assert!(spec.ratio_off_grid());
        let spec = CorruptionSpec::new(CorruptionKind::San, 0.2, 0);
        assert!(!spec.ratio_off_grid());
        let targets = single_positive(3, 8);
        let spec = CorruptionSpec::new(CorruptionKind::San, 0.25, 0);
        assert!(inject(&targets, &spec).is_ok());
    }

    #[test]
    fn jsonl_report_has_one_record_per_line() {
        let targets = single_positive(3, 5);
        let spec = CorruptionSpec::new(CorruptionKind::Man, 0.4, 2);
        let (_, report) = inject(&targets, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.jsonl");
        report.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), report.records.len());
        let first: CorruptionRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first, report.records[0]);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["sample_id", "kind", "class_from", "class_to", "old", "new"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }

    proptest! {
        #[test]
        fn per_class_counts_match_the_rounding_rule(
            num_classes in 2usize..6,
            n_per_class in 1usize..12,
            ratio_idx in 0usize..6,
            seed in 0u64..1000,
        ) {
            let ratio = CANONICAL_RATIOS[ratio_idx];
            let targets = single_positive(num_classes, n_per_class);
            for kind in [CorruptionKind::San, CorruptionKind::Man, CorruptionKind::Sln, CorruptionKind::Mix] {
                let spec = CorruptionSpec::new(kind, ratio, seed);
                let (out, report) = inject(&targets, &spec).unwrap();
                let expect = round_half_up(ratio * n_per_class as f64);
                for class in 0..num_classes {
                    prop_assert_eq!(report.per_class_counts[class], expect);
                }
                for v in out.array().iter() {
                    prop_assert!(*v == 0.0 || *v == 1.0 || *v == 0.6);
                }
            }
        }
    }
}
