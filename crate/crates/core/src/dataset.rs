//! Study manifests, BIRADS labeling, class balancing and patient-disjoint
//! splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io;
use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest interval between the study and a biopsy for a positive label.
pub const BIOPSY_WINDOW_DAYS: u32 = 180;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no records to split")]
    EmptyInput,
    #[error("record {image_id}: {reason}")]
    InvalidRecord { image_id: String, reason: String },
    #[error("ratios must be three non-negative values summing to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("not enough {label} records{}: have {have}, need {need}", .split.map(|s| format!(" in {s}")).unwrap_or_default())]
    InsufficientClass {
        label: Label,
        split: Option<Split>,
        have: usize,
        need: usize,
    },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOutcome {
    Positive,
    Negative,
    Excluded,
}

impl LabelOutcome {
    pub fn label(self) -> Option<Label> {
        match self {
            LabelOutcome::Positive => Some(Label::Positive),
            LabelOutcome::Negative => Some(Label::Negative),
            LabelOutcome::Excluded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One manifest row. Empty CSV fields map to `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub patient_id: String,
    pub image_id: String,
    pub path: PathBuf,
    pub birads: Option<u8>,
    pub days_to_biopsy: Option<u32>,
    pub label: Option<Label>,
}

/// Labels a study from its BIRADS category and biopsy timing. A record
/// without a BIRADS value is excluded.
pub fn derive_label(rec: &StudyRecord) -> LabelOutcome {
    match rec.birads {
        Some(4..=6) => match rec.days_to_biopsy {
            Some(d) if d <= BIOPSY_WINDOW_DAYS => LabelOutcome::Positive,
            _ => LabelOutcome::Excluded,
        },
        Some(1 | 2) => LabelOutcome::Negative,
        _ => LabelOutcome::Excluded,
    }
}

fn validate(records: &[StudyRecord]) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for r in records {
        let invalid = |reason: &str| DatasetError::InvalidRecord {
            image_id: r.image_id.clone(),
            reason: reason.to_string(),
        };
        if r.image_id.is_empty() {
            return Err(invalid("empty image_id"));
        }
        if !seen.insert(r.image_id.as_str()) {
            return Err(invalid("duplicate image_id"));
        }
        if r.birads.is_some_and(|b| b > 6) {
            return Err(invalid("birads outside 0..=6"));
        }
    }
    Ok(())
}

/// Reads and validates a manifest.
pub fn read_manifest<R: io::Read>(input: R) -> Result<Vec<StudyRecord>, DatasetError> {
    let mut rdr = csv::Reader::from_reader(input);
    let records = rdr.deserialize().collect::<Result<Vec<StudyRecord>, _>>()?;
    validate(&records)?;
    Ok(records)
}

pub fn write_manifest<W: io::Write>(out: W, records: &[StudyRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["patient_id", "image_id", "path", "birads", "days_to_biopsy", "label"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Clinical attributes joined onto a manifest by image id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalRow {
    pub image_id: String,
    pub birads: Option<u8>,
    pub days_to_biopsy: Option<u32>,
}

/// Reads an `image_id,birads,days_to_biopsy` CSV keyed by image id.
pub fn read_clinical<R: io::Read>(input: R) -> Result<BTreeMap<String, ClinicalRow>, DatasetError> {
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: ClinicalRow = row?;
        if row.birads.is_some_and(|b| b > 6) {
            return Err(DatasetError::InvalidRecord {
                image_id: row.image_id,
                reason: "birads outside 0..=6".into(),
            });
        }
        if out.contains_key(&row.image_id) {
            return Err(DatasetError::InvalidRecord {
                image_id: row.image_id,
                reason: "duplicate image_id in clinical data".into(),
            });
        }
        out.insert(row.image_id.clone(), row);
    }
    Ok(out)
}

/// Copies the clinical columns of `row` onto `record`.
pub fn apply_clinical_row(record: &mut StudyRecord, row: &ClinicalRow) {
    record.birads = row.birads;
    record.days_to_biopsy = row.days_to_biopsy;
}

/// Sets every record's label from [`derive_label`].
pub fn apply_labels(records: &mut [StudyRecord]) {
    for r in records {
        r.label = derive_label(r).label();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.assignments.get(image_id).copied()
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    Ok(())
}

/// Assigns whole patients to train/validation/test.
///
/// Patients are ordered by id, shuffled with `seed`, then each goes to the
/// split whose image count falls furthest short of its target (ties go to
/// the earlier split).
pub fn split_patients(
    records: &[StudyRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    check_ratios(ratios)?;
    validate(records)?;
    if let Some(r) = records.iter().find(|r| r.label.is_none()) {
        return Err(DatasetError::InvalidRecord {
            image_id: r.image_id.clone(),
            reason: "unlabeled record cannot be split".into(),
        });
    }

    let mut patients: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        patients.entry(&r.patient_id).or_default().push(&r.image_id);
    }
    let mut order: Vec<(&str, Vec<&str>)> = patients.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total = records.len() as f64;
    let mut counts = [0usize; 3];
    let mut assignments = BTreeMap::new();
    for (_, images) in order {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, &ratio) in ratios.iter().enumerate() {
            let deficit = ratio * total - counts[i] as f64;
            if deficit > best_deficit {
                best = i;
                best_deficit = deficit;
            }
        }
        counts[best] += images.len();
        for id in images {
            assignments.insert(id.to_string(), Split::ALL[best]);
        }
    }
    Ok(SplitAssignment {
        seed,
        ratios,
        assignments,
    })
}

/// Uniformly subsamples exactly `per_class` records of each label, without
/// replacement. Unlabeled records are ignored. The result is ordered by
/// image id.
pub fn balance_classes(
    records: &[StudyRecord],
    per_class: usize,
    seed: u64,
) -> Result<Vec<StudyRecord>, DatasetError> {
    balance_inner(records, per_class, seed, None)
}

fn balance_inner(
    records: &[StudyRecord],
    per_class: usize,
    seed: u64,
    split: Option<Split>,
) -> Result<Vec<StudyRecord>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for label in [Label::Positive, Label::Negative] {
        let mut class: Vec<&StudyRecord> =
            records.iter().filter(|r| r.label == Some(label)).collect();
        if class.len() < per_class {
            return Err(DatasetError::InsufficientClass {
                label,
                split,
                have: class.len(),
                need: per_class,
            });
        }
        class.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let chosen = index::sample(&mut rng, class.len(), per_class);
        out.extend(chosen.into_iter().map(|i| class[i].clone()));
    }
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

/// Per-class targets for each split when `per_class` records per label are
/// kept overall: validation and test get their rounded share and train
/// takes the rest.
pub fn split_targets(per_class: usize, ratios: [f64; 3]) -> [usize; 3] {
    let val = (per_class as f64 * ratios[1]).round() as usize;
    let test = (per_class as f64 * ratios[2]).round() as usize;
    [per_class.saturating_sub(val + test), val, test]
}

/// Balances each split separately so every split holds its share of
/// `per_class` records of each label.
pub fn balance_splits(
    records: &[StudyRecord],
    assignment: &SplitAssignment,
    per_class: usize,
    seed: u64,
) -> Result<Vec<StudyRecord>, DatasetError> {
    let targets = split_targets(per_class, assignment.ratios);
    let mut out = Vec::new();
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let members: Vec<StudyRecord> = records
            .iter()
            .filter(|r| assignment.split_of(&r.image_id) == Some(split))
            .cloned()
            .collect();
        let split_seed = seed.wrapping_add(i as u64);
        out.extend(balance_inner(&members, targets[i], split_seed, Some(split))?);
    }
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub patients: usize,
    pub images: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub per_class: Option<usize>,
    pub splits: BTreeMap<Split, SplitCounts>,
}

/// Counts per split for the records that appear in `assignment`.
pub fn summarize(
    records: &[StudyRecord],
    assignment: &SplitAssignment,
    per_class: Option<usize>,
) -> SplitSummary {
    let mut splits: BTreeMap<Split, SplitCounts> =
        Split::ALL.iter().map(|s| (*s, SplitCounts::default())).collect();
    let mut patients: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        let Some(split) = assignment.split_of(&r.image_id) else {
            continue;
        };
        let c = splits.get_mut(&split).expect("all splits present");
        c.images += 1;
        match r.label {
            Some(Label::Positive) => c.positive += 1,
            Some(Label::Negative) => c.negative += 1,
            None => {}
        }
        patients.entry(split).or_default().insert(&r.patient_id);
    }
    for (split, set) in patients {
        splits.get_mut(&split).expect("all splits present").patients = set.len();
    }
    SplitSummary {
        seed: assignment.seed,
        ratios: assignment.ratios,
        per_class,
        splits,
    }
}
