//! Feature-window datasets: JSON-lines persistence, stratified splits and
//! leave-one-subject-out folds.
//!
//! Window-level splits follow the original protocol but let windows of one
//! recording land on both sides; [`SplitMode::RecordLevel`] keeps each
//! recording whole.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    windows: Vec<FeatureWindow>,
}

impl Dataset {
    /// Validates key uniqueness and labels.
    pub fn new(windows: Vec<FeatureWindow>) -> Result<Self> {
        let mut keys = HashSet::with_capacity(windows.len());
        for w in &windows {
            if w.label > 1 {
                return Err(Error::invalid(format!(
                    "window {:?} has label {}",
                    w.key(),
                    w.label
                )));
            }
            if !keys.insert(w.key()) {
                return Err(Error::invalid(format!(
                    "duplicate window key {:?}",
                    w.key()
                )));
            }
        }
        Ok(Dataset { windows })
    }

    pub fn windows(&self) -> &[FeatureWindow] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<FeatureWindow> {
        self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.windows.iter().map(|w| w.subject_id.as_str()).collect()
    }

    /// Indices of a subject's windows, optionally skipping artifact windows.
    pub fn subject_indices(&self, subject: &str, include_rejected: bool) -> Vec<usize> {
        self.indices_where(|w| w.subject_id == subject, include_rejected)
    }

    pub fn indices_where(
        &self,
        pred: impl Fn(&FeatureWindow) -> bool,
        include_rejected: bool,
    ) -> Vec<usize> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| (include_rejected || !w.rejected) && pred(w))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&FeatureWindow> {
        indices.iter().map(|&i| &self.windows[i]).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for win in &self.windows {
            serde_json::to_writer(&mut w, win)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut windows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let w: FeatureWindow = serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("dataset line {}: {e}", i + 1)))?;
            windows.push(w);
        }
        Dataset::new(windows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positives: usize,
    pub negatives: usize,
    /// Zero for an empty set.
    pub positive_fraction: f64,
}

pub fn class_counts<'a>(windows: impl IntoIterator<Item = &'a FeatureWindow>) -> ClassCounts {
    let (mut pos, mut neg) = (0, 0);
    for w in windows {
        if w.label == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    let total = pos + neg;
    ClassCounts {
        positives: pos,
        negatives: neg,
        positive_fraction: if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    WindowLevel,
    RecordLevel,
}

/// Train/test partition of dataset indices. Saved verbatim as a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub subject: String,
    pub mode: SplitMode,
    pub seed: u64,
    pub test_fraction: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn n_test(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

/// Seeded stratified split of one subject's windows.
///
/// Each class is shuffled independently and `round(n_class * test_fraction)`
/// items go to the test side. In record-level mode the items are whole
/// recordings. Both index lists are returned sorted.
pub fn stratified_split(
    ds: &Dataset,
    subject: &str,
    test_fraction: f64,
    seed: u64,
    mode: SplitMode,
    include_rejected: bool,
) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let idx = ds.subject_indices(subject, include_rejected);
    if idx.is_empty() {
        return Err(Error::invalid(format!(
            "subject {subject:?} has no windows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [0u8, 1] {
        let class: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| ds.windows[i].label == label)
            .collect();
        if class.is_empty() {
            return Err(Error::invalid(format!(
                "subject {subject:?} has no windows of class {label}"
            )));
        }
        match mode {
            SplitMode::WindowLevel => {
                let mut c = class;
                c.shuffle(&mut rng);
                let k = n_test(c.len(), test_fraction);
                test.extend_from_slice(&c[..k]);
                train.extend_from_slice(&c[k..]);
            }
            SplitMode::RecordLevel => {
                let mut by_record: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for i in class {
                    by_record
                        .entry(ds.windows[i].record_id.as_str())
                        .or_default()
                        .push(i);
                }
                let mut records: Vec<&str> = by_record.keys().copied().collect();
                records.shuffle(&mut rng);
                let k = n_test(records.len(), test_fraction);
                for (r, rec) in records.iter().enumerate() {
                    let side = if r < k { &mut test } else { &mut train };
                    side.extend_from_slice(&by_record[rec]);
                }
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        subject: subject.to_string(),
        mode,
        seed,
        test_fraction,
        train_indices: train,
        test_indices: test,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_subjects: Vec<String>,
    pub test_subject: String,
}

/// One fold per subject, in sorted subject order.
pub fn loso_folds(ds: &Dataset) -> Result<Vec<Fold>> {
    let subjects: Vec<&str> = ds.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .iter()
        .map(|&test| Fold {
            train_subjects: subjects
                .iter()
                .filter(|&&s| s != test)
                .map(|s| s.to_string())
                .collect(),
            test_subject: test.to_string(),
        })
        .collect())
}
