use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::signal::Signal;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IcdCode {
    pub code: String,
    pub version: u8,
}

impl IcdCode {
    pub fn new(code: impl Into<String>, version: u8) -> Self {
        IcdCode {
            code: code.into(),
            version,
        }
    }
}

/// One ECG with its admission metadata. `labels` carries annotated
/// diagnostic classes for an annotated (training) cohort and is `None`
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub record_id: u64,
    pub subject_id: u64,
    pub admission_id: u64,
    pub timestamp: NaiveDateTime,
    pub signal: Signal,
    pub icd_codes: Vec<IcdCode>,
    pub report: String,
    pub labels: Option<Vec<usize>>,
}

impl CohortRecord {
    pub fn label_mask(&self, num_classes: usize) -> Vec<bool> {
        let mut mask = vec![false; num_classes];
        for &c in self.labels.iter().flatten() {
            if c < num_classes {
                mask[c] = true;
            }
        }
        mask
    }
}

/// Generator-side truth for a record. Never written into cohort files and
/// never read by pipeline stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub record_id: u64,
    pub subject_id: u64,
    pub classes: Vec<usize>,
    /// `(class, subtype)` for every held class.
    pub subtypes: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn has_class(&self, c: usize) -> bool {
        self.classes.contains(&c)
    }

    pub fn subtype_of(&self, c: usize) -> Option<usize> {
        self.subtypes.iter().find(|(k, _)| *k == c).map(|(_, s)| *s)
    }
}
