use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proto::{BranchId, Collapse, InferenceOutput, ProtoModel};

/// Label granularity of a feature column; the declaration order is the
/// scan's output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    FusionLabel,
    PrototypeClass,
    PrototypeId,
    Cui,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::FusionLabel,
        Granularity::PrototypeClass,
        Granularity::PrototypeId,
        Granularity::Cui,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::FusionLabel => "fusion-label",
            Granularity::PrototypeClass => "prototype-class",
            Granularity::PrototypeId => "prototype-id",
            Granularity::Cui => "cui",
        }
    }

    pub fn parse(s: &str) -> Option<Granularity> {
        Granularity::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub granularity: Granularity,
    pub values: Vec<bool>,
}

impl FeatureColumn {
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_constant(&self) -> bool {
        let k = self.count();
        k == 0 || k == self.values.len()
    }
}

/// Named binary columns over records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub record_ids: Vec<u64>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureMatrix {
    pub fn new(record_ids: Vec<u64>, columns: Vec<FeatureColumn>) -> Result<Self> {
        let m = FeatureMatrix { record_ids, columns };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for c in &self.columns {
            if c.values.len() != self.record_ids.len() {
                return Err(Error::InvalidInput(format!(
                    "feature {}: {} values for {} records",
                    c.name,
                    c.values.len(),
                    self.record_ids.len()
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate feature name {}", c.name)));
            }
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn of(&self, g: Granularity) -> impl Iterator<Item = &FeatureColumn> {
        self.columns.iter().filter(move |c| c.granularity == g)
    }

    /// Columns of both matrices; record ids must agree row for row.
    pub fn hstack(mut self, other: FeatureMatrix) -> Result<FeatureMatrix> {
        if self.record_ids != other.record_ids {
            return Err(Error::InvalidInput("feature matrices are not row-aligned".into()));
        }
        self.columns.extend(other.columns);
        self.validate()?;
        Ok(self)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            record_ids: rows.iter().map(|&r| self.record_ids[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    name: c.name.clone(),
                    granularity: c.granularity,
                    values: rows.iter().map(|&r| c.values[r]).collect(),
                })
                .collect(),
        }
    }
}

/// Column name for a (branch, class) prototype-class feature.
pub fn prototype_class_name(branch: BranchId, class_name: &str) -> String {
    format!("{branch}/{class_name}")
}

/// Fusion-label, prototype-class and prototype-id columns from inference
/// outputs, followed by the columns of `concepts` when given.
///
/// Prototype-id columns are one per collapsed representative; a record's
/// best prototype is counted under its representative.
pub fn build_feature_sets(
    outputs: &[InferenceOutput],
    model: &ProtoModel,
    collapse: &Collapse,
    concepts: Option<&FeatureMatrix>,
    threshold: f64,
) -> Result<FeatureMatrix> {
    let n = outputs.len();
    let record_ids: Vec<u64> = outputs.iter().map(|o| o.record_id).collect();
    let ids = model.prototype_ids();
    if collapse.alias.len() != ids.len() {
        return Err(Error::InvalidInput(format!(
            "collapse covers {} prototypes, model has {}",
            collapse.alias.len(),
            ids.len()
        )));
    }
    let mut columns = Vec::new();

    for (c, name) in model.class_names.iter().enumerate() {
        let values = outputs
            .iter()
            .map(|o| {
                o.class_probs
                    .get(c)
                    .map(|&p| p >= threshold)
                    .ok_or_else(|| Error::InvalidInput(format!("record {}: no probability for class {c}", o.record_id)))
            })
            .collect::<Result<Vec<bool>>>()?;
        columns.push(FeatureColumn {
            name: name.clone(),
            granularity: Granularity::FusionLabel,
            values,
        });
    }

    // per record, per branch position in the model: best prototype index
    let mut best = vec![vec![0usize; model.branches.len()]; n];
    for (r, o) in outputs.iter().enumerate() {
        for (b, branch) in model.branches.iter().enumerate() {
            let m = o
                .best
                .iter()
                .find(|m| m.branch == branch.config.branch)
                .ok_or_else(|| Error::MissingBranch(format!("record {}: {}", o.record_id, branch.config.branch)))?;
            best[r][b] = m.prototype;
        }
    }

    for (b, branch) in model.branches.iter().enumerate() {
        for (c, name) in model.class_names.iter().enumerate() {
            columns.push(FeatureColumn {
                name: prototype_class_name(branch.config.branch, name),
                granularity: Granularity::PrototypeClass,
                values: best.iter().map(|row| ids[row[b]].class_id == c).collect(),
            });
        }
    }

    for (b, branch) in model.branches.iter().enumerate() {
        for &rep in &collapse.representatives {
            if ids[rep].branch != branch.config.branch {
                continue;
            }
            columns.push(FeatureColumn {
                name: ids[rep].to_string(),
                granularity: Granularity::PrototypeId,
                values: best.iter().map(|row| collapse.alias[row[b]] == rep).collect(),
            });
        }
    }

    let m = FeatureMatrix::new(record_ids, columns)?;
    match concepts {
        Some(cm) => {
            if cm.columns.iter().any(|c| c.granularity != Granularity::Cui) {
                return Err(Error::InvalidInput("concept matrix holds non-cui columns".into()));
            }
            m.hstack(cm.clone())
        }
        None => Ok(m),
    }
}
