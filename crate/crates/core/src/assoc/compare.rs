use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AssociationResult, Granularity};
use crate::stats::{mann_whitney_u, median, TestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrDistribution {
    pub granularity: Granularity,
    /// Sorted ascending.
    pub odds_ratios: Vec<f64>,
    pub median: f64,
    /// max(OR, 1/OR), sorted ascending: strength regardless of direction.
    pub magnitudes: Vec<f64>,
    pub magnitude_median: f64,
}

/// max(OR, 1/OR); infinite for OR of 0 or ∞.
pub fn or_magnitude(or: f64) -> f64 {
    if or >= 1.0 {
        or
    } else {
        1.0 / or
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: Granularity,
    pub b: Granularity,
    pub test: TestResult,
    /// Either side holds a single odds ratio; the test says little.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Comparison {
    pub distributions: Vec<OrDistribution>,
    pub pairwise: Vec<PairwiseComparison>,
    /// Granularities left out, with the reason.
    pub excluded: Vec<(Granularity, String)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GranularityComparison {
    pub overall: Comparison,
    /// Keyed by phecode category, when categories are supplied.
    pub by_category: BTreeMap<String, Comparison>,
}

fn compare<'a>(results: impl Iterator<Item = &'a AssociationResult>, include_nonsignificant: bool) -> Comparison {
    let mut by: BTreeMap<Granularity, Vec<f64>> = BTreeMap::new();
    for r in results {
        if r.significant || include_nonsignificant {
            by.entry(r.granularity).or_default().push(r.odds_ratio);
        }
    }
    let mut out = Comparison::default();
    for g in Granularity::ALL {
        match by.remove(&g) {
            Some(mut v) if !v.is_empty() => {
                v.sort_by(f64::total_cmp);
                let mut m: Vec<f64> = v.iter().map(|&o| or_magnitude(o)).collect();
                m.sort_by(f64::total_cmp);
                out.distributions.push(OrDistribution {
                    granularity: g,
                    median: median(&v).expect("non-empty"),
                    odds_ratios: v,
                    magnitude_median: median(&m).expect("non-empty"),
                    magnitudes: m,
                });
            }
            _ => out.excluded.push((
                g,
                if include_nonsignificant { "no associations" } else { "no significant associations" }.to_string(),
            )),
        }
    }
    for i in 0..out.distributions.len() {
        for j in i + 1..out.distributions.len() {
            let (x, y) = (&out.distributions[i], &out.distributions[j]);
            let test = mann_whitney_u(&x.magnitudes, &y.magnitudes).expect("non-empty samples");
            out.pairwise.push(PairwiseComparison {
                a: x.granularity,
                b: y.granularity,
                test,
                degenerate: x.odds_ratios.len() < 2 || y.odds_ratios.len() < 2,
            });
        }
    }
    out
}

/// Odds-ratio distributions per granularity (significant associations
/// unless `include_nonsignificant`) and pairwise Mann–Whitney tests on OR
/// magnitude, overall and optionally per phecode category.
pub fn granularity_comparison(
    results: &[AssociationResult],
    include_nonsignificant: bool,
    categories: Option<&BTreeMap<String, String>>,
) -> GranularityComparison {
    let overall = compare(results.iter(), include_nonsignificant);
    let mut by_category = BTreeMap::new();
    if let Some(cats) = categories {
        let mut names: Vec<&String> = cats.values().collect();
        names.sort();
        names.dedup();
        for cat in names {
            let subset = results
                .iter()
                .filter(|r| cats.get(&r.phecode).is_some_and(|c| c == cat));
            by_category.insert(cat.clone(), compare(subset, include_nonsignificant));
        }
    }
    GranularityComparison { overall, by_category }
}
