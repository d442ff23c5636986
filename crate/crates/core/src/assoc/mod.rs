//! Phenome-wide association scan: feature sets at four label
//! granularities, Fisher tests with one BH family, odds-ratio comparison
//! across granularities, and the mixed-vs-uniform prototype analysis.

mod compare;
mod features;
mod groups;
mod scan;

pub use compare::{granularity_comparison, or_magnitude, Comparison, GranularityComparison, OrDistribution, PairwiseComparison};
pub use features::{build_feature_sets, prototype_class_name, FeatureColumn, FeatureMatrix, Granularity};
pub use groups::{
    class_representatives, classify_significance_groups, intra_class_distance, mixed_uniform_analysis,
    ClassSignificanceGroup, GroupMeasure, GroupMember, MixedUniformAnalysis, SignificanceRule, SignificanceStatus, StatusSummary,
};
pub use scan::{
    phewas_scan, read_results_csv, write_results_csv, AssociationResult, ScanOutput, SkippedColumn,
    DEFAULT_Q_THRESHOLD,
};
