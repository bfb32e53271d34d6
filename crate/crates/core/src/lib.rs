//! Geometric probing of labeled representation spaces.
//!
//! A labeled dataset is partitioned bottom-up into label-pure clusters whose
//! convex hulls are pairwise disjoint across labels. The resulting cluster
//! structure yields a linearity indicator, inter-cluster hull distances, a
//! nearest-cluster predictor and related diagnostics.

pub mod analysis;
pub mod clustering;
pub mod dataset;
pub mod geometry;
pub mod json;

pub use analysis::{
    difficult_examples, distance_report, error_distribution, intra_accuracy, knn_accuracy,
    knn_predict, linearity_report, predict, AnalysisError, DistanceBin, DistanceReport,
    ErrorDistribution, LinearityReport, PredictionOutcome, Predictor,
};
pub use clustering::{
    direct_probe, direct_probe_fast, filter_noise, probe, Cluster, ClusterError, ClusterSet,
    MergeStep, ProbeConfig, ProbeStats, TieBreak, Variant,
};
pub use dataset::{DatasetError, LabeledDataset, ValidationReport};
pub use geometry::{
    hull_distance, hulls_overlap, point_hull_distance, separation_feasible, GeometryError,
    Hyperplane, SeparationResult, Tolerances, Witness,
};
pub use json::{cluster_set_from_json, cluster_set_to_json, LoadError};
