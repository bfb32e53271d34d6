//! Diagnostics derived from a finished cluster set.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterSet;
use crate::dataset::LabeledDataset;
use crate::geometry::{hull_distance, point_hull_distance, sq_dist, GeometryError, Tolerances};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: clusters live in {expected} dimensions, point has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("label {0:?} does not occur in the training data")]
    UnknownLabel(String),
    #[error("no pair of clusters with different labels")]
    NoCrossLabelPairs,
    #[error("outcome for point {0:?} carries no gold label")]
    MissingGold(String),
    #[error("k must lie in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error(transparent)]
    Kernel(#[from] GeometryError),
}

// --------------------------------------------------------------- linearity

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub n_clusters: usize,
    pub n_labels: usize,
    pub linearly_separable: bool,
    pub clusters_per_label: Vec<(String, usize)>,
}

impl fmt::Display for LinearityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clusters={} labels={} linear={}",
            self.n_clusters,
            self.n_labels,
            if self.linearly_separable { "yes" } else { "no" }
        )
    }
}

/// One cluster per label means a single linear separator per label pair
/// exists.
pub fn linearity_report(cs: &ClusterSet) -> LinearityReport {
    let mut per_label = vec![0; cs.n_labels()];
    for c in cs.iter() {
        per_label[c.label] += 1;
    }
    LinearityReport {
        n_clusters: cs.len(),
        n_labels: cs.n_labels(),
        linearly_separable: cs.len() == cs.n_labels(),
        clusters_per_label: cs.label_names.iter().cloned().zip(per_label).collect(),
    }
}

// --------------------------------------------------------------- distances

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceBin {
    Small,
    Medium,
    Large,
}

impl DistanceBin {
    pub const ALL: [DistanceBin; 3] = [DistanceBin::Small, DistanceBin::Medium, DistanceBin::Large];

    pub fn name(self) -> &'static str {
        match self {
            DistanceBin::Small => "small",
            DistanceBin::Medium => "medium",
            DistanceBin::Large => "large",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Edges splitting `[min, max]` of `values` into three equal-width bins.
pub fn bin_edges(values: impl IntoIterator<Item = f64>) -> [f64; 2] {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    // a range that is only rounding noise would split equal values
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return [hi, hi];
    }
    let width = (hi - lo) / 3.0;
    [lo + width, lo + 2.0 * width]
}

/// Upper edges are inclusive: `d ≤ e1` is small, `e1 < d ≤ e2` medium.
pub fn assign_bin(d: f64, edges: [f64; 2]) -> DistanceBin {
    if d <= edges[0] {
        DistanceBin::Small
    } else if d <= edges[1] {
        DistanceBin::Medium
    } else {
        DistanceBin::Large
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub label_a: usize,
    pub label_b: usize,
    pub distance: f64,
    pub bin: DistanceBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub pairs: Vec<PairDistance>,
    pub min_cross_label_distance: f64,
    pub bin_edges: [f64; 2],
}

impl DistanceReport {
    /// Builds the report from `(cluster_a, cluster_b, label_a, label_b,
    /// distance)` rows, assigning bins.
    pub fn from_pairs(rows: Vec<(usize, usize, usize, usize, f64)>) -> Result<Self, AnalysisError> {
        if rows.is_empty() {
            return Err(AnalysisError::NoCrossLabelPairs);
        }
        let edges = bin_edges(rows.iter().map(|r| r.4));
        let min = rows.iter().map(|r| r.4).fold(f64::INFINITY, f64::min);
        let pairs = rows
            .into_iter()
            .map(
                |(cluster_a, cluster_b, label_a, label_b, distance)| PairDistance {
                    cluster_a,
                    cluster_b,
                    label_a,
                    label_b,
                    distance,
                    bin: assign_bin(distance, edges),
                },
            )
            .collect();
        Ok(Self {
            pairs,
            min_cross_label_distance: min,
            bin_edges: edges,
        })
    }

    pub fn bin_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for p in &self.pairs {
            counts[p.bin.index()] += 1;
        }
        counts
    }

    /// Label-pair distances: the minimum over all cluster pairs carrying
    /// the two labels. Keys are `(smaller, larger)` label ids.
    pub fn label_pair_distances(&self) -> BTreeMap<(usize, usize), f64> {
        let mut out: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for p in &self.pairs {
            let key = (p.label_a.min(p.label_b), p.label_a.max(p.label_b));
            out.entry(key)
                .and_modify(|d| *d = d.min(p.distance))
                .or_insert(p.distance);
        }
        out
    }
}

/// Hull distance for every pair of live clusters with different labels, in
/// ascending id order.
pub fn distance_report(
    cs: &ClusterSet,
    data: &LabeledDataset,
) -> Result<DistanceReport, AnalysisError> {
    let tol = cs.config.tolerances;
    let ids: Vec<&crate::clustering::Cluster> = cs.iter().collect();
    let jobs: Vec<(usize, usize)> = (0..ids.len())
        .flat_map(|i| (i + 1..ids.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| ids[i].label != ids[j].label)
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (ids[i], ids[j]);
            let r = hull_distance(&data.rows(&a.members), &data.rows(&b.members), &tol)?;
            Ok((a.id, b.id, a.label, b.label, r.distance))
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    DistanceReport::from_pairs(rows)
}

// ------------------------------------------------------ error distribution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    pub bin: DistanceBin,
    pub errors: usize,
    /// Share of all errors, in percent.
    pub percent: f64,
    /// Label pairs falling in this bin.
    pub pairs: usize,
}

impl ErrorBin {
    /// `97.17% (555)`; exact zero prints as `0%`.
    pub fn cell(&self) -> String {
        let pct = if self.percent == 0.0 {
            "0".to_string()
        } else {
            format!("{:.2}", self.percent)
        };
        format!("{pct}% ({})", self.pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub bins: Vec<ErrorBin>,
    pub total_errors: usize,
    pub bin_edges: [f64; 2],
}

impl fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self.bins.iter().map(ErrorBin::cell).collect();
        write!(f, "{}", cells.join("\t"))
    }
}

/// Attributes each misclassification to the distance bin of its
/// (gold, predicted) label pair. Bins are equal-width over the label-pair
/// distances.
pub fn error_distribution(
    dr: &DistanceReport,
    outcomes: &[PredictionOutcome],
) -> Result<ErrorDistribution, AnalysisError> {
    let label_pairs = dr.label_pair_distances();
    if label_pairs.is_empty() {
        return Err(AnalysisError::NoCrossLabelPairs);
    }
    let edges = bin_edges(label_pairs.values().copied());
    let mut pair_counts = [0; 3];
    for &d in label_pairs.values() {
        pair_counts[assign_bin(d, edges).index()] += 1;
    }
    let known = |l: usize| label_pairs.keys().any(|&(a, b)| a == l || b == l);
    let mut errors = [0; 3];
    for o in outcomes {
        let gold = o
            .gold_label
            .ok_or_else(|| AnalysisError::MissingGold(o.point_id.clone()))?;
        for l in [gold, o.predicted_label] {
            if !known(l) {
                return Err(AnalysisError::UnknownLabel(format!("#{l}")));
            }
        }
        if gold == o.predicted_label {
            continue;
        }
        let key = (gold.min(o.predicted_label), gold.max(o.predicted_label));
        let d = *label_pairs
            .get(&key)
            .ok_or_else(|| AnalysisError::UnknownLabel(format!("#{}/#{}", key.0, key.1)))?;
        errors[assign_bin(d, edges).index()] += 1;
    }
    let total: usize = errors.iter().sum();
    let bins = DistanceBin::ALL
        .iter()
        .map(|&bin| {
            let e = errors[bin.index()];
            ErrorBin {
                bin,
                errors: e,
                percent: if total == 0 {
                    0.0
                } else {
                    100.0 * e as f64 / total as f64
                },
                pairs: pair_counts[bin.index()],
            }
        })
        .collect();
    Ok(ErrorDistribution {
        bins,
        total_errors: total,
        bin_edges: edges,
    })
}

// -------------------------------------------------------------- prediction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub point_id: String,
    /// `(cluster id, point-to-hull distance)` for every live cluster, in id
    /// order.
    pub distances: Vec<(usize, f64)>,
    pub nearest_cluster: usize,
    pub predicted_label: usize,
    /// Per-label probabilities, indexed by label id.
    pub scores: Option<Vec<f64>>,
    pub gold_label: Option<usize>,
}

impl PredictionOutcome {
    pub fn correct(&self) -> Option<bool> {
        self.gold_label.map(|g| g == self.predicted_label)
    }

    /// Smallest distance to a cluster of `label`.
    pub fn label_distance(&self, cs: &ClusterSet, label: usize) -> f64 {
        self.distances
            .iter()
            .filter(|(id, _)| cs.get(*id).is_some_and(|c| c.label == label))
            .map(|&(_, d)| d)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Softmax over negative per-label distances (temperature 1). Labels with
/// no cluster get probability 0.
pub fn softmax_scores(label_distances: &[f64]) -> Vec<f64> {
    let best = label_distances
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = label_distances.iter().map(|d| (best - d).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Nearest-cluster predictor over a finished cluster set.
pub struct Predictor<'a> {
    cs: &'a ClusterSet,
    members: Vec<(usize, usize, Vec<&'a [f64]>)>,
    dim: usize,
    tol: Tolerances,
}

impl<'a> Predictor<'a> {
    pub fn new(cs: &'a ClusterSet, train: &'a LabeledDataset) -> Self {
        let members = cs
            .iter()
            .map(|c| (c.id, c.label, train.rows(&c.members)))
            .collect();
        Self {
            cs,
            members,
            dim: train.dim(),
            tol: cs.config.tolerances,
        }
    }

    pub fn predict(
        &self,
        point_id: &str,
        x: &[f64],
        with_scores: bool,
    ) -> Result<PredictionOutcome, AnalysisError> {
        if x.len() != self.dim {
            return Err(AnalysisError::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut distances = Vec::with_capacity(self.members.len());
        let mut nearest: Option<(usize, usize, f64)> = None;
        let mut per_label = vec![f64::INFINITY; self.cs.n_labels()];
        for (id, label, rows) in &self.members {
            let d = point_hull_distance(x, rows, &self.tol)?.distance;
            distances.push((*id, d));
            per_label[*label] = per_label[*label].min(d);
            // ids ascend, so strict < keeps the smallest id on ties
            if nearest.is_none_or(|(_, _, best)| d < best) {
                nearest = Some((*id, *label, d));
            }
        }
        let (nearest_cluster, predicted_label, _) = nearest.expect("cluster set is never empty");
        Ok(PredictionOutcome {
            point_id: point_id.to_string(),
            distances,
            nearest_cluster,
            predicted_label,
            scores: with_scores.then(|| softmax_scores(&per_label)),
            gold_label: None,
        })
    }

    /// Predicts every test point; gold labels are mapped into the training
    /// vocabulary by name.
    pub fn predict_all(
        &self,
        train: &LabeledDataset,
        test: &LabeledDataset,
        with_scores: bool,
    ) -> Result<Vec<PredictionOutcome>, AnalysisError> {
        let gold = test.recode_to(train).map_err(AnalysisError::UnknownLabel)?;
        if test.dim() != self.dim {
            return Err(AnalysisError::DimMismatch {
                expected: self.dim,
                found: test.dim(),
            });
        }
        (0..test.len())
            .into_par_iter()
            .map(|i| {
                let mut o = self.predict(test.id(i), test.point(i), with_scores)?;
                o.gold_label = Some(gold[i]);
                Ok(o)
            })
            .collect()
    }
}

pub fn predict(
    cs: &ClusterSet,
    train: &LabeledDataset,
    x: &[f64],
    with_scores: bool,
) -> Result<PredictionOutcome, AnalysisError> {
    Predictor::new(cs, train).predict("", x, with_scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraAccuracy {
    pub accuracy: f64,
    pub outcomes: Vec<PredictionOutcome>,
}

/// Accuracy of the nearest-cluster predictor on `test`.
pub fn intra_accuracy(
    cs: &ClusterSet,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<IntraAccuracy, AnalysisError> {
    let outcomes = Predictor::new(cs, train).predict_all(train, test, false)?;
    Ok(IntraAccuracy {
        accuracy: accuracy(&outcomes),
        outcomes,
    })
}

pub fn accuracy(outcomes: &[PredictionOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.correct() == Some(true))
        .count();
    hits as f64 / outcomes.len() as f64
}

// --------------------------------------------------------------------- kNN

/// Majority label among the `k` nearest training points. Distance ties go
/// to the smaller point index, vote ties to the smaller label id.
pub fn knn_predict(train: &LabeledDataset, x: &[f64], k: usize) -> Result<usize, AnalysisError> {
    if x.len() != train.dim() {
        return Err(AnalysisError::DimMismatch {
            expected: train.dim(),
            found: x.len(),
        });
    }
    if k == 0 || k > train.len() {
        return Err(AnalysisError::InvalidK {
            k,
            max: train.len(),
        });
    }
    let mut order: Vec<(f64, usize)> = train.points().map(|p| sq_dist(p, x)).zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; train.n_labels()];
    for &(_, i) in &order[..k] {
        votes[train.label(i)] += 1;
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    Ok(votes.iter().position(|&v| v == best).unwrap_or(0))
}

pub fn knn_accuracy(
    train: &LabeledDataset,
    test: &LabeledDataset,
    k: usize,
) -> Result<f64, AnalysisError> {
    let gold = test.recode_to(train).map_err(AnalysisError::UnknownLabel)?;
    let hits = (0..test.len())
        .into_par_iter()
        .map(|i| knn_predict(train, test.point(i), k).map(|l| (l == gold[i]) as usize))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}

// ------------------------------------------------------ difficult examples

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultExample {
    pub point_id: String,
    pub index: usize,
    pub gold: usize,
    pub predicted: usize,
    pub gold_distance: f64,
    pub nearest_distance: f64,
    /// `gold_distance - nearest_distance`.
    pub gap: f64,
}

/// Mispredicted outcomes ranked by how much farther the gold label is than
/// the predicted one; ties keep input order.
pub fn rank_difficult(
    cs: &ClusterSet,
    outcomes: &[PredictionOutcome],
    top_n: usize,
) -> Vec<DifficultExample> {
    let mut out: Vec<DifficultExample> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(index, o)| {
            let gold = o.gold_label?;
            if gold == o.predicted_label {
                return None;
            }
            let gold_distance = o.label_distance(cs, gold);
            let nearest_distance = o.label_distance(cs, o.predicted_label);
            Some(DifficultExample {
                point_id: o.point_id.clone(),
                index,
                gold,
                predicted: o.predicted_label,
                gold_distance,
                nearest_distance,
                gap: gold_distance - nearest_distance,
            })
        })
        .collect();
    out.sort_by(|a, b| b.gap.total_cmp(&a.gap).then(a.index.cmp(&b.index)));
    out.truncate(top_n);
    out
}

pub fn difficult_examples(
    cs: &ClusterSet,
    train: &LabeledDataset,
    test: &LabeledDataset,
    top_n: usize,
) -> Result<Vec<DifficultExample>, AnalysisError> {
    let outcomes = Predictor::new(cs, train).predict_all(train, test, false)?;
    Ok(rank_difficult(cs, &outcomes, top_n))
}
