//! Canonical JSON: sorted keys, floats rounded to 12 significant digits.
//!
//! Identical values always serialize to identical bytes, which is what makes
//! repeated runs diffable.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};
use thiserror::Error;

use crate::clustering::{
    make_cluster, Cluster, ClusterSet, MergeStep, ProbeConfig, ProbeStats, TieBreak,
};
use crate::dataset::LabeledDataset;
use crate::geometry::Tolerances;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed cluster document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cluster document does not match the dataset: {0}")]
    Inconsistent(String),
}

/// Rounds `x` to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Applies [`round12`] to every float in `v`; integers pass through.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let x = n.as_f64().unwrap_or(0.0);
            Number::from_f64(round12(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        // serde_json's default map is ordered, so keys come out sorted
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        other => other,
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    canonicalize(serde_json::to_value(v).expect("report types always serialize"))
}

/// Pretty-printed canonical form with a trailing newline.
pub fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(v)).expect("values always serialize");
    s.push('\n');
    s
}

/// Single-line canonical form, for JSON-lines streams.
pub fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(&to_value(v)).expect("values always serialize")
}

/// Float formatting used in TSV output.
pub fn fmt_float(x: f64) -> String {
    format!("{}", round12(x))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterDoc {
    id: usize,
    label: usize,
    members: Vec<usize>,
}

impl From<&Cluster> for ClusterDoc {
    fn from(c: &Cluster) -> Self {
        Self {
            id: c.id,
            label: c.label,
            members: c.members.clone(),
        }
    }
}

// Variant and caching are deliberately absent: they never change the
// result, and leaving them out keeps documents from equivalent runs equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDoc {
    tie_break: TieBreak,
    tolerances: Tolerances,
    noise_min_size: usize,
    normalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterSetDoc {
    config: ConfigDoc,
    label_names: Vec<String>,
    n_points: usize,
    clusters: Vec<ClusterDoc>,
    merge_log: Vec<MergeStep>,
    removed: Vec<ClusterDoc>,
    flagged: Vec<usize>,
}

pub fn cluster_set_to_json(cs: &ClusterSet) -> String {
    let doc = ClusterSetDoc {
        config: ConfigDoc {
            tie_break: cs.config.tie_break,
            tolerances: cs.config.tolerances,
            noise_min_size: cs.config.noise_min_size,
            normalize: cs.config.normalize,
        },
        label_names: cs.label_names.clone(),
        n_points: cs.n_points,
        clusters: cs.iter().map(ClusterDoc::from).collect(),
        merge_log: cs.merge_log.clone(),
        removed: cs.removed.iter().map(ClusterDoc::from).collect(),
        flagged: cs.flagged.clone(),
    };
    to_pretty(&doc)
}

/// Parses a cluster document and checks it against `data`, which must be
/// the training set it was computed from (already normalized if the
/// document says so). Centroids are recomputed from `data`.
pub fn cluster_set_from_json(text: &str, data: &LabeledDataset) -> Result<ClusterSet, LoadError> {
    let doc: ClusterSetDoc = serde_json::from_str(text)?;

    if doc.n_points != data.len() {
        return bad(format!(
            "document covers {} points, dataset has {}",
            doc.n_points,
            data.len()
        ));
    }
    if doc.label_names != data.label_names() {
        return bad(format!(
            "label vocabulary {:?} differs from dataset's {:?}",
            doc.label_names,
            data.label_names()
        ));
    }
    if doc.clusters.is_empty() {
        return bad("no clusters".into());
    }

    let mut seen = vec![false; data.len()];
    let mut ids = std::collections::BTreeSet::new();
    let mut load = |c: &ClusterDoc| -> Result<Cluster, LoadError> {
        if !ids.insert(c.id) {
            return bad(format!("cluster id {} appears twice", c.id));
        }
        if c.members.is_empty() {
            return bad(format!("cluster {} has no members", c.id));
        }
        if !c.members.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!(
                "cluster {} members are not strictly ascending",
                c.id
            ));
        }
        if c.label >= data.n_labels() {
            return bad(format!(
                "cluster {} has label id {} out of range",
                c.id, c.label
            ));
        }
        for &m in &c.members {
            if m >= data.len() {
                return bad(format!(
                    "cluster {} member {} out of range (n = {})",
                    c.id,
                    m,
                    data.len()
                ));
            }
            if seen[m] {
                return bad(format!("point {m} belongs to more than one cluster"));
            }
            seen[m] = true;
            if data.label(m) != c.label {
                return bad(format!(
                    "cluster {} member {} has a different label",
                    c.id, m
                ));
            }
        }
        Ok(make_cluster(data, c.id, c.members.clone()))
    };
    let clusters = doc
        .clusters
        .iter()
        .map(|c| load(c).map(|cl| (cl.id, cl)))
        .collect::<Result<_, _>>()?;
    let removed = doc
        .removed
        .iter()
        .map(&mut load)
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = seen.iter().position(|s| !s) {
        return bad(format!("point {m} is not assigned to any cluster"));
    }
    let cs = ClusterSet {
        config: ProbeConfig {
            tie_break: doc.config.tie_break,
            tolerances: doc.config.tolerances,
            noise_min_size: doc.config.noise_min_size,
            normalize: doc.config.normalize,
            ..ProbeConfig::default()
        },
        label_names: doc.label_names,
        n_points: doc.n_points,
        clusters,
        merge_log: doc.merge_log,
        removed,
        flagged: doc.flagged,
        stats: ProbeStats::default(),
    };
    if let Some(f) = cs.flagged.iter().find(|f| cs.get(**f).is_none()) {
        return bad(format!("flagged cluster {f} is not live"));
    }
    Ok(cs)
}

fn bad<T>(msg: String) -> Result<T, LoadError> {
    Err(LoadError::Inconsistent(msg))
}
