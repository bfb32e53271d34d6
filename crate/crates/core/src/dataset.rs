//! Labeled point sets: TSV ingestion, label coding and duplicate validation.
//!
//! The on-disk format is headerless TSV, one point per line:
//!
//! ```text
//! label<TAB>f1 f2 ... fdim
//! ```
//!
//! Labels are coded by order of first appearance. Blank lines are skipped and
//! both LF and CRLF line endings are accepted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("input contains no data lines")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} coordinates, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Immutable matrix of labeled points.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    coords: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    label_names: Vec<String>,
    ids: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset from rows and label strings, coding labels by first
    /// appearance.
    pub fn from_rows<S: AsRef<str>>(rows: &[Vec<f64>], labels: &[S]) -> Result<Self, DatasetError> {
        if rows.len() != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let dim = rows[0].len();
        let mut coords = Vec::with_capacity(rows.len() * dim);
        let mut coder = LabelCoder::default();
        let mut codes = Vec::with_capacity(rows.len());
        for (i, (row, label)) in rows.iter().zip(labels).enumerate() {
            if row.len() != dim {
                return Err(DatasetError::Ragged {
                    line: i + 1,
                    expected: dim,
                    found: row.len(),
                });
            }
            coords.extend_from_slice(row);
            codes.push(coder.code(label.as_ref()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::from_parts(coords, dim, codes, coder.names, ids)
    }

    /// Assembles a dataset from already-coded parts, checking every invariant.
    pub fn from_parts(
        coords: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        label_names: Vec<String>,
        ids: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::Invalid("dimension must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(DatasetError::Empty);
        }
        if coords.len() != labels.len() * dim {
            return Err(DatasetError::Invalid(format!(
                "{} coordinates do not form {} rows of dimension {dim}",
                coords.len(),
                labels.len()
            )));
        }
        if ids.len() != labels.len() {
            return Err(DatasetError::Invalid("one id per point required".into()));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(DatasetError::Invalid(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        let mut seen = vec![false; label_names.len()];
        for &l in &labels {
            match seen.get_mut(l) {
                Some(s) => *s = true,
                None => {
                    return Err(DatasetError::Invalid(format!(
                        "label id {l} outside vocabulary of size {}",
                        label_names.len()
                    )))
                }
            }
        }
        if let Some(unused) = seen.iter().position(|s| !s) {
            return Err(DatasetError::Invalid(format!(
                "label {:?} has no points",
                label_names[unused]
            )));
        }
        Ok(Self {
            coords,
            dim,
            labels,
            label_names,
            ids,
        })
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::load_tsv(file)
    }

    /// Parses the TSV format described in the module docs.
    pub fn load_tsv<R: Read>(mut reader: R) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let text = String::from_utf8(bytes).map_err(|_| DatasetError::Utf8)?;

        let mut coords = Vec::new();
        let mut dim = None;
        let mut coder = LabelCoder::default();
        let mut labels = Vec::new();

        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let (label, rest) = line.split_once('\t').ok_or_else(|| DatasetError::Parse {
                line: line_no,
                message: "missing TAB between label and coordinates".into(),
            })?;
            if label.is_empty() {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: "empty label".into(),
                });
            }
            let before = coords.len();
            for tok in rest.split_ascii_whitespace() {
                let v: f64 = tok.parse().map_err(|_| DatasetError::Parse {
                    line: line_no,
                    message: format!("cannot parse coordinate {tok:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        line: line_no,
                        message: format!("non-finite coordinate {tok:?}"),
                    });
                }
                coords.push(v);
            }
            let found = coords.len() - before;
            match dim {
                None if found == 0 => {
                    return Err(DatasetError::Parse {
                        line: line_no,
                        message: "no coordinates".into(),
                    })
                }
                None => dim = Some(found),
                Some(expected) if expected != found => {
                    return Err(DatasetError::Ragged {
                        line: line_no,
                        expected,
                        found,
                    })
                }
                Some(_) => {}
            }
            labels.push(coder.code(label));
        }

        let dim = dim.ok_or(DatasetError::Empty)?;
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::from_parts(coords, dim, labels, coder.names, ids)
    }

    /// Serializes back to the TSV format. Floats use the shortest exact
    /// representation, so reloading yields identical coordinates.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&self.label_names[self.labels[i]]);
            out.push('\t');
            for (j, v) in self.point(i).iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// Gathers row slices for a set of point indices.
    pub fn rows(&self, indices: &[usize]) -> Vec<&[f64]> {
        indices.iter().map(|&i| self.point(i)).collect()
    }

    /// Returns a copy with every row scaled to unit Euclidean norm. Zero rows
    /// are left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut coords = self.coords.clone();
        for row in coords.chunks_exact_mut(self.dim) {
            normalize_in_place(row);
        }
        Self {
            coords,
            ..self.clone()
        }
    }

    /// Re-expresses this dataset's labels in the vocabulary of `reference`.
    /// Fails with the first label name that `reference` does not know.
    pub fn recode_to(&self, reference: &LabeledDataset) -> Result<Vec<usize>, String> {
        let map: HashMap<&str, usize> = reference
            .label_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        self.labels
            .iter()
            .map(|&l| {
                let name = &self.label_names[l];
                map.get(name.as_str()).copied().ok_or_else(|| name.clone())
            })
            .collect()
    }

    /// Reports exact-duplicate coordinates, split by label agreement.
    pub fn validate(&self) -> ValidationReport {
        let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for i in 0..self.len() {
            groups
                .entry(coordinate_key(self.point(i)))
                .or_default()
                .push(i);
        }
        let mut conflicts = Vec::new();
        let mut same = Vec::new();
        for members in groups.values().filter(|m| m.len() > 1) {
            for (k, &i) in members.iter().enumerate() {
                for &j in &members[k + 1..] {
                    if self.labels[i] == self.labels[j] {
                        same.push((i, j));
                    } else {
                        conflicts.push((i, j));
                    }
                }
            }
        }
        conflicts.sort_unstable();
        same.sort_unstable();
        let mut counts = vec![0; self.n_labels()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        ValidationReport {
            n_points: self.len(),
            dim: self.dim,
            label_counts: self.label_names.iter().cloned().zip(counts).collect(),
            duplicate_conflicts: conflicts,
            duplicate_same_label: same,
        }
    }

    /// Points that share exact coordinates with a point of another label.
    pub fn conflicting_points(&self) -> Vec<bool> {
        let mut flags = vec![false; self.len()];
        for (i, j) in self.validate().duplicate_conflicts {
            flags[i] = true;
            flags[j] = true;
        }
        flags
    }
}

/// Bitwise key for exact coordinate equality; `-0.0` and `0.0` compare equal.
fn coordinate_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

pub(crate) fn normalize_in_place(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

#[derive(Default)]
struct LabelCoder {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelCoder {
    fn code(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_points: usize,
    pub dim: usize,
    pub label_counts: Vec<(String, usize)>,
    /// Identical coordinates, different labels.
    pub duplicate_conflicts: Vec<(usize, usize)>,
    pub duplicate_same_label: Vec<(usize, usize)>,
}
