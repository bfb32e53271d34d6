//! Bottom-up clustering under the cross-label hull non-overlap constraint.
//!
//! Every point starts as its own cluster. The engine repeatedly takes the
//! same-label pair with the closest centroids, tentatively merges it, and
//! keeps the merge only if the merged hull stays disjoint from every live
//! cluster of another label. Rejected pairs are flagged and never retried.
//!
//! Two execution strategies produce the same partition:
//!
//! * [`Variant::Basic`] checks every tentative merge.
//! * [`Variant::Fast`] merges to the end without checks, locates the first
//!   merge that introduced an overlap, rewinds to just before it by replaying
//!   the merge log, and finishes with checks enabled.
//!
//! With caching on, verdicts are reused through the monotonicity of hulls:
//! a pair that could not be merged stays unmergeable once both sides grow,
//! and two sets with disjoint hulls certify all of their subsets.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::geometry::{hulls_overlap, sq_dist, GeometryError, Tolerances};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("geometry kernel failed while checking merge of {left} and {right} against {other}: {source}")]
    Kernel {
        left: usize,
        right: usize,
        other: usize,
        #[source]
        source: GeometryError,
    },
    #[error("geometry kernel failed while comparing clusters {left} and {right}: {source}")]
    KernelPair {
        left: usize,
        right: usize,
        #[source]
        source: GeometryError,
    },
    #[error("inconsistent cluster set: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Basic,
    Fast,
}

/// Rule for choosing among candidate pairs at the same centroid distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Smallest `(id_a, id_b)` with `id_a < id_b`.
    #[default]
    Lexicographic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub tie_break: TieBreak,
    pub tolerances: Tolerances,
    /// Clusters with at most this many points are dropped after clustering;
    /// 0 keeps everything.
    pub noise_min_size: usize,
    pub caching: bool,
    pub variant: Variant,
    /// Rows were scaled to unit norm before clustering.
    pub normalize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            tie_break: TieBreak::Lexicographic,
            tolerances: Tolerances::default(),
            noise_min_size: 0,
            caching: true,
            variant: Variant::Basic,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub label: usize,
    /// Sorted ascending.
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStep {
    /// 1-based.
    pub step: usize,
    pub left: usize,
    pub right: usize,
    pub merged: usize,
}

/// Execution counters; not part of the serialized result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProbeStats {
    /// Overlap tests that reached the geometry kernel.
    pub kernel_calls: usize,
    /// Overlap tests answered from the pair cache.
    pub cache_hits: usize,
    /// Candidate pairs rejected by the superset rule without any test.
    pub blacklist_hits: usize,
    pub rollbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub config: ProbeConfig,
    pub label_names: Vec<String>,
    pub n_points: usize,
    pub clusters: BTreeMap<usize, Cluster>,
    pub merge_log: Vec<MergeStep>,
    /// Clusters dropped by noise filtering.
    pub removed: Vec<Cluster>,
    /// Ids of undersized clusters kept because they are the last of their
    /// label.
    pub flagged: Vec<usize>,
    pub stats: ProbeStats,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.values()
    }

    pub fn get(&self, id: usize) -> Option<&Cluster> {
        self.clusters.get(&id)
    }

    /// Member lists of the live clusters, sorted; convenient for comparing
    /// runs independently of cluster ids.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut parts: Vec<Vec<usize>> = self.iter().map(|c| c.members.clone()).collect();
        parts.sort();
        parts
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    /// Rebuilds the clusters a merge log leads to, starting from singletons.
    pub fn replay(
        data: &LabeledDataset,
        config: ProbeConfig,
        log: &[MergeStep],
    ) -> Result<Self, ClusterError> {
        let mut live: BTreeMap<usize, Vec<usize>> = (0..data.len()).map(|i| (i, vec![i])).collect();
        for (k, m) in log.iter().enumerate() {
            let next = data.len() + k;
            let bad =
                |why: &str| ClusterError::Inconsistent(format!("merge step {}: {why}", k + 1));
            if m.step != k + 1 || m.merged != next || m.left >= m.right {
                return Err(bad("unexpected numbering"));
            }
            let a = live
                .remove(&m.left)
                .ok_or_else(|| bad("left cluster not live"))?;
            let b = live
                .remove(&m.right)
                .ok_or_else(|| bad("right cluster not live"))?;
            if data.label(a[0]) != data.label(b[0]) {
                return Err(bad("merges clusters of different labels"));
            }
            live.insert(next, merge_sorted(&a, &b));
        }
        let clusters = live
            .into_iter()
            .map(|(id, members)| (id, make_cluster(data, id, members)))
            .collect();
        Ok(Self {
            config,
            label_names: data.label_names().to_vec(),
            n_points: data.len(),
            clusters,
            merge_log: log.to_vec(),
            removed: Vec::new(),
            flagged: Vec::new(),
            stats: ProbeStats::default(),
        })
    }
}

pub(crate) fn make_cluster(data: &LabeledDataset, id: usize, members: Vec<usize>) -> Cluster {
    Cluster {
        id,
        label: data.label(members[0]),
        centroid: mean(data, &members),
        members,
    }
}

/// Arithmetic mean of the member rows, summed in member order.
fn mean(data: &LabeledDataset, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; data.dim()];
    for &i in members {
        for (acc, v) in c.iter_mut().zip(data.point(i)) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// `small ⊆ big` for sorted index lists.
fn is_subset(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    match (small.first(), small.last(), big.first(), big.last()) {
        (Some(s0), Some(s1), Some(b0), Some(b1)) if s0 < b0 || s1 > b1 => return false,
        _ => {}
    }
    let mut j = 0;
    for &x in small {
        while j < big.len() && big[j] < x {
            j += 1;
        }
        if j == big.len() || big[j] != x {
            return false;
        }
        j += 1;
    }
    true
}

/// Runs the configured variant and applies noise filtering.
pub fn probe(data: &LabeledDataset, cfg: &ProbeConfig) -> Result<ClusterSet, ClusterError> {
    let cs = match cfg.variant {
        Variant::Basic => direct_probe(data, cfg)?,
        Variant::Fast => direct_probe_fast(data, cfg)?,
    };
    Ok(filter_noise(&cs, cfg.noise_min_size).0)
}

/// Checks every tentative merge.
pub fn direct_probe(data: &LabeledDataset, cfg: &ProbeConfig) -> Result<ClusterSet, ClusterError> {
    let mut engine = Engine::new(data, cfg);
    engine.seed_candidates();
    engine.run_checked()?;
    Ok(engine.finish(cfg))
}

/// Merges to the end unchecked, then rewinds to the first overlapping merge
/// and finishes with checks.
pub fn direct_probe_fast(
    data: &LabeledDataset,
    cfg: &ProbeConfig,
) -> Result<ClusterSet, ClusterError> {
    let mut draft = Engine::new(data, cfg);
    draft.seed_candidates();
    draft.run_unchecked();
    draft.record_verdicts = true;
    let Some(step) = draft.first_overlap_step()? else {
        return Ok(draft.finish(cfg));
    };

    let mut engine = Engine::new(data, cfg);
    engine.cache = std::mem::take(&mut draft.cache);
    engine.stats = draft.stats;
    engine.stats.rollbacks += 1;
    for m in &draft.log[..step - 1] {
        engine.commit(m.left, m.right, false);
    }
    engine.seed_candidates();
    engine.run_checked()?;
    Ok(engine.finish(cfg))
}

/// Drops clusters with at most `min_size` members, except that the largest
/// cluster of a label is never dropped; such survivors are flagged instead.
pub fn filter_noise(cs: &ClusterSet, min_size: usize) -> (ClusterSet, Vec<Cluster>) {
    let mut out = cs.clone();
    if min_size == 0 {
        return (out, Vec::new());
    }
    let mut by_label: BTreeMap<usize, Vec<&Cluster>> = BTreeMap::new();
    for c in cs.iter() {
        by_label.entry(c.label).or_default().push(c);
    }
    let mut removed = Vec::new();
    for group in by_label.values() {
        let keep_anyway = if group.iter().all(|c| c.members.len() <= min_size) {
            // largest, then smallest id
            group
                .iter()
                .max_by(|a, b| a.members.len().cmp(&b.members.len()).then(b.id.cmp(&a.id)))
                .map(|c| c.id)
        } else {
            None
        };
        for c in group {
            if c.members.len() > min_size {
                continue;
            }
            if Some(c.id) == keep_anyway {
                out.flagged.push(c.id);
            } else {
                out.clusters.remove(&c.id);
                removed.push((*c).clone());
            }
        }
    }
    out.flagged.sort_unstable();
    out.removed.extend(removed.iter().cloned());
    out.removed.sort_by_key(|c| c.id);
    (out, removed)
}

// ------------------------------------------------------------------ engine

type Members = Arc<Vec<usize>>;

struct Node {
    label: usize,
    members: Members,
    centroid: Vec<f64>,
    /// Merge step that created the node; 0 for singletons.
    born: usize,
    children: Option<(usize, usize)>,
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Engine<'a> {
    data: &'a LabeledDataset,
    tol: Tolerances,
    caching: bool,
    /// Points sharing coordinates with a point of another label; they can
    /// never join a larger cluster.
    frozen: Vec<bool>,
    nodes: Vec<Node>,
    live: std::collections::BTreeSet<usize>,
    heap: BinaryHeap<Reverse<Candidate>>,
    flagged: HashSet<(usize, usize)>,
    cache: PairCache,
    /// Store pair verdicts for later reuse. Within one checked run the live
    /// clusters form a laminar family and a stored verdict can never match a
    /// later query, so only the rewind search records.
    record_verdicts: bool,
    log: Vec<MergeStep>,
    stats: ProbeStats,
}

impl<'a> Engine<'a> {
    fn new(data: &'a LabeledDataset, cfg: &ProbeConfig) -> Self {
        let nodes = (0..data.len())
            .map(|i| Node {
                label: data.label(i),
                members: Arc::new(vec![i]),
                centroid: data.point(i).to_vec(),
                born: 0,
                children: None,
            })
            .collect();
        Self {
            data,
            tol: cfg.tolerances,
            caching: cfg.caching,
            frozen: data.conflicting_points(),
            nodes,
            live: (0..data.len()).collect(),
            heap: BinaryHeap::new(),
            flagged: HashSet::new(),
            cache: PairCache::default(),
            record_verdicts: false,
            log: Vec::new(),
            stats: ProbeStats::default(),
        }
    }

    fn mergeable(&self, id: usize) -> bool {
        let n = &self.nodes[id];
        !(n.members.len() == 1 && self.frozen[n.members[0]])
    }

    fn push_pair(&mut self, a: usize, b: usize) {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let dist = sq_dist(&self.nodes[a].centroid, &self.nodes[b].centroid);
        self.heap.push(Reverse(Candidate { dist, a, b }));
    }

    /// Fills the queue with every same-label live pair.
    fn seed_candidates(&mut self) {
        self.heap.clear();
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &id in &self.live {
            if self.mergeable(id) {
                by_label.entry(self.nodes[id].label).or_default().push(id);
            }
        }
        for ids in by_label.values() {
            for (k, &a) in ids.iter().enumerate() {
                for &b in &ids[k + 1..] {
                    if !self.flagged.contains(&(a, b)) {
                        self.push_pair(a, b);
                    }
                }
            }
        }
    }

    fn pop_candidate(&mut self) -> Option<(usize, usize)> {
        while let Some(Reverse(c)) = self.heap.pop() {
            if self.live.contains(&c.a)
                && self.live.contains(&c.b)
                && !self.flagged.contains(&(c.a, c.b))
            {
                return Some((c.a, c.b));
            }
        }
        None
    }

    fn commit(&mut self, a: usize, b: usize, enqueue: bool) -> usize {
        let members = merge_sorted(&self.nodes[a].members, &self.nodes[b].members);
        let id = self.nodes.len();
        let label = self.nodes[a].label;
        self.nodes.push(Node {
            label,
            centroid: mean(self.data, &members),
            members: Arc::new(members),
            born: self.log.len() + 1,
            children: Some((a, b)),
        });
        self.live.remove(&a);
        self.live.remove(&b);
        self.log.push(MergeStep {
            step: self.log.len() + 1,
            left: a,
            right: b,
            merged: id,
        });
        if enqueue {
            let peers: Vec<usize> = self
                .live
                .iter()
                .copied()
                .filter(|&c| self.nodes[c].label == label && self.mergeable(c))
                .collect();
            for c in peers {
                self.push_pair(c, id);
            }
        }
        self.live.insert(id);
        id
    }

    fn run_unchecked(&mut self) {
        while let Some((a, b)) = self.pop_candidate() {
            self.commit(a, b, true);
        }
    }

    fn run_checked(&mut self) -> Result<(), ClusterError> {
        while let Some((a, b)) = self.pop_candidate() {
            let (ma, mb) = (self.nodes[a].members.clone(), self.nodes[b].members.clone());
            let label = self.nodes[a].label;
            if self.caching && self.cache.blocked(label, &ma, &mb) {
                self.stats.blacklist_hits += 1;
                self.flagged.insert((a, b));
                continue;
            }
            let merged: Members = Arc::new(merge_sorted(&ma, &mb));
            if self.merged_overlaps(a, b, label, &merged)? {
                self.flagged.insert((a, b));
                if self.caching {
                    self.cache.add_unmergeable(label, ma, mb);
                }
            } else {
                self.commit(a, b, true);
            }
        }
        Ok(())
    }

    /// Tests the tentative union of `a` and `b` against live clusters of
    /// other labels in ascending id order, stopping at the first overlap.
    fn merged_overlaps(
        &mut self,
        a: usize,
        b: usize,
        label: usize,
        merged: &Members,
    ) -> Result<bool, ClusterError> {
        let others: Vec<usize> = self
            .live
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].label != label)
            .collect();
        for other in others {
            let om = self.nodes[other].members.clone();
            let ol = self.nodes[other].label;
            let overlap = self
                .sets_overlap(label, merged, ol, &om)
                .map_err(|source| ClusterError::Kernel {
                    left: a,
                    right: b,
                    other,
                    source,
                })?;
            if overlap {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Overlap verdict for two member sets, through the cache when enabled.
    fn sets_overlap(
        &mut self,
        lx: usize,
        x: &Members,
        ly: usize,
        y: &Members,
    ) -> Result<bool, GeometryError> {
        if self.caching {
            if let Some(v) = self.cache.lookup(lx, x, ly, y) {
                self.stats.cache_hits += 1;
                return Ok(v);
            }
        }
        self.stats.kernel_calls += 1;
        let overlap = hulls_overlap(&self.data.rows(x), &self.data.rows(y), &self.tol)?;
        if self.caching && self.record_verdicts {
            self.cache.record(lx, x.clone(), ly, y.clone(), overlap);
        }
        Ok(overlap)
    }

    /// Earliest merge step after which two live clusters of different labels
    /// overlap, or `None` when the final state is clean.
    ///
    /// Overlap is monotone under growth, so for each overlapping pair of
    /// final clusters the search descends the merge tree, always splitting
    /// the more recently created side: its children were the live clusters
    /// just before it was born.
    fn first_overlap_step(&mut self) -> Result<Option<usize>, ClusterError> {
        let finals: Vec<usize> = self.live.iter().copied().collect();
        let mut best: Option<usize> = None;
        for (k, &x) in finals.iter().enumerate() {
            for &y in &finals[k + 1..] {
                if self.nodes[x].label == self.nodes[y].label {
                    continue;
                }
                let mut stack = vec![(x, y)];
                while let Some((p, q)) = stack.pop() {
                    let at = self.nodes[p].born.max(self.nodes[q].born);
                    if at == 0 {
                        // singletons are never tested against each other
                        continue;
                    }
                    let (pm, qm) = (self.nodes[p].members.clone(), self.nodes[q].members.clone());
                    let (pl, ql) = (self.nodes[p].label, self.nodes[q].label);
                    let overlap = self.sets_overlap(pl, &pm, ql, &qm).map_err(|source| {
                        ClusterError::KernelPair {
                            left: p,
                            right: q,
                            source,
                        }
                    })?;
                    if !overlap {
                        continue;
                    }
                    let (np, nq) = (&self.nodes[p], &self.nodes[q]);
                    best = Some(best.map_or(at, |b| b.min(at)));
                    let (later, other) = if np.born >= nq.born { (np, q) } else { (nq, p) };
                    let (c1, c2) = later.children.expect("born > 0 implies children");
                    stack.push((c2, other));
                    stack.push((c1, other));
                }
            }
        }
        Ok(best)
    }

    fn finish(self, cfg: &ProbeConfig) -> ClusterSet {
        let clusters = self
            .live
            .iter()
            .map(|&id| {
                let n = &self.nodes[id];
                (
                    id,
                    Cluster {
                        id,
                        label: n.label,
                        members: n.members.to_vec(),
                        centroid: n.centroid.clone(),
                    },
                )
            })
            .collect();
        ClusterSet {
            config: cfg.clone(),
            label_names: self.data.label_names().to_vec(),
            n_points: self.data.len(),
            clusters,
            merge_log: self.log,
            removed: Vec::new(),
            flagged: Vec::new(),
            stats: self.stats,
        }
    }
}

/// A member set with a 64-bit membership signature for quick subset
/// rejection.
#[derive(Clone)]
struct Signed {
    members: Members,
    sig: u64,
}

impl Signed {
    fn new(members: Members) -> Self {
        let sig = signature(&members);
        Self { members, sig }
    }

    fn within(&self, other: &Signed) -> bool {
        self.sig & !other.sig == 0 && is_subset(&self.members, &other.members)
    }
}

fn signature(members: &[usize]) -> u64 {
    members.iter().fold(0, |acc, &i| acc | 1 << (i % 64))
}

/// Cached verdicts lifted along set inclusion.
#[derive(Default)]
struct PairCache {
    /// Same-label pairs whose union overlapped another label; any pair of
    /// supersets is unmergeable too.
    unmergeable: HashMap<usize, Vec<(Signed, Signed)>>,
    /// Cross-label pairs with disjoint hulls, keyed by (label_x, label_y);
    /// every pair of subsets is disjoint too.
    disjoint: HashMap<(usize, usize), Vec<(Signed, Signed)>>,
    /// Cross-label pairs with intersecting hulls; every pair of supersets
    /// intersects too.
    intersecting: HashMap<(usize, usize), Vec<(Signed, Signed)>>,
}

impl PairCache {
    fn blocked(&self, label: usize, a: &Members, b: &Members) -> bool {
        let Some(entries) = self.unmergeable.get(&label) else {
            return false;
        };
        let (a, b) = (Signed::new(a.clone()), Signed::new(b.clone()));
        entries
            .iter()
            .any(|(x, y)| (x.within(&a) && y.within(&b)) || (x.within(&b) && y.within(&a)))
    }

    fn add_unmergeable(&mut self, label: usize, a: Members, b: Members) {
        self.unmergeable
            .entry(label)
            .or_default()
            .push((Signed::new(a), Signed::new(b)));
    }

    fn lookup(&self, lx: usize, x: &Members, ly: usize, y: &Members) -> Option<bool> {
        let (key, x, y) = if lx <= ly {
            ((lx, ly), x, y)
        } else {
            ((ly, lx), y, x)
        };
        let (x, y) = (Signed::new(x.clone()), Signed::new(y.clone()));
        if let Some(entries) = self.disjoint.get(&key) {
            if entries.iter().any(|(ex, ey)| x.within(ex) && y.within(ey)) {
                return Some(false);
            }
        }
        if let Some(entries) = self.intersecting.get(&key) {
            if entries
                .iter()
                .any(|(ex, ey)| ex.within(&x) && ey.within(&y))
            {
                return Some(true);
            }
        }
        None
    }

    fn record(&mut self, lx: usize, x: Members, ly: usize, y: Members, overlap: bool) {
        let (key, x, y) = if lx <= ly {
            ((lx, ly), x, y)
        } else {
            ((ly, lx), y, x)
        };
        let table = if overlap {
            &mut self.intersecting
        } else {
            &mut self.disjoint
        };
        table
            .entry(key)
            .or_default()
            .push((Signed::new(x), Signed::new(y)));
    }
}
