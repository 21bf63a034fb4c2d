//! Single-pass BIRCH clustering over a clustering-feature (CF) tree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Clustering feature `(N, LS, SS)` of a subcluster.
///
/// The sum of squared deviations from the centroid is carried alongside the
/// raw sums; it merges exactly like them and gives a radius free of the
/// cancellation in `SS/N − ‖LS/N‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfEntry {
    pub n: usize,
    pub linear_sum: Vec<f64>,
    pub square_sum: f64,
    deviation_sum: f64,
}

impl CfEntry {
    pub fn from_point(x: &[f64]) -> Self {
        CfEntry {
            n: 1,
            linear_sum: x.to_vec(),
            square_sum: x.iter().map(|v| v * v).sum(),
            deviation_sum: 0.0,
        }
    }

    pub fn merge(&self, other: &CfEntry) -> CfEntry {
        let n = self.n + other.n;
        let gap = squared_distance(&self.centroid(), &other.centroid());
        CfEntry {
            n,
            linear_sum: self
                .linear_sum
                .iter()
                .zip(&other.linear_sum)
                .map(|(a, b)| a + b)
                .collect(),
            square_sum: self.square_sum + other.square_sum,
            deviation_sum: self.deviation_sum
                + other.deviation_sum
                + gap * (self.n * other.n) as f64 / n as f64,
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.linear_sum.iter().map(|v| v / self.n as f64).collect()
    }

    /// Root-mean-square distance of the members to the centroid.
    pub fn radius(&self) -> f64 {
        (self.deviation_sum.max(0.0) / self.n as f64).sqrt()
    }

    /// `SS/N − ‖LS/N‖²`, clamped at zero.
    pub fn radius_squared_from_sums(&self) -> f64 {
        let c = self.centroid();
        let cc: f64 = c.iter().map(|v| v * v).sum();
        (self.square_sum / self.n as f64 - cc).max(0.0)
    }
}

#[derive(Clone, Debug)]
struct Entry {
    cf: CfEntry,
    child: Option<usize>,
    /// Point ids absorbed by a leaf entry.
    members: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Node {
    leaf: bool,
    entries: Vec<Entry>,
}

/// A leaf subcluster and the ids absorbed into it.
#[derive(Clone, Debug)]
pub struct Subcluster {
    pub cf: CfEntry,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CfTree {
    threshold: f64,
    branching: usize,
    nodes: Vec<Node>,
    root: usize,
}

impl CfTree {
    pub fn new(threshold: f64, branching: usize) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::config(format!("BIRCH threshold must be positive, got {threshold}")));
        }
        if branching < 2 {
            return Err(Error::config(format!("BIRCH branching factor must be >= 2, got {branching}")));
        }
        Ok(CfTree {
            threshold,
            branching,
            nodes: vec![Node {
                leaf: true,
                entries: Vec::new(),
            }],
            root: 0,
        })
    }

    pub fn insert(&mut self, id: usize, x: &[f64]) {
        let point = CfEntry::from_point(x);
        if let Some(sibling) = self.insert_into(self.root, id, &point) {
            let old = self.root;
            let old_entry = Entry {
                cf: self.summary(old),
                child: Some(old),
                members: Vec::new(),
            };
            self.nodes.push(Node {
                leaf: false,
                entries: vec![old_entry, sibling],
            });
            self.root = self.nodes.len() - 1;
        }
    }

    /// Returns the entry for a new sibling node if `node` split.
    fn insert_into(&mut self, node: usize, id: usize, point: &CfEntry) -> Option<Entry> {
        let x = &point.linear_sum;
        let closest = closest_entry(&self.nodes[node].entries, x);
        if self.nodes[node].leaf {
            let entries = &mut self.nodes[node].entries;
            match closest {
                Some(i) if entries[i].cf.merge(point).radius() <= self.threshold => {
                    entries[i].cf = entries[i].cf.merge(point);
                    entries[i].members.push(id);
                }
                _ => entries.push(Entry {
                    cf: point.clone(),
                    child: None,
                    members: vec![id],
                }),
            }
        } else {
            let i = closest.expect("internal nodes are never empty");
            let child = self.nodes[node].entries[i].child.expect("internal entry has a child");
            match self.insert_into(child, id, point) {
                None => {
                    let e = &mut self.nodes[node].entries[i];
                    e.cf = e.cf.merge(point);
                }
                Some(sibling) => {
                    self.nodes[node].entries[i].cf = self.summary(child);
                    self.nodes[node].entries.push(sibling);
                }
            }
        }
        (self.nodes[node].entries.len() > self.branching).then(|| self.split(node))
    }

    /// Splits `node` around its two farthest entries; returns the new half.
    fn split(&mut self, node: usize) -> Entry {
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let centroids: Vec<Vec<f64>> = entries.iter().map(|e| e.cf.centroid()).collect();
        let (mut a, mut b, mut far) = (0, 1, -1.0);
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                let d = squared_distance(&centroids[i], &centroids[j]);
                if d > far {
                    (a, b, far) = (i, j, d);
                }
            }
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (k, e) in entries.into_iter().enumerate() {
            let to_left = k == a
                || (k != b && squared_distance(&centroids[k], &centroids[a]) <= squared_distance(&centroids[k], &centroids[b]));
            if to_left {
                left.push(e);
            } else {
                right.push(e);
            }
        }
        let leaf = self.nodes[node].leaf;
        self.nodes[node].entries = left;
        self.nodes.push(Node { leaf, entries: right });
        let new_id = self.nodes.len() - 1;
        Entry {
            cf: self.summary(new_id),
            child: Some(new_id),
            members: Vec::new(),
        }
    }

    fn summary(&self, node: usize) -> CfEntry {
        let mut it = self.nodes[node].entries.iter();
        let first = it.next().expect("summarized node is non-empty").cf.clone();
        it.fold(first, |acc, e| acc.merge(&e.cf))
    }

    /// Leaf subclusters in depth-first order.
    pub fn subclusters(&self) -> Vec<Subcluster> {
        let mut out = Vec::new();
        self.collect_leaves(self.root, &mut out);
        out
    }

    fn collect_leaves(&self, node: usize, out: &mut Vec<Subcluster>) {
        for e in &self.nodes[node].entries {
            match e.child {
                Some(c) => self.collect_leaves(c, out),
                None => out.push(Subcluster {
                    cf: e.cf.clone(),
                    members: e.members.clone(),
                }),
            }
        }
    }

    /// Every internal entry paired with the CFs of its child's entries.
    pub fn parent_child_features(&self) -> Vec<(CfEntry, Vec<CfEntry>)> {
        self.nodes
            .iter()
            .flat_map(|n| n.entries.iter())
            .filter_map(|e| {
                e.child
                    .map(|c| (e.cf.clone(), self.nodes[c].entries.iter().map(|x| x.cf.clone()).collect()))
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        let mut d = 1;
        let mut n = self.root;
        while !self.nodes[n].leaf {
            n = self.nodes[n].entries[0].child.unwrap();
            d += 1;
        }
        d
    }
}

fn closest_entry(entries: &[Entry], x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        let d = squared_distance(&e.cf.centroid(), x);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirchConfig {
    pub threshold: f64,
    pub branching: usize,
    /// Optional agglomeration of leaf subclusters down to this many clusters.
    pub n_clusters: Option<usize>,
}

impl Default for BirchConfig {
    fn default() -> Self {
        BirchConfig {
            threshold: 2.0,
            branching: 50,
            n_clusters: None,
        }
    }
}

/// Cluster assignment of every input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// `assignments[i]` is the cluster of input `i`; ids are dense from 0.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Clustering {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }
}

/// Builds the CF tree in one pass over `vectors` (already standardized by the
/// caller), takes leaf subclusters as clusters and assigns every input to the
/// nearest final centroid.
pub fn birch_fit(vectors: &[Vec<f64>], cfg: &BirchConfig) -> Result<Clustering> {
    if vectors.is_empty() {
        return Err(Error::data("cannot cluster an empty set"));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::data("clustering inputs have differing lengths"));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("clustering inputs must be finite"));
    }
    let mut tree = CfTree::new(cfg.threshold, cfg.branching)?;
    for (i, v) in vectors.iter().enumerate() {
        tree.insert(i, v);
    }
    let mut groups: Vec<CfEntry> = tree.subclusters().into_iter().map(|s| s.cf).collect();
    if let Some(k) = cfg.n_clusters {
        if k == 0 {
            return Err(Error::config("n_clusters must be at least 1"));
        }
        groups = agglomerate(groups, k);
    }
    let centroids: Vec<Vec<f64>> = groups.iter().map(CfEntry::centroid).collect();
    let assignments: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v)).collect();

    // Drop centroids that attracted nothing and renumber densely.
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    let assignments = assignments
        .into_iter()
        .map(|a| {
            if remap[a] == usize::MAX {
                remap[a] = kept.len();
                kept.push(a);
            }
            remap[a]
        })
        .collect();
    Ok(Clustering {
        assignments,
        centroids: kept.into_iter().map(|a| centroids[a].clone()).collect(),
    })
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Repeatedly merges the two closest subclusters until `k` remain.
fn agglomerate(mut groups: Vec<CfEntry>, k: usize) -> Vec<CfEntry> {
    while groups.len() > k {
        let cents: Vec<Vec<f64>> = groups.iter().map(CfEntry::centroid).collect();
        let (mut a, mut b, mut best) = (0, 1, f64::INFINITY);
        for i in 0..cents.len() {
            for j in i + 1..cents.len() {
                let d = squared_distance(&cents[i], &cents[j]);
                if d < best {
                    (a, b, best) = (i, j, d);
                }
            }
        }
        let merged = groups[a].merge(&groups[b]);
        groups.remove(b);
        groups[a] = merged;
    }
    groups
}
