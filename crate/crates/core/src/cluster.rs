//! HDBSCAN over projected palm positions.
//!
//! The pipeline is the classic one: core distances from the k-d tree, a
//! minimum spanning tree of the mutual-reachability graph, a single-linkage
//! dendrogram condensed at `min_cluster_size`, and stability-based flat
//! cluster selection. Points are processed in a canonical order (sorted by
//! coordinates) so the partition does not depend on input order.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoError, GeoPolygon, LocalXY, Projection};
use crate::index::{planar_distance, PointIndex, NO_CHILD};
use crate::ingest::ArchaeoCentroid;
use crate::par;

/// Above this size the MST is built with index-accelerated Borůvka.
pub const PRIM_MAX_POINTS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{n} points is fewer than min_samples = {min_samples}")]
    TooFewPoints { n: usize, min_samples: usize },
    #[error("points come from different projection origins")]
    MixedOrigins,
    #[error("cluster {cluster}: {source}")]
    Hull { cluster: usize, source: GeoError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    ExcessOfMass,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size` when unset.
    pub min_samples: Option<usize>,
    pub selection: Selection,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 100,
            min_samples: None,
            selection: Selection::ExcessOfMass,
        }
    }
}

impl HdbscanParams {
    pub fn with_min_cluster_size(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            ..Self::default()
        }
    }

    pub fn effective_min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.min_cluster_size < 2 {
            return Err(ClusterError::InvalidParams("min_cluster_size must be >= 2".into()));
        }
        if self.effective_min_samples() < 1 {
            return Err(ClusterError::InvalidParams("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// An MST edge with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Total order on edges: weight, then lower id, then higher id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeKey(f64, usize, usize);

impl EdgeKey {
    const MAX: EdgeKey = EdgeKey(f64::INFINITY, usize::MAX, usize::MAX);

    fn less(&self, other: &EdgeKey) -> bool {
        self.0
            .total_cmp(&other.0)
            .then(self.1.cmp(&other.1))
            .then(self.2.cmp(&other.2))
            .is_lt()
    }
}

/// Distance from each point to its `min_samples`-th nearest neighbour,
/// counting the point itself as the first.
pub fn core_distances(idx: &PointIndex, min_samples: usize) -> Result<Vec<f64>, ClusterError> {
    let n = idx.len();
    if min_samples == 0 {
        return Err(ClusterError::InvalidParams("min_samples must be >= 1".into()));
    }
    if n < min_samples {
        return Err(ClusterError::TooFewPoints { n, min_samples });
    }
    Ok(par::map_range(n, |i| {
        idx.knn(idx.point(i), min_samples)
            .last()
            .map_or(0.0, |&(_, d)| d)
    }))
}

#[inline]
fn mutual_reachability(core: &[f64], pts: &[[f64; 2]], i: usize, j: usize) -> f64 {
    core[i].max(core[j]).max(planar_distance(pts[i], pts[j]))
}

/// MST of the complete mutual-reachability graph, sorted by (weight, a, b).
pub fn mutual_reachability_mst(idx: &PointIndex, core: &[f64]) -> Vec<MstEdge> {
    if idx.len() <= PRIM_MAX_POINTS {
        prim_mst(idx.points(), core)
    } else {
        boruvka_mst(idx, core)
    }
}

/// Dense O(n²) Prim.
pub fn prim_mst(pts: &[[f64; 2]], core: &[f64]) -> Vec<MstEdge> {
    let n = pts.len();
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return edges;
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![EdgeKey::MAX; n];
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_key = EdgeKey::MAX;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let w = mutual_reachability(core, pts, current, v);
            let key = EdgeKey(w, current.min(v), current.max(v));
            if key.less(&best[v]) {
                best[v] = key;
            }
            if best[v].less(&next_key) || next == usize::MAX {
                next_key = best[v];
                next = v;
            }
        }
        in_tree[next] = true;
        edges.push(MstEdge {
            a: next_key.1,
            b: next_key.2,
            weight: next_key.0,
        });
        current = next;
    }
    sort_edges(&mut edges);
    edges
}

fn sort_edges(edges: &mut [MstEdge]) {
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
}

/// Borůvka over the k-d tree. Each round finds, for every component, its
/// lightest outgoing edge under the strict edge order, so the result is the
/// same unique MST Prim builds.
pub fn boruvka_mst(idx: &PointIndex, core: &[f64]) -> Vec<MstEdge> {
    let n = idx.len();
    let pts = idx.points();
    let nodes = idx.nodes();
    let order = idx.order();
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));

    // Node-level minimum core distance is fixed for the whole run.
    let mut node_min_core = vec![f64::INFINITY; nodes.len()];
    for ni in (0..nodes.len()).rev() {
        let node = &nodes[ni];
        node_min_core[ni] = if node.is_leaf() {
            order[node.start as usize..node.end as usize]
                .iter()
                .map(|&i| core[i as usize])
                .fold(f64::INFINITY, f64::min)
        } else {
            node_min_core[node.left as usize].min(node_min_core[node.right as usize])
        };
    }

    const MIXED: usize = usize::MAX;
    let mut components = n;
    while components > 1 {
        let comp: Vec<usize> = (0..n).map(|i| uf.find_immutable(i)).collect();
        let mut node_comp = vec![MIXED; nodes.len()];
        for ni in (0..nodes.len()).rev() {
            let node = &nodes[ni];
            node_comp[ni] = if node.is_leaf() {
                let ids = &order[node.start as usize..node.end as usize];
                let c0 = comp[ids[0] as usize];
                if ids.iter().all(|&i| comp[i as usize] == c0) {
                    c0
                } else {
                    MIXED
                }
            } else {
                let (l, r) = (node_comp[node.left as usize], node_comp[node.right as usize]);
                if l == r {
                    l
                } else {
                    MIXED
                }
            };
        }

        // Shared per-component weight bounds only prune; they never change
        // which edge wins, so the result is independent of scheduling.
        let bounds: Vec<AtomicU64> = (0..n).map(|_| AtomicU64::new(f64::INFINITY.to_bits())).collect();
        let best_per_point: Vec<Option<EdgeKey>> = par::map_range(n, |i| {
            let ci = comp[i];
            let bound = &bounds[ci];
            let bound_w = || f64::from_bits(bound.load(AtomicOrdering::Relaxed));
            if core[i] > bound_w() {
                return None;
            }
            let q = pts[i];
            let mut best = EdgeKey::MAX;
            let mut stack = vec![0u32];
            while let Some(ni) = stack.pop() {
                let ni = ni as usize;
                if node_comp[ni] == ci {
                    continue;
                }
                let node = &nodes[ni];
                let lb = core[i].max(node_min_core[ni]).max(node.min_distance(q));
                if lb > best.0 || lb > bound_w() {
                    continue;
                }
                if node.is_leaf() {
                    for &j in &order[node.start as usize..node.end as usize] {
                        let j = j as usize;
                        if comp[j] == ci {
                            continue;
                        }
                        let w = mutual_reachability(core, pts, i, j);
                        let key = EdgeKey(w, i.min(j), i.max(j));
                        if key.less(&best) {
                            best = key;
                            bound.fetch_min(w.to_bits(), AtomicOrdering::Relaxed);
                        }
                    }
                } else {
                    let (l, r) = (node.left, node.right);
                    debug_assert!(l != NO_CHILD);
                    let dl = nodes[l as usize].min_distance(q);
                    let dr = nodes[r as usize].min_distance(q);
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
            }
            (best.0.is_finite()).then_some(best)
        });

        let mut comp_best: Vec<Option<EdgeKey>> = vec![None; n];
        for (i, b) in best_per_point.into_iter().enumerate() {
            if let Some(key) = b {
                let slot = &mut comp_best[comp[i]];
                if slot.is_none_or(|cur| key.less(&cur)) {
                    *slot = Some(key);
                }
            }
        }
        let mut round: Vec<EdgeKey> = comp_best.into_iter().flatten().collect();
        round.sort_by(|x, y| {
            x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
        });
        round.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);
        let before = components;
        for key in round {
            if uf.union(key.1, key.2) {
                edges.push(MstEdge {
                    a: key.1,
                    b: key.2,
                    weight: key.0,
                });
                components -= 1;
            }
        }
        assert!(components < before, "Borůvka round made no progress");
    }
    sort_edges(&mut edges);
    edges
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn find_immutable(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// A flat clustering before any geometry is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub labels: Vec<Option<usize>>,
    /// Member ids per cluster (ascending) with the cluster's stability.
    pub clusters: Vec<(Vec<usize>, f64)>,
}

impl Partition {
    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![None; n],
            clusters: Vec::new(),
        }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Cluster member sets, independent of cluster numbering.
    pub fn member_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = self.clusters.iter().map(|c| c.0.clone()).collect();
        sets.sort();
        sets
    }
}

struct Dendrogram {
    // Internal node k (id n + k): children and merge weight.
    left: Vec<usize>,
    right: Vec<usize>,
    weight: Vec<f64>,
    size: Vec<usize>,
}

fn single_linkage(n: usize, mst: &[MstEdge]) -> Dendrogram {
    let mut uf = UnionFind::new(n);
    let mut top: Vec<usize> = (0..n).collect();
    let mut d = Dendrogram {
        left: Vec::with_capacity(n - 1),
        right: Vec::with_capacity(n - 1),
        weight: Vec::with_capacity(n - 1),
        size: Vec::with_capacity(n - 1),
    };
    let size_of = |d: &Dendrogram, node: usize| if node < n { 1 } else { d.size[node - n] };
    for e in mst {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        let (ta, tb) = (top[ra], top[rb]);
        uf.union(ra, rb);
        let r = uf.find(ra);
        let id = n + d.left.len();
        let s = size_of(&d, ta) + size_of(&d, tb);
        d.left.push(ta);
        d.right.push(tb);
        d.weight.push(e.weight);
        d.size.push(s);
        top[r] = id;
    }
    d
}

#[derive(Debug, Clone, Copy)]
enum Child {
    Cluster(usize),
    Point(usize),
}

struct CondensedEntry {
    parent: usize,
    child: Child,
    lambda: f64,
    size: usize,
}

/// Condenses the MST hierarchy and selects flat clusters.
///
/// `n` is the number of points the MST spans. Zero-weight merges get a
/// finite lambda sentinel above every finite lambda so stabilities stay
/// finite.
pub fn condense_and_extract(n: usize, mst: &[MstEdge], params: &HdbscanParams) -> Partition {
    let mcs = params.min_cluster_size;
    if n < mcs || n < 2 || mst.len() + 1 != n {
        return Partition::all_noise(n);
    }
    let mut sorted = mst.to_vec();
    sort_edges(&mut sorted);
    let dendro = single_linkage(n, &sorted);

    let max_finite_lambda = sorted
        .iter()
        .filter(|e| e.weight > 0.0)
        .map(|e| 1.0 / e.weight)
        .fold(0.0_f64, f64::max);
    let sentinel = if max_finite_lambda > 0.0 { 2.0 * max_finite_lambda } else { 1.0 };
    let lambda_of = |w: f64| if w > 0.0 { 1.0 / w } else { sentinel };
    let size_of = |node: usize| if node < n { 1 } else { dendro.size[node - n] };

    let root = 2 * n - 2;
    let mut entries: Vec<CondensedEntry> = Vec::with_capacity(n + 16);
    let mut birth: Vec<f64> = vec![0.0];
    let mut cluster_parent: Vec<Option<usize>> = vec![None];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::from([(root, 0usize)]);

    let emit_points = |node: usize, cluster: usize, lambda: f64, entries: &mut Vec<CondensedEntry>| {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                entries.push(CondensedEntry {
                    parent: cluster,
                    child: Child::Point(x),
                    lambda,
                    size: 1,
                });
            } else {
                stack.push(dendro.right[x - n]);
                stack.push(dendro.left[x - n]);
            }
        }
    };

    while let Some((node, cluster)) = queue.pop_front() {
        if node < n {
            // A lone point reached as the continuation of a cluster.
            entries.push(CondensedEntry {
                parent: cluster,
                child: Child::Point(node),
                lambda: sentinel,
                size: 1,
            });
            continue;
        }
        let k = node - n;
        let (l, r) = (dendro.left[k], dendro.right[k]);
        let lambda = lambda_of(dendro.weight[k]);
        let (ls, rs) = (size_of(l), size_of(r));
        match (ls >= mcs, rs >= mcs) {
            (true, true) => {
                for (child, size) in [(l, ls), (r, rs)] {
                    let id = birth.len();
                    birth.push(lambda);
                    cluster_parent.push(Some(cluster));
                    entries.push(CondensedEntry {
                        parent: cluster,
                        child: Child::Cluster(id),
                        lambda,
                        size,
                    });
                    queue.push_back((child, id));
                }
            }
            (true, false) => {
                emit_points(r, cluster, lambda, &mut entries);
                queue.push_back((l, cluster));
            }
            (false, true) => {
                emit_points(l, cluster, lambda, &mut entries);
                queue.push_back((r, cluster));
            }
            (false, false) => {
                emit_points(l, cluster, lambda, &mut entries);
                emit_points(r, cluster, lambda, &mut entries);
            }
        }
    }

    let n_clusters = birth.len();
    let mut stability = vec![0.0_f64; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for e in &entries {
        stability[e.parent] += (e.lambda - birth[e.parent]) * e.size as f64;
        if let Child::Cluster(c) = e.child {
            children[e.parent].push(c);
        }
    }

    let mut selected = vec![false; n_clusters];
    match params.selection {
        Selection::Leaf => {
            for c in 1..n_clusters {
                selected[c] = children[c].is_empty();
            }
        }
        Selection::ExcessOfMass => {
            let mut subtree = stability.clone();
            // Children always have larger ids than their parent.
            for c in (1..n_clusters).rev() {
                let child_sum: f64 = children[c].iter().map(|&ch| subtree[ch]).sum();
                if children[c].is_empty() || child_sum <= stability[c] {
                    selected[c] = true;
                    subtree[c] = stability[c];
                    let mut stack = children[c].clone();
                    while let Some(d) = stack.pop() {
                        selected[d] = false;
                        stack.extend_from_slice(&children[d]);
                    }
                } else {
                    selected[c] = false;
                    subtree[c] = child_sum;
                }
            }
        }
    }

    let mut selected_ancestor: Vec<Option<usize>> = vec![None; n_clusters];
    for c in 1..n_clusters {
        selected_ancestor[c] = if selected[c] {
            Some(c)
        } else {
            cluster_parent[c].and_then(|p| selected_ancestor[p])
        };
    }

    let mut raw_labels: Vec<Option<usize>> = vec![None; n];
    for e in &entries {
        if let Child::Point(p) = e.child {
            raw_labels[p] = selected_ancestor[e.parent];
        }
    }

    // Renumber clusters by their smallest member id.
    let mut first_member: Vec<(usize, usize)> = Vec::new();
    let mut seen = vec![false; n_clusters];
    for (p, l) in raw_labels.iter().enumerate() {
        if let Some(c) = *l {
            if !seen[c] {
                seen[c] = true;
                first_member.push((p, c));
            }
        }
    }
    let mut renumber = vec![usize::MAX; n_clusters];
    for (new_id, &(_, c)) in first_member.iter().enumerate() {
        renumber[c] = new_id;
    }
    let labels: Vec<Option<usize>> = raw_labels.iter().map(|l| l.map(|c| renumber[c])).collect();
    let mut clusters: Vec<(Vec<usize>, f64)> = first_member.iter().map(|&(_, c)| (Vec::new(), stability[c])).collect();
    for (p, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            clusters[c].0.push(p);
        }
    }
    Partition { labels, clusters }
}

/// Full HDBSCAN on planar coordinates.
pub fn hdbscan_partition(xy: &[[f64; 2]], params: &HdbscanParams) -> Result<Partition, ClusterError> {
    params.validate()?;
    let n = xy.len();
    if n < params.min_cluster_size || n < 2 {
        return Ok(Partition::all_noise(n));
    }
    let min_samples = params.effective_min_samples();
    if n < min_samples {
        return Err(ClusterError::TooFewPoints { n, min_samples });
    }
    // Canonical order: by coordinates, then input id.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| {
        xy[a][0]
            .total_cmp(&xy[b][0])
            .then(xy[a][1].total_cmp(&xy[b][1]))
            .then(a.cmp(&b))
    });
    let canon: Vec<[f64; 2]> = perm.iter().map(|&i| xy[i]).collect();
    let idx = PointIndex::from_xy(geo::GeoPoint { lon: 0.0, lat: 0.0 }, canon)
        .map_err(|_| ClusterError::InvalidParams("empty input".into()))?;
    let core = core_distances(&idx, min_samples)?;
    let mst = mutual_reachability_mst(&idx, &core);
    let canon_part = condense_and_extract(n, &mst, params);

    let mut labels = vec![None; n];
    for (ci, l) in canon_part.labels.iter().enumerate() {
        labels[perm[ci]] = *l;
    }
    Ok(renumber_by_min_member(labels, &canon_part))
}

fn renumber_by_min_member(labels: Vec<Option<usize>>, canon: &Partition) -> Partition {
    let k = canon.clusters.len();
    let mut min_member = vec![usize::MAX; k];
    for (p, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            min_member[c] = min_member[c].min(p);
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| min_member[c]);
    let mut renumber = vec![0; k];
    for (new_id, &c) in order.iter().enumerate() {
        renumber[c] = new_id;
    }
    let labels: Vec<Option<usize>> = labels.into_iter().map(|l| l.map(|c| renumber[c])).collect();
    let mut clusters: Vec<(Vec<usize>, f64)> = order.iter().map(|&c| (Vec::new(), canon.clusters[c].1)).collect();
    for (p, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            clusters[c].0.push(p);
        }
    }
    Partition { labels, clusters }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub id: usize,
    pub members: Vec<usize>,
    pub hull: GeoPolygon,
    pub area_m2: f64,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub labels: Vec<Option<usize>>,
    pub clusters: Vec<Cluster>,
}

impl ClusterResult {
    /// Attaches hulls (built from `points`) to a partition of those points.
    pub fn from_partition(points: &[LocalXY], partition: Partition) -> Result<Self, ClusterError> {
        let mut clusters = Vec::with_capacity(partition.clusters.len());
        for (id, (members, stability)) in partition.clusters.into_iter().enumerate() {
            let member_xy: Vec<LocalXY> = members.iter().map(|&m| points[m]).collect();
            let hull = geo::convex_hull(&member_xy).map_err(|source| ClusterError::Hull { cluster: id, source })?;
            let area_m2 = hull.area_m2();
            clusters.push(Cluster {
                id,
                members,
                hull,
                area_m2,
                stability,
            });
        }
        Ok(Self {
            labels: partition.labels,
            clusters,
        })
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Cluster with the most members (lowest id on ties).
    pub fn largest(&self) -> Option<&Cluster> {
        self.clusters
            .iter()
            .max_by(|a, b| a.members.len().cmp(&b.members.len()).then(b.id.cmp(&a.id)))
    }
}

/// HDBSCAN on projected points, with convex hulls per cluster.
pub fn hdbscan(points: &[LocalXY], params: &HdbscanParams) -> Result<ClusterResult, ClusterError> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.origin != first.origin) {
            return Err(ClusterError::MixedOrigins);
        }
    }
    let xy: Vec<[f64; 2]> = points.iter().map(LocalXY::xy).collect();
    let partition = hdbscan_partition(&xy, params)?;
    ClusterResult::from_partition(points, partition)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSiteAssociation {
    pub cluster_id: usize,
    pub centroid_ids: Vec<String>,
}

/// One record per cluster listing every centroid its hull contains.
pub fn associate_sites(result: &ClusterResult, centroids: &[ArchaeoCentroid]) -> Vec<ClusterSiteAssociation> {
    result
        .clusters
        .iter()
        .map(|c| {
            let planar = c.hull.to_planar_with(Projection::new(c.hull.reference_point()));
            ClusterSiteAssociation {
                cluster_id: c.id,
                centroid_ids: centroids
                    .iter()
                    .filter(|s| planar.contains(s.location))
                    .map(|s| s.id_site.clone())
                    .collect(),
            }
        })
        .collect()
}
