//! Static 2-d tree over projected points.
//!
//! Queries are exact: results equal a linear scan, with ties in kNN broken by
//! the lower point id. Ids are positions in the input slice.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::geo::{GeoPoint, LocalXY};

const LEAF_SIZE: usize = 16;
pub(crate) const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("cannot build an index over zero points")]
    EmptyInput,
    #[error("points come from different projection origins")]
    MixedOrigins,
}

/// Euclidean distance in the projected plane. Every query and every oracle
/// uses this exact expression so results compare bit-for-bit.
#[inline]
pub fn planar_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub bbox: [f64; 4],
    pub start: u32,
    pub end: u32,
    pub left: u32,
    pub right: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }

    /// Lower bound on the distance from `q` to any point in the node.
    #[inline]
    pub fn min_distance(&self, q: [f64; 2]) -> f64 {
        let dx = (self.bbox[0] - q[0]).max(q[0] - self.bbox[2]).max(0.0);
        let dy = (self.bbox[1] - q[1]).max(q[1] - self.bbox[3]).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct PointIndex {
    origin: GeoPoint,
    points: Vec<[f64; 2]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PointIndex {
    pub fn build(points: &[LocalXY]) -> Result<Self, IndexError> {
        let first = points.first().ok_or(IndexError::EmptyInput)?;
        if points.iter().any(|p| p.origin != first.origin) {
            return Err(IndexError::MixedOrigins);
        }
        Self::from_xy(first.origin, points.iter().map(LocalXY::xy).collect())
    }

    /// Builds from raw planar coordinates sharing `origin`.
    pub fn from_xy(origin: GeoPoint, points: Vec<[f64; 2]>) -> Result<Self, IndexError> {
        if points.is_empty() {
            return Err(IndexError::EmptyInput);
        }
        let mut index = Self {
            origin,
            order: (0..points.len() as u32).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let bbox = self.order[start..end].iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, &i| {
                let p = self.points[i as usize];
                [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])]
            },
        );
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            bbox,
            start: start as u32,
            end: end as u32,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = if bbox[2] - bbox[0] >= bbox[3] - bbox[1] { 0 } else { 1 };
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn point(&self, id: usize) -> [f64; 2] {
        self.points[id]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn order(&self) -> &[u32] {
        &self.order
    }

    /// The `min(k, n)` nearest points as `(id, distance)`, ascending by
    /// distance then id.
    pub fn knn(&self, q: [f64; 2], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if heap.len() == k && node.min_distance(q) > heap.peek().map_or(f64::INFINITY, |c| c.dist) {
                continue;
            }
            if node.is_leaf() {
                for &id in &self.order[node.start as usize..node.end as usize] {
                    let c = Candidate {
                        dist: planar_distance(q, self.points[id as usize]),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l as usize].min_distance(q);
                let dr = self.nodes[r as usize].min_distance(q);
                // push the farther child first so the nearer one is popped next
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.id as usize, c.dist))
            .collect()
    }

    /// Calls `f(id, distance)` for every point with distance <= `r`.
    pub fn for_each_within_radius<F: FnMut(usize, f64)>(&self, q: [f64; 2], r: f64, mut f: F) {
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.min_distance(q) > r {
                continue;
            }
            if node.is_leaf() {
                for &id in &self.order[node.start as usize..node.end as usize] {
                    let d = planar_distance(q, self.points[id as usize]);
                    if d <= r {
                        f(id as usize, d);
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
    }

    /// All points with distance <= `r` (closed ball), in no particular order.
    pub fn within_radius(&self, q: [f64; 2], r: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within_radius(q, r, |id, d| out.push((id, d)));
        out
    }
}
