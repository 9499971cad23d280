use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_SIZE: usize = 16;

/// The k nearest indices to a query with their Euclidean distances, nearest
/// first. Equal distances are ordered by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborQueryResult {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Tree topology over an external point array. `perm[start..end]` of a leaf
/// lists the point indices it owns.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TreeIndex {
    pub(crate) nodes: Vec<Node>,
    pub(crate) perm: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub(crate) d2: f64,
    pub(crate) idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the k best candidates by (distance, index).
pub(crate) struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub(crate) fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    /// Squared distance a new point must not exceed to matter.
    pub(crate) fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().unwrap().d2
        }
    }

    pub(crate) fn into_result(self) -> NeighborQueryResult {
        let sorted = self.heap.into_sorted_vec();
        NeighborQueryResult {
            indices: sorted.iter().map(|c| c.idx).collect(),
            distances: sorted.iter().map(|c| c.d2.sqrt()).collect(),
        }
    }
}

#[inline]
pub(crate) fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn variances<const D: usize>(points: &[[f64; D]], idx: &[usize]) -> [f64; D] {
    let n = idx.len() as f64;
    let mut mean = [0.0; D];
    for &i in idx {
        for d in 0..D {
            mean[d] += points[i][d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; D];
    for &i in idx {
        for d in 0..D {
            let e = points[i][d] - mean[d];
            var[d] += e * e;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    var
}

/// Picks the split dimension among the `top_r` highest-variance dimensions.
/// With `top_r == 1` (or no RNG) this is the max-variance dimension, lowest
/// index on ties.
fn choose_dim<const D: usize, R: Rng>(var: &[f64; D], top_r: usize, rng: Option<&mut R>) -> usize {
    let mut order: Vec<usize> = (0..D).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let usable = order.iter().take_while(|&&d| var[d] > 0.0).count();
    let r = top_r.clamp(1, usable.max(1));
    match rng {
        Some(rng) if r > 1 => order[rng.random_range(0..r)],
        _ => order[0],
    }
}

pub(crate) fn build_index<const D: usize, R: Rng>(
    points: &[[f64; D]],
    bucket_size: usize,
    top_r: usize,
    mut rng: Option<&mut R>,
) -> TreeIndex {
    let mut perm: Vec<usize> = (0..points.len()).collect();
    let mut nodes = Vec::new();
    let bucket_size = bucket_size.max(1);
    build_rec(
        points,
        &mut perm,
        0,
        bucket_size,
        top_r,
        &mut rng,
        &mut nodes,
    );
    TreeIndex { nodes, perm }
}

fn build_rec<const D: usize, R: Rng>(
    points: &[[f64; D]],
    perm: &mut [usize],
    offset: usize,
    bucket_size: usize,
    top_r: usize,
    rng: &mut Option<&mut R>,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let n = perm.len();
    let leaf = Node::Leaf {
        start: offset,
        end: offset + n,
    };
    if n <= bucket_size {
        nodes.push(leaf);
        return id;
    }
    let var = variances(points, perm);
    if var.iter().all(|&v| v <= 0.0) {
        nodes.push(leaf);
        return id;
    }
    let dim = choose_dim(&var, top_r, rng.as_deref_mut());
    perm.sort_by(|&a, &b| points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b)));
    let mut value = points[perm[(n - 1) / 2]][dim];
    let mut split = perm.partition_point(|&i| points[i][dim] < value);
    if split == 0 {
        // The lower median is the minimum; move up to the next distinct value.
        split = perm.partition_point(|&i| points[i][dim] <= value);
        value = points[perm[split]][dim];
    }
    nodes.push(Node::Split {
        dim,
        value,
        left: 0,
        right: 0,
    });
    let (lo, hi) = perm.split_at_mut(split);
    let left = build_rec(points, lo, offset, bucket_size, top_r, rng, nodes);
    let right = build_rec(points, hi, offset + split, bucket_size, top_r, rng, nodes);
    if let Node::Split {
        left: l, right: r, ..
    } = &mut nodes[id]
    {
        *l = left;
        *r = right;
    }
    id
}

/// Exact kd-tree with median splits on the max-variance dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree<const D: usize> {
    pub(crate) points: Vec<[f64; D]>,
    pub(crate) index: TreeIndex,
    bucket_size: usize,
}

impl<const D: usize> KdTree<D> {
    pub fn build(points: Vec<[f64; D]>, bucket_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Usage("kd-tree needs at least one point".into()));
        }
        let index = build_index::<D, rand_chacha::ChaCha8Rng>(&points, bucket_size, 1, None);
        Ok(Self {
            points,
            index,
            bucket_size,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; D]] {
        &self.points
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    /// Split dimension of the root, or `None` when the root is a leaf.
    pub fn root_split_dim(&self) -> Option<usize> {
        match self.index.nodes[0] {
            Node::Split { dim, .. } => Some(dim),
            Node::Leaf { .. } => None,
        }
    }

    /// Point indices grouped by leaf, in left-to-right leaf order.
    pub fn leaves(&self) -> Vec<Vec<usize>> {
        self.index
            .nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, end } => Some(self.index.perm[start..end].to_vec()),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn knn(&self, query: &[f64; D], k: usize) -> Result<NeighborQueryResult> {
        if k == 0 {
            return Err(Error::Usage("k must be at least 1".into()));
        }
        if k > self.points.len() {
            return Err(Error::Usage(format!(
                "k = {k} exceeds the {} indexed points",
                self.points.len()
            )));
        }
        let mut best = KBest::new(k);
        self.knn_rec(0, query, &mut best);
        Ok(best.into_result())
    }

    fn knn_rec(&self, node: usize, q: &[f64; D], best: &mut KBest) {
        match self.index.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.index.perm[start..end] {
                    best.offer(Candidate {
                        d2: dist2(&self.points[i], q),
                        idx: i,
                    });
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, q, best);
                if diff * diff <= best.bound() {
                    self.knn_rec(far, q, best);
                }
            }
        }
    }

    /// Nearest stored point as `(index, distance)`.
    pub fn nearest(&self, query: &[f64; D]) -> (usize, f64) {
        let r = self.knn(query, 1).expect("tree is non-empty");
        (r.indices[0], r.distances[0])
    }

    /// Every point within `radius` (inclusive) as `(index, squared distance)`,
    /// in ascending index order.
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.within_radius_into(query, radius, &mut out);
        out
    }

    /// As [`KdTree::within_radius`], reusing `out`'s allocation.
    pub fn within_radius_into(&self, query: &[f64; D], radius: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.index.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.index.perm[start..end] {
                        let d2 = dist2(&self.points[i], query);
                        if d2 <= r2 {
                            out.push((i, d2));
                        }
                    }
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[dim] - value;
                    if diff < 0.0 || diff * diff <= r2 {
                        stack.push(left);
                    }
                    if diff >= 0.0 || diff * diff <= r2 {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable_by_key(|&(i, _)| i);
    }
}
