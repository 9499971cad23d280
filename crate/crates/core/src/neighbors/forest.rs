use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kdtree::{build_index, dist2, Candidate, KBest, NeighborQueryResult, Node, TreeIndex};
use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 4;
pub const DEFAULT_TOP_R: usize = 2;
pub const DEFAULT_MAX_CHECKS: usize = 128;

/// Randomized kd-trees over one point set. Each split picks uniformly among
/// the `top_r` highest-variance dimensions at that node.
#[derive(Debug, Clone, PartialEq)]
pub struct KdForest<const D: usize> {
    points: Vec<[f64; D]>,
    trees: Vec<TreeIndex>,
    top_r: usize,
    rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    bound: f64,
    tree: usize,
    node: usize,
}

impl Eq for Branch {}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.tree.cmp(&other.tree))
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<const D: usize> KdForest<D> {
    /// Tree `t` draws its split choices from a ChaCha8 stream `t` of
    /// `rng_seed`, so trees are independent of each other and of `trees`.
    pub fn build(
        points: Vec<[f64; D]>,
        trees: usize,
        top_r: usize,
        bucket_size: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Usage("kd-forest needs at least one point".into()));
        }
        if trees == 0 {
            return Err(Error::Usage("kd-forest needs at least one tree".into()));
        }
        let trees = (0..trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                rng.set_stream(t as u64);
                build_index(&points, bucket_size, top_r, Some(&mut rng))
            })
            .collect();
        Ok(Self {
            points,
            trees,
            top_r,
            rng_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn top_r(&self) -> usize {
        self.top_r
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Point indices grouped by leaf for tree `t`.
    pub fn leaves(&self, t: usize) -> Vec<Vec<usize>> {
        let tree = &self.trees[t];
        tree.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, end } => Some(tree.perm[start..end].to_vec()),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// `true` when tree `t` has exactly the same topology as `tree`.
    pub fn tree_matches(&self, t: usize, tree: &super::KdTree<D>) -> bool {
        self.trees[t] == tree.index
    }

    /// Best-bin-first search over all trees with one shared queue of
    /// unexplored branches. Stops once `max_checks` distinct points have been
    /// evaluated (checked between leaves, so the first leaf is always
    /// scanned) or when no branch can hold a better candidate.
    pub fn knn_approx(
        &self,
        query: &[f64; D],
        k: usize,
        max_checks: usize,
    ) -> Result<NeighborQueryResult> {
        if k == 0 {
            return Err(Error::Usage("k must be at least 1".into()));
        }
        if k > self.points.len() {
            return Err(Error::Usage(format!(
                "k = {k} exceeds the {} indexed points",
                self.points.len()
            )));
        }
        if max_checks < k {
            return Err(Error::Usage(format!(
                "max_checks = {max_checks} is below k = {k}"
            )));
        }
        let mut best = KBest::new(k);
        let mut seen: HashSet<usize> = HashSet::with_capacity(max_checks.min(self.len()) * 2);
        let mut queue = BinaryHeap::new();
        for tree in 0..self.trees.len() {
            queue.push(Reverse(Branch {
                bound: 0.0,
                tree,
                node: 0,
            }));
        }
        let mut scanned_leaf = false;
        while let Some(Reverse(branch)) = queue.pop() {
            if branch.bound > best.bound() {
                break;
            }
            if scanned_leaf && seen.len() >= max_checks {
                break;
            }
            let tree = &self.trees[branch.tree];
            let mut node = branch.node;
            loop {
                match tree.nodes[node] {
                    Node::Leaf { start, end } => {
                        for &i in &tree.perm[start..end] {
                            if seen.insert(i) {
                                best.offer(Candidate {
                                    d2: dist2(&self.points[i], query),
                                    idx: i,
                                });
                            }
                        }
                        scanned_leaf = true;
                        break;
                    }
                    Node::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = query[dim] - value;
                        let (near, far) = if diff < 0.0 {
                            (left, right)
                        } else {
                            (right, left)
                        };
                        let bound = branch.bound.max(diff * diff);
                        if bound <= best.bound() {
                            queue.push(Reverse(Branch {
                                bound,
                                tree: branch.tree,
                                node: far,
                            }));
                        }
                        node = near;
                    }
                }
            }
        }
        Ok(best.into_result())
    }
}
