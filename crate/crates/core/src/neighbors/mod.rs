//! Exact kd-tree and randomized kd-forest nearest-neighbor search.

mod forest;
mod kdtree;

use rayon::prelude::*;

pub use forest::{KdForest, DEFAULT_MAX_CHECKS, DEFAULT_TOP_R, DEFAULT_TREES};
pub use kdtree::{KdTree, NeighborQueryResult, DEFAULT_BUCKET_SIZE};

use crate::error::{Error, Result};

pub fn build_exact<const D: usize>(points: Vec<[f64; D]>, bucket_size: usize) -> Result<KdTree<D>> {
    KdTree::build(points, bucket_size)
}

pub fn knn_exact<const D: usize>(
    tree: &KdTree<D>,
    query: &[f64; D],
    k: usize,
) -> Result<NeighborQueryResult> {
    tree.knn(query, k)
}

pub fn build_forest<const D: usize>(
    points: Vec<[f64; D]>,
    trees: usize,
    top_r: usize,
    rng_seed: u64,
) -> Result<KdForest<D>> {
    KdForest::build(points, trees, top_r, DEFAULT_BUCKET_SIZE, rng_seed)
}

pub fn knn_approx<const D: usize>(
    forest: &KdForest<D>,
    query: &[f64; D],
    k: usize,
    max_checks: usize,
) -> Result<NeighborQueryResult> {
    forest.knn_approx(query, k, max_checks)
}

/// Mean distance from each point to its nearest other index. Duplicates
/// count as distance 0.
pub fn average_nn_distance<const D: usize>(points: &[[f64; D]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Usage(format!(
            "average spacing needs at least 2 points, got {}",
            points.len()
        )));
    }
    let tree = KdTree::build(points.to_vec(), DEFAULT_BUCKET_SIZE)?;
    average_nn_distance_with(&tree)
}

/// [`average_nn_distance`] over the points of an already built tree.
pub fn average_nn_distance_with<const D: usize>(tree: &KdTree<D>) -> Result<f64> {
    let points = tree.points();
    if points.len() < 2 {
        return Err(Error::Usage(format!(
            "average spacing needs at least 2 points, got {}",
            points.len()
        )));
    }
    let nearest: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let r = tree.knn(&points[i], 2).expect("k = 2 fits");
            let j = r.indices.iter().position(|&j| j != i).expect("two indices");
            r.distances[j]
        })
        .collect();
    Ok(nearest.iter().sum::<f64>() / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute<const D: usize>(points: &[[f64; D]], q: &[f64; D], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d2: f64 = (0..D).map(|d| (p[d] - q[d]).powi(2)).sum();
                (d2, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn random_points<const D: usize>(n: usize, seed: u64) -> Vec<[f64; D]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn single_point_is_one_leaf() {
        let tree = build_exact(vec![[1.0, 2.0, 3.0]], 16).unwrap();
        assert_eq!(tree.leaves(), vec![vec![0]]);
        assert_eq!(tree.root_split_dim(), None);
    }

    #[test]
    fn root_splits_on_dominant_variance() {
        // x spans 0..9, y stays within 0..1.
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, (i % 2) as f64 * 0.5]).collect();
        let tree = build_exact(pts, 2).unwrap();
        assert_eq!(tree.root_split_dim(), Some(0));
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [(i % 2) as f64 * 0.5, i as f64]).collect();
        assert_eq!(build_exact(pts, 2).unwrap().root_split_dim(), Some(1));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(build_exact::<3>(Vec::new(), 16).is_err());
        assert!(build_forest::<3>(Vec::new(), 4, 2, 0).is_err());
    }

    #[test]
    fn all_duplicates_stop_splitting() {
        let tree = build_exact(vec![[0.5, 0.5]; 100], 4).unwrap();
        assert_eq!(tree.leaves().len(), 1);
        let r = tree.knn(&[0.5, 0.5], 3).unwrap();
        assert_eq!(r.indices, vec![0, 1, 2]);
    }

    #[test]
    fn query_at_stored_point_comes_first() {
        let pts = random_points::<3>(500, 1);
        let tree = build_exact(pts.clone(), 8).unwrap();
        let r = tree.knn(&pts[123], 3).unwrap();
        assert_eq!(r.indices[0], 123);
        assert_eq!(r.distances[0], 0.0);
    }

    #[test]
    fn five_point_fixture_k2() {
        // Distances from (0.9, 0.2): a 0.922, b 0.224, c 0.906, d 1.304, e 0.412.
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [0.5, 0.4]];
        let tree = build_exact(pts, 1).unwrap();
        let r = tree.knn(&[0.9, 0.2], 2).unwrap();
        assert_eq!(r.indices, vec![1, 4]);
        assert!((r.distances[0] - 0.05f64.sqrt()).abs() < 1e-12);
        assert!((r.distances[1] - 0.2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let tree = build_exact(vec![[0.0], [1.0]], 16).unwrap();
        assert!(matches!(tree.knn(&[0.0], 0), Err(Error::Usage(_))));
        assert!(matches!(tree.knn(&[0.0], 3), Err(Error::Usage(_))));
    }

    #[test]
    fn thousand_points_match_brute_force() {
        let pts = random_points::<3>(1000, 7);
        let tree = build_exact(pts.clone(), 16).unwrap();
        let queries = random_points::<3>(100, 8);
        for q in &queries {
            let r = tree.knn(q, 5).unwrap();
            assert_eq!(r.indices, brute(&pts, q, 5));
        }
        // Every stored point as a query, k = 2.
        for p in &pts {
            assert_eq!(tree.knn(p, 2).unwrap().indices, brute(&pts, p, 2));
        }
    }

    #[test]
    fn ties_break_by_lower_index() {
        // Four points equidistant from the origin.
        let pts = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [3.0, 3.0]];
        let tree = build_exact(pts, 1).unwrap();
        assert_eq!(tree.knn(&[0.0, 0.0], 2).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn within_radius_matches_scan() {
        let pts = random_points::<2>(800, 3);
        let tree = build_exact(pts.clone(), 10).unwrap();
        for q in random_points::<2>(30, 4) {
            let got: Vec<usize> = tree
                .within_radius(&q, 0.1)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let want: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i][0] - q[0]).powi(2) + (pts[i][1] - q[1]).powi(2) <= 0.01)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn forest_without_randomization_equals_exact_tree() {
        let pts = random_points::<3>(2000, 11);
        let forest = build_forest(pts.clone(), 1, 1, 99).unwrap();
        let tree = build_exact(pts, DEFAULT_BUCKET_SIZE).unwrap();
        assert!(forest.tree_matches(0, &tree));
    }

    #[test]
    fn forest_is_deterministic() {
        let pts = random_points::<3>(3000, 12);
        let a = build_forest(pts.clone(), 4, 2, 5).unwrap();
        let b = build_forest(pts.clone(), 4, 2, 5).unwrap();
        assert_eq!(a, b);
        let c = build_forest(pts, 4, 2, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_trees_cover_every_index_once() {
        let pts = random_points::<3>(10_000, 13);
        let forest = build_forest(pts, 4, 2, 1).unwrap();
        for t in 0..forest.tree_count() {
            let mut all: Vec<usize> = forest.leaves(t).into_iter().flatten().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10_000).collect::<Vec<_>>(), "tree {t}");
        }
    }

    #[test]
    fn full_budget_is_exact() {
        let pts = random_points::<3>(1500, 14);
        let forest = build_forest(pts.clone(), 4, 2, 3).unwrap();
        let tree = build_exact(pts.clone(), 16).unwrap();
        for q in random_points::<3>(50, 15) {
            let a = forest.knn_approx(&q, 4, pts.len()).unwrap();
            assert_eq!(a, tree.knn(&q, 4).unwrap());
        }
    }

    #[test]
    fn self_queries_are_always_found() {
        let pts = random_points::<3>(5000, 16);
        let forest = build_forest(pts.clone(), 4, 2, 8).unwrap();
        for i in (0..5000).step_by(50) {
            let r = forest.knn_approx(&pts[i], 1, 1).unwrap();
            assert_eq!(r.indices, vec![i]);
            assert_eq!(r.distances, vec![0.0]);
        }
    }

    #[test]
    fn recall_grows_with_budget() {
        let pts = random_points::<3>(10_000, 17);
        let forest = build_forest(pts.clone(), 4, 2, 2).unwrap();
        let tree = build_exact(pts, 16).unwrap();
        let queries = random_points::<3>(300, 18);
        let truth: Vec<usize> = queries.iter().map(|q| tree.nearest(q).0).collect();
        let recall = |checks: usize| {
            queries
                .iter()
                .zip(&truth)
                .filter(|(q, &t)| forest.knn_approx(q, 1, checks).unwrap().indices[0] == t)
                .count()
        };
        let ladder = [recall(16), recall(64), recall(256)];
        assert!(
            ladder[0] <= ladder[1] && ladder[1] <= ladder[2],
            "{ladder:?}"
        );
        assert!(
            ladder[2] as f64 >= 0.95 * queries.len() as f64,
            "{ladder:?}"
        );
    }

    #[test]
    fn approx_rejects_small_budget() {
        let forest = build_forest(random_points::<2>(10, 1), 2, 2, 0).unwrap();
        assert!(forest.knn_approx(&[0.0, 0.0], 3, 2).is_err());
    }

    #[test]
    fn average_spacing_examples() {
        assert!(
            (average_nn_distance(&[[0.0, 0.0, 0.8], [0.001, 0.0, 0.8]]).unwrap() - 0.001).abs()
                < 1e-15
        );
        let grid: Vec<[f64; 2]> = (0..100)
            .map(|i| [(i % 10) as f64, (i / 10) as f64])
            .collect();
        assert_eq!(average_nn_distance(&grid).unwrap(), 1.0);
        // Two coincident points plus one at distance 2 from both.
        let dup = [[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]];
        assert!((average_nn_distance(&dup).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            average_nn_distance(&[[1.0, 1.0]]),
            Err(Error::Usage(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn knn_exact_matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..400),
            q in prop::array::uniform3(-1.2f64..1.2),
            k in 1usize..8,
            bucket in 1usize..20,
        ) {
            let k = k.min(pts.len());
            let tree = build_exact(pts.clone(), bucket).unwrap();
            let r = tree.knn(&q, k).unwrap();
            prop_assert_eq!(&r.indices, &brute(&pts, &q, k));
            for (i, d) in r.indices.iter().zip(&r.distances) {
                let truth: f64 = (0..3).map(|j| (pts[*i][j] - q[j]).powi(2)).sum::<f64>().sqrt();
                prop_assert_eq!(*d, truth);
            }
        }

        #[test]
        fn knn_exact_handles_lattice_ties(
            n in 1usize..12,
            q in prop::array::uniform2(0i32..12),
            k in 1usize..6,
        ) {
            let pts: Vec<[f64; 2]> = (0..n * n).map(|i| [(i % n) as f64, (i / n) as f64]).collect();
            let k = k.min(pts.len());
            let q = [q[0] as f64 * 0.5, q[1] as f64 * 0.5];
            let tree = build_exact(pts.clone(), 2).unwrap();
            prop_assert_eq!(tree.knn(&q, k).unwrap().indices, brute(&pts, &q, k));
        }

        #[test]
        fn forest_distances_are_true_distances(seed in 0u64..1000, checks in 1usize..64) {
            let pts = random_points::<3>(300, seed);
            let forest = build_forest(pts.clone(), 3, 2, seed).unwrap();
            let q = random_points::<3>(1, seed + 1)[0];
            let r = forest.knn_approx(&q, 1, checks.max(1)).unwrap();
            let i = r.indices[0];
            let truth: f64 = (0..3).map(|j| (pts[i][j] - q[j]).powi(2)).sum::<f64>().sqrt();
            prop_assert_eq!(r.distances[0], truth);
        }
    }
}
