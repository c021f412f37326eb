//! Initial face graph: keypoint patches and thresholded cosine adjacency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_GRAPH_THRESHOLD: f64 = 0.936;

/// Norms below this are treated as zero vectors.
const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceGraph {
    pub node_features: Matrix,
    /// Symmetric 0-1 adjacency with an empty diagonal; self-loops are added at normalisation.
    pub adjacency: Matrix,
    /// Carried alongside the node features; no downstream stage reads it.
    pub edge_features: Option<Matrix>,
    pub keypoint_index: Vec<usize>,
}

impl FaceGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(node)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, _)| j)
    }

    /// Unit-weight undirected graph with constant one-dimensional features.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = Matrix::zeros(n, n);
        for &(i, j) in edges {
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
        Self {
            node_features: Matrix::filled(n, 1, 1.0),
            adjacency,
            edge_features: None,
            keypoint_index: (0..n).collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        (0..n)
            .map(|i| (i + 1..n).filter(|&j| self.adjacency.get(i, j) > 0.0).count())
            .sum()
    }
}

/// Maps each keypoint to the index of the `side x side` patch containing it.
pub fn assign_patches(keypoints: &[Keypoint], image_size: (f64, f64), patches_per_side: usize) -> Result<Vec<usize>> {
    if patches_per_side == 0 {
        return Err(Error::Domain("patches_per_side must be at least 1".into()));
    }
    let (width, height) = image_size;
    let side = patches_per_side as f64;
    let (pw, ph) = (width / side, height / side);
    keypoints
        .iter()
        .map(|kp| {
            let inside = kp.x >= 0.0 && kp.x < width && kp.y >= 0.0 && kp.y < height;
            if !inside {
                return Err(Error::Bounds {
                    x: kp.x,
                    y: kp.y,
                    width,
                    height,
                });
            }
            let col = ((kp.x / pw).floor() as usize).min(patches_per_side - 1);
            let row = ((kp.y / ph).floor() as usize).min(patches_per_side - 1);
            Ok(row * patches_per_side + col)
        })
        .collect()
}

/// Distinct patches in first-seen keypoint order; these become the graph nodes.
pub fn distinct_patches(per_keypoint: &[usize]) -> Vec<usize> {
    let mut seen = Vec::new();
    for &p in per_keypoint {
        if !seen.contains(&p) {
            seen.push(p);
        }
    }
    seen
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine_similarity", (1, u.len()), (1, v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `A_ij = 1` iff `i != j` and the rows' cosine similarity reaches `threshold`.
pub fn similarity_adjacency(rows: &Matrix, threshold: f64) -> Result<Matrix> {
    let n = rows.rows();
    let mut adjacency = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if cosine_similarity(rows.row(i), rows.row(j))? >= threshold {
                adjacency.set(i, j, 1.0);
                adjacency.set(j, i, 1.0);
            }
        }
    }
    Ok(adjacency)
}

pub fn build_initial_graph(node_features: &Matrix, threshold: f64) -> Result<FaceGraph> {
    if node_features.rows() == 0 || node_features.cols() == 0 {
        return Err(Error::Input("empty node feature matrix".into()));
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [-1, 1]")));
    }
    let adjacency = similarity_adjacency(node_features, threshold)?;
    Ok(FaceGraph {
        node_features: node_features.clone(),
        adjacency,
        edge_features: None,
        keypoint_index: (0..node_features.rows()).collect(),
    })
}

/// A labelled sample as it arrives from ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub age: u32,
    pub sigma: Option<f64>,
    pub features: Matrix,
}

impl LabeledSample {
    pub fn clamped_age(&self) -> u32 {
        self.age.min(99)
    }

    pub fn group(&self) -> usize {
        (self.clamped_age() / 10) as usize
    }

    pub fn within(&self) -> usize {
        (self.clamped_age() % 10) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_assignment() {
        let kps = [Keypoint { x: 0.0, y: 0.0 }, Keypoint { x: 112.0, y: 112.0 }];
        assert_eq!(assign_patches(&kps, (224.0, 224.0), 14).unwrap(), vec![0, 105]);
        let err = assign_patches(&[Keypoint { x: 224.0, y: 10.0 }], (224.0, 224.0), 14).unwrap_err();
        assert!(matches!(err, Error::Bounds { x, .. } if x == 224.0));
    }

    #[test]
    fn distinct_patches_keep_order() {
        assert_eq!(distinct_patches(&[5, 3, 5, 9, 3]), vec![5, 3, 9]);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[0.3, 2.0], &[0.3, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_rows_connect() {
        let x = Matrix::from_rows(&[[0.5, 1.0], [0.5, 1.0]]).unwrap();
        let g = build_initial_graph(&x, DEFAULT_GRAPH_THRESHOLD).unwrap();
        assert_eq!(g.adjacency, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
    }

    #[test]
    fn orthogonal_rows_stay_disconnected() {
        let g = build_initial_graph(&Matrix::identity(4), DEFAULT_GRAPH_THRESHOLD).unwrap();
        assert_eq!(g.adjacency, Matrix::zeros(4, 4));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(build_initial_graph(&Matrix::zeros(0, 3), 0.9), Err(Error::Input(_))));
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Matrix::uniform(5, 3, -1.0, 1.0, &mut rng);
        for r in 0..5 {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            x.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        }
        // near-duplicate so that at least one edge exists
        let r0 = x.row(0).to_vec();
        x.row_mut(3).copy_from_slice(&[r0[0] + 0.01, r0[1], r0[2]]);
        for threshold in [0.0, 0.5, 0.936] {
            let g = build_initial_graph(&x, threshold).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let dot: f64 = (0..3).map(|k| x.get(i, k) * x.get(j, k)).sum();
                    let norms = (0..3).map(|k| x.get(i, k).powi(2)).sum::<f64>().sqrt()
                        * (0..3).map(|k| x.get(j, k).powi(2)).sum::<f64>().sqrt();
                    let expect = if i != j && dot / norms >= threshold { 1.0 } else { 0.0 };
                    assert_eq!(g.adjacency.get(i, j), expect, "({i},{j}) at {threshold}");
                }
            }
        }
        assert_eq!(build_initial_graph(&x, 0.936).unwrap().adjacency.get(0, 3), 1.0);
    }

    #[test]
    fn sample_group_and_within() {
        let s = LabeledSample {
            id: "a".into(),
            age: 116,
            sigma: None,
            features: Matrix::zeros(1, 1),
        };
        assert_eq!((s.group(), s.within()), (9, 9));
    }

    proptest! {
        #[test]
        fn adjacency_invariants(seed in any::<u64>(), n in 1usize..9, t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Matrix::uniform(n, 4, -1.0, 1.0, &mut rng);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a_lo = build_initial_graph(&x, lo).unwrap().adjacency;
            let a_hi = build_initial_graph(&x, hi).unwrap().adjacency;
            prop_assert!(a_lo.is_symmetric());
            for i in 0..n {
                prop_assert_eq!(a_lo.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert!(a_hi.get(i, j) <= a_lo.get(i, j));
                }
            }
            // permutation equivariance
            let perm: Vec<usize> = (0..n).rev().collect();
            let permuted = build_initial_graph(&x.permute_rows(&perm), lo).unwrap().adjacency;
            prop_assert_eq!(permuted, a_lo.permute_square(&perm));
        }
    }
}
