//! Second-order biased random walks and the walk-driven adjacency update.
//!
//! A walk that arrived at `current` from `prev` weighs each neighbour `next`
//! of `current` by the shortest-path distance `d(prev, next)`:
//! `1/p` when `d = 0` (return), `1` when `d = 1`, `1/q` when `d = 2`.
//! Small `p` keeps walks local (BFS-like), small `q` pushes them outward
//! (DFS-like). Co-occurrence counts within a sliding window give every node
//! a structural profile; nodes whose profiles are cosine-similar above `tau`
//! gain an edge.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{similarity_adjacency, FaceGraph};
use crate::numerics::Matrix;

pub const DEFAULT_WALK_THRESHOLD: f64 = 0.824;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub p: f64,
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walks_per_node: 10,
            walk_length: 20,
            window: 4,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Config(format!("walk p and q must be positive (p={}, q={})", self.p, self.q)));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalkSet {
    pub walks: Vec<Vec<usize>>,
}

/// Unnormalised weight for a step distance `d(prev, next)`.
pub fn weight_for_distance(distance: Option<usize>, config: &WalkConfig) -> f64 {
    match distance {
        Some(0) => 1.0 / config.p,
        Some(1) => 1.0,
        Some(2) => 1.0 / config.q,
        _ => 0.0,
    }
}

/// Hop distances from `source`; `None` for unreachable nodes.
pub fn bfs_distances(graph: &FaceGraph, source: usize) -> Vec<Option<usize>> {
    let n = graph.node_count();
    let mut dist = vec![None; n];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for v in graph.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn transition_weight(prev: usize, next: usize, graph: &FaceGraph, config: &WalkConfig) -> f64 {
    if prev >= graph.node_count() || next >= graph.node_count() {
        return 0.0;
    }
    weight_for_distance(bfs_distances(graph, prev)[next], config)
}

/// Lazily computed BFS distance rows, one per source node.
struct DistanceCache<'g> {
    graph: &'g FaceGraph,
    rows: Vec<Option<Vec<Option<usize>>>>,
}

impl<'g> DistanceCache<'g> {
    fn new(graph: &'g FaceGraph) -> Self {
        Self {
            graph,
            rows: vec![None; graph.node_count()],
        }
    }

    fn from(&mut self, source: usize) -> &[Option<usize>] {
        let graph = self.graph;
        self.rows[source].get_or_insert_with(|| bfs_distances(graph, source))
    }
}

fn step_weights(
    prev: Option<usize>,
    current: usize,
    graph: &FaceGraph,
    config: &WalkConfig,
    cache: &mut DistanceCache<'_>,
) -> Vec<(usize, f64)> {
    let neighbors: Vec<usize> = graph.neighbors(current).collect();
    match prev {
        None => neighbors.into_iter().map(|n| (n, 1.0)).collect(),
        Some(prev) => {
            let dist = cache.from(prev);
            neighbors
                .into_iter()
                .map(|n| (n, weight_for_distance(dist[n], config)))
                .collect()
        }
    }
}

/// Normalised next-step distribution; empty when `current` has no neighbours.
/// The first step of a walk (`prev = None`) is uniform over neighbours.
pub fn transition_distribution(
    prev: Option<usize>,
    current: usize,
    graph: &FaceGraph,
    config: &WalkConfig,
) -> Vec<(usize, f64)> {
    let mut cache = DistanceCache::new(graph);
    let weights = step_weights(prev, current, graph, config, &mut cache);
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    weights.into_iter().map(|(n, w)| (n, w / total)).collect()
}

/// Per-start-node stream seed, so node order does not affect any single walk.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the xor of seed and stream id
    let mut z = (seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn walk_from(
    graph: &FaceGraph,
    config: &WalkConfig,
    start: usize,
    rng: &mut ChaCha8Rng,
    cache: &mut DistanceCache<'_>,
) -> Vec<usize> {
    let mut walk = Vec::with_capacity(config.walk_length);
    walk.push(start);
    while walk.len() < config.walk_length {
        let current = *walk.last().expect("walk is non-empty");
        let prev = walk.len().checked_sub(2).map(|i| walk[i]);
        let weights = step_weights(prev, current, graph, config, cache);
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if weights.is_empty() || total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = weights[weights.len() - 1].0;
        for &(node, w) in &weights {
            if target < w {
                chosen = node;
                break;
            }
            target -= w;
        }
        walk.push(chosen);
    }
    walk
}

/// `walks_per_node` walks from every node, ordered by start node then walk index.
pub fn sample_walks(graph: &FaceGraph, config: &WalkConfig, seed: u64) -> Result<WalkSet> {
    config.validate()?;
    let mut cache = DistanceCache::new(graph);
    let mut walks = Vec::with_capacity(graph.node_count() * config.walks_per_node);
    for start in 0..graph.node_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, start as u64));
        for _ in 0..config.walks_per_node {
            walks.push(walk_from(graph, config, start, &mut rng, &mut cache));
        }
    }
    Ok(WalkSet { walks })
}

/// Symmetrised windowed co-occurrence counts `C + Cᵀ`.
pub fn cooccurrence_profiles(walks: &WalkSet, window: usize, n_nodes: usize) -> Result<Matrix> {
    let mut counts = Matrix::zeros(n_nodes, n_nodes);
    for walk in &walks.walks {
        if let Some(&bad) = walk.iter().find(|&&v| v >= n_nodes) {
            return Err(Error::Input(format!("walk visits node {bad} but graph has {n_nodes} nodes")));
        }
        for (i, &a) in walk.iter().enumerate() {
            for &b in walk.iter().skip(i + 1).take(window) {
                let v = counts.get(a, b);
                counts.set(a, b, v + 1.0);
            }
        }
    }
    let transposed = counts.transpose();
    counts.add(&transposed)
}

/// `Ã_ij = min(1, A_ij + f(i, j))` with `f = 1` iff the profiles of `i != j`
/// have cosine similarity at least `tau`.
pub fn update_adjacency(graph: &FaceGraph, profiles: &Matrix, tau: f64) -> Result<FaceGraph> {
    let n = graph.node_count();
    if profiles.rows() != n {
        return Err(Error::dim("update_adjacency", graph.adjacency.shape(), profiles.shape()));
    }
    let added = similarity_adjacency(profiles, tau)?;
    let adjacency = graph.adjacency.zip_map(&added, "update_adjacency", |a, f| (a + f).min(1.0))?;
    Ok(FaceGraph {
        adjacency,
        ..graph.clone()
    })
}

/// What the walk-update cosine compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    /// Rows of the windowed co-occurrence matrix.
    #[default]
    Cooccurrence,
    /// Raw node features.
    Features,
}

/// Walks, profiles and adjacency update in one call.
pub fn enrich_graph(graph: &FaceGraph, config: &WalkConfig, tau: f64, source: ProfileSource, seed: u64) -> Result<FaceGraph> {
    match source {
        ProfileSource::Cooccurrence => {
            let walks = sample_walks(graph, config, seed)?;
            let profiles = cooccurrence_profiles(&walks, config.window, graph.node_count())?;
            update_adjacency(graph, &profiles, tau)
        }
        ProfileSource::Features => {
            config.validate()?;
            update_adjacency(graph, &graph.node_features.clone(), tau)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_initial_graph;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn weights_by_distance() {
        let g = FaceGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let cfg = WalkConfig {
            p: 4.0,
            q: 0.25,
            ..WalkConfig::default()
        };
        assert_eq!(transition_weight(1, 1, &g, &cfg), 0.25);
        assert_eq!(transition_weight(1, 2, &g, &cfg), 1.0);
        assert_eq!(transition_weight(1, 3, &g, &cfg), 4.0);
        assert_eq!(transition_weight(0, 3, &g, &cfg), 0.0);
    }

    #[test]
    fn unit_parameters_give_uniform_steps() {
        let g = FaceGraph::from_edges(4, &[(0, 1), (1, 2), (1, 3), (2, 3)]);
        let dist = transition_distribution(Some(0), 1, &g, &WalkConfig::default());
        assert_eq!(dist.len(), 3);
        for (_, p) in dist {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn path_graph_first_step_forced() {
        let g = FaceGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let cfg = WalkConfig {
            walks_per_node: 5,
            walk_length: 2,
            ..WalkConfig::default()
        };
        let ws = sample_walks(&g, &cfg, 3).unwrap();
        for w in ws.walks.iter().take(5) {
            assert_eq!(w, &vec![0, 1]);
        }
    }

    #[test]
    fn isolated_node_terminates() {
        let g = FaceGraph::from_edges(3, &[(0, 1)]);
        let ws = sample_walks(&g, &WalkConfig::default(), 0).unwrap();
        let from_two: Vec<_> = ws.walks.iter().filter(|w| w[0] == 2).collect();
        assert_eq!(from_two.len(), 10);
        assert!(from_two.iter().all(|w| w.len() == 1));
    }

    #[test]
    fn cooccurrence_direct_count() {
        let ws = WalkSet {
            walks: vec![vec![0, 1, 2]],
        };
        let c = cooccurrence_profiles(&ws, 1, 3).unwrap();
        let expected = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(c, expected);
        assert_eq!(cooccurrence_profiles(&WalkSet::default(), 2, 3).unwrap(), Matrix::zeros(3, 3));
        assert!(cooccurrence_profiles(&ws, 1, 2).is_err());
    }

    #[test]
    fn cooccurrence_matches_sliding_window_oracle() {
        let g = FaceGraph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)]);
        let cfg = WalkConfig {
            p: 0.7,
            q: 1.8,
            walks_per_node: 4,
            walk_length: 9,
            window: 3,
        };
        let ws = sample_walks(&g, &cfg, 99).unwrap();
        let c = cooccurrence_profiles(&ws, 3, 6).unwrap();
        let mut oracle = vec![vec![0.0; 6]; 6];
        for w in &ws.walks {
            for i in 0..w.len() {
                for j in 0..w.len() {
                    if i != j && i.abs_diff(j) <= 3 {
                        oracle[w[i]][w[j]] += 1.0;
                    }
                }
            }
        }
        assert_eq!(c, Matrix::from_rows(&oracle).unwrap());
    }

    #[test]
    fn identical_profiles_connect_and_clamp() {
        let g = FaceGraph::from_edges(3, &[(0, 1)]);
        let profiles = Matrix::from_rows(&[[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]).unwrap();
        let out = update_adjacency(&g, &profiles, DEFAULT_WALK_THRESHOLD).unwrap();
        assert_eq!(out.adjacency.get(0, 1), 1.0);
        assert_eq!(out.adjacency.get(0, 2), 0.0);
        let g2 = FaceGraph::from_edges(3, &[]);
        assert_eq!(update_adjacency(&g2, &profiles, 0.824).unwrap().adjacency.get(1, 0), 1.0);
        assert!(update_adjacency(&g, &Matrix::zeros(2, 2), 0.5).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let g = FaceGraph::from_edges(2, &[(0, 1)]);
        let bad = WalkConfig {
            p: 0.0,
            ..WalkConfig::default()
        };
        assert!(sample_walks(&g, &bad, 0).is_err());
    }

    #[test]
    fn feature_profiles_switch() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.9, 0.5], [0.0, 1.0]]).unwrap();
        let g = build_initial_graph(&x, 0.99).unwrap();
        assert_eq!(g.edge_count(), 0);
        let out = enrich_graph(&g, &WalkConfig::default(), 0.8, ProfileSource::Features, 0).unwrap();
        assert_eq!(out.adjacency.get(0, 1), 1.0);
        assert_eq!(out.adjacency.get(0, 2), 0.0);
    }

    fn random_graph(seed: u64, n: usize, density: f64) -> FaceGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < density {
                    edges.push((i, j));
                }
            }
        }
        FaceGraph::from_edges(n, &edges)
    }

    proptest! {
        #[test]
        fn walks_follow_edges_and_are_reproducible(seed in any::<u64>(), n in 1usize..10, p in 0.2f64..5.0, q in 0.2f64..5.0) {
            let g = random_graph(seed, n, 0.4);
            let cfg = WalkConfig { p, q, walks_per_node: 3, walk_length: 8, window: 2 };
            let a = sample_walks(&g, &cfg, seed).unwrap();
            let b = sample_walks(&g, &cfg, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for w in &a.walks {
                for pair in w.windows(2) {
                    prop_assert_eq!(g.adjacency.get(pair[0], pair[1]), 1.0);
                }
            }
        }

        #[test]
        fn distributions_sum_to_one(seed in any::<u64>(), n in 2usize..9, p in 0.2f64..5.0, q in 0.2f64..5.0) {
            let g = random_graph(seed, n, 0.5);
            let cfg = WalkConfig { p, q, ..WalkConfig::default() };
            for current in 0..n {
                for prev in g.neighbors(current).collect::<Vec<_>>() {
                    let d = transition_distribution(Some(prev), current, &g, &cfg);
                    let total: f64 = d.iter().map(|(_, w)| w).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn update_never_removes_edges(seed in any::<u64>(), n in 1usize..10) {
            let g = random_graph(seed, n, 0.3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let profiles = Matrix::uniform(n, n, 0.0, 1.0, &mut rng);
            let out = update_adjacency(&g, &profiles, 0.824).unwrap();
            prop_assert!(out.adjacency.is_symmetric());
            for i in 0..n {
                prop_assert_eq!(out.adjacency.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert!(out.adjacency.get(i, j) >= g.adjacency.get(i, j));
                    prop_assert!(out.adjacency.get(i, j) == 0.0 || out.adjacency.get(i, j) == 1.0);
                }
            }
        }
    }
}
