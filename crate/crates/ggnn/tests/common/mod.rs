#![allow(dead_code)]

use bytetr_core::vsg::EncodedGraph;
use bytetr_ggnn::{Aggregation, EdgeWeighting, GgnnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOKENS: usize = 9;
pub const KINDS: usize = 4;

pub fn small_cfg(hidden: usize, agg: Aggregation, seed: u64) -> GgnnConfig {
    GgnnConfig {
        d_in: (hidden / 2).max(1),
        hidden,
        steps: 2,
        aggregation: agg,
        mlp_hidden: 6,
        num_classes: 5,
        edge_weighting: EdgeWeighting::Scalar,
        seed,
    }
}

pub fn random_graph(seed: u64, max_nodes: usize, classes: usize) -> EncodedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let ne = rng.gen_range(0..=2 * n);
    EncodedGraph {
        nodes: (0..n).map(|_| rng.gen_range(0..TOKENS)).collect(),
        edges: (0..ne)
            .map(|_| {
                (
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                    rng.gen_range(0..KINDS),
                )
            })
            .collect(),
        roots: vec![0],
        label: Some(rng.gen_range(0..classes)),
    }
}

/// Relabels nodes by `perm` (old index `i` becomes `perm[i]`).
pub fn permute(g: &EncodedGraph, perm: &[usize]) -> EncodedGraph {
    let mut nodes = vec![0; g.nodes.len()];
    for (i, &t) in g.nodes.iter().enumerate() {
        nodes[perm[i]] = t;
    }
    EncodedGraph {
        nodes,
        edges: g
            .edges
            .iter()
            .map(|&(s, d, k)| (perm[s], perm[d], k))
            .collect(),
        roots: g.roots.iter().map(|&r| perm[r]).collect(),
        label: g.label,
    }
}

pub fn random_perm(seed: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}
