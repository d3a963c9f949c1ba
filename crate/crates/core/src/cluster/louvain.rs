//! Louvain modularity optimization: local node moves, then aggregation of
//! communities into super-nodes, repeated until nothing changes.
//!
//! Nodes are first relabelled by their position in the visit order and all
//! later tie-breaking uses those positions, so permuting the input graph
//! together with the visit order permutes the result identically.

use rand::seq::SliceRandom;

use super::knn::KnnGraph;
use super::ClusterError;
use crate::seed;

/// Minimum modularity gain for a move.
pub const GAIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LouvainResult {
    /// Community per node, numbered by first appearance in node order.
    pub labels: Vec<usize>,
    pub modularity: f64,
    /// Modularity of the partition after each level, starting with the
    /// all-singletons partition.
    pub round_modularity: Vec<f64>,
    pub n_communities: usize,
}

/// Weighted graph with explicit self-loop weights (internal edge weight of
/// a super-node).
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
}

impl Level {
    fn degree(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|e| e.1).sum::<f64>() + 2.0 * self.self_w[i]
    }
}

/// Modularity of `labels` on `g` at resolution `gamma`.
pub fn modularity(g: &KnnGraph, labels: &[usize], gamma: f64) -> f64 {
    let two_m: f64 = g.adj.iter().flat_map(|a| a.iter().map(|e| e.1)).sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let nc = labels.iter().max().map_or(0, |m| m + 1);
    let mut tot = vec![0.0; nc];
    let mut inside = vec![0.0; nc];
    for (i, a) in g.adj.iter().enumerate() {
        for &(j, w) in a {
            tot[labels[i]] += w;
            if labels[i] == labels[j] {
                inside[labels[i]] += w;
            }
        }
    }
    (0..nc).map(|c| inside[c] / two_m - gamma * (tot[c] / two_m).powi(2)).sum()
}

/// Moves nodes (in index order) between communities until a full pass makes
/// no move. Returns community per node, renumbered by first appearance.
fn local_moves(level: &Level, two_m: f64, gamma: f64) -> (Vec<usize>, bool) {
    let n = level.adj.len();
    let k: Vec<f64> = (0..n).map(|i| level.degree(i)).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut moved_any = false;
    let mut w_to = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        let mut moved = false;
        for i in 0..n {
            let ci = comm[i];
            touched.clear();
            for &(j, w) in &level.adj[i] {
                let cj = comm[j];
                if !seen[cj] {
                    seen[cj] = true;
                    touched.push(cj);
                }
                w_to[cj] += w;
            }
            tot[ci] -= k[i];
            let gain = |c: usize, w_to: &[f64], tot: &[f64]| w_to[c] - gamma * tot[c] * k[i] / two_m;
            let stay = gain(ci, &w_to, &tot);
            let (mut best_c, mut best_gain) = (ci, stay);
            touched.sort_unstable();
            for &c in &touched {
                if c == ci {
                    continue;
                }
                let g = gain(c, &w_to, &tot);
                // strict improvement only: ties keep the lower community id
                if g > best_gain + GAIN_TOL {
                    best_c = c;
                    best_gain = g;
                }
            }
            tot[best_c] += k[i];
            if best_c != ci {
                comm[i] = best_c;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                w_to[c] = 0.0;
                seen[c] = false;
            }
        }
        if !moved {
            break;
        }
    }
    (renumber(&comm), moved_any)
}

fn renumber(comm: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; comm.len().max(comm.iter().max().map_or(0, |m| m + 1))];
    let mut next = 0;
    comm.iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect()
}

fn aggregate(level: &Level, comm: &[usize]) -> Level {
    let nc = comm.iter().max().map_or(0, |m| m + 1);
    let mut self_w = vec![0.0; nc];
    let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); nc];
    for (i, a) in level.adj.iter().enumerate() {
        let ci = comm[i];
        self_w[ci] += level.self_w[i];
        for &(j, w) in a {
            let cj = comm[j];
            if ci == cj {
                // each internal edge is seen from both ends
                self_w[ci] += 0.5 * w;
            } else {
                *maps[ci].entry(cj).or_default() += w;
            }
        }
    }
    Level { adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(), self_w }
}

/// Louvain with a seeded shuffle as the level-0 visit order.
pub fn louvain(g: &KnnGraph, seed: u64, gamma: f64) -> Result<LouvainResult, ClusterError> {
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.shuffle(&mut seed::rng(seed));
    louvain_with_order(g, &order, gamma)
}

/// Louvain visiting level-0 nodes in `order` (a permutation of the nodes).
pub fn louvain_with_order(g: &KnnGraph, order: &[usize], gamma: f64) -> Result<LouvainResult, ClusterError> {
    let n = g.n();
    if n == 0 {
        return Err(ClusterError::EmptyGraph);
    }
    assert_eq!(order.len(), n, "visit order must cover every node");
    let mut pos = vec![usize::MAX; n];
    for (p, &v) in order.iter().enumerate() {
        assert!(pos[v] == usize::MAX, "visit order repeats node {v}");
        pos[v] = p;
    }
    let adj = order
        .iter()
        .map(|&v| {
            let mut a: Vec<(usize, f64)> = g.adj[v].iter().map(|&(j, w)| (pos[j], w)).collect();
            a.sort_by(|x, y| x.0.cmp(&y.0));
            a
        })
        .collect();
    let mut level = Level { adj, self_w: vec![0.0; n] };
    let two_m: f64 = (0..n).map(|i| level.degree(i)).sum();

    // community of each position-indexed original node
    let mut assign: Vec<usize> = (0..n).collect();
    let to_labels = |assign: &[usize]| {
        let mut labels = vec![0; n];
        for (p, &v) in order.iter().enumerate() {
            labels[v] = assign[p];
        }
        renumber(&labels)
    };
    let mut rounds = vec![modularity(g, &to_labels(&assign), gamma)];
    if two_m > 0.0 {
        loop {
            let (comm, moved) = local_moves(&level, two_m, gamma);
            if !moved {
                break;
            }
            for a in assign.iter_mut() {
                *a = comm[*a];
            }
            level = aggregate(&level, &comm);
            rounds.push(modularity(g, &to_labels(&assign), gamma));
        }
    }
    let labels = to_labels(&assign);
    let n_communities = labels.iter().max().map_or(0, |m| m + 1);
    Ok(LouvainResult { modularity: *rounds.last().unwrap(), labels, round_modularity: rounds, n_communities })
}
