//! Exact k-nearest-neighbour graphs, symmetrized by union.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClusterError, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Unit,
    /// The raw distance as edge weight.
    Distance,
    /// `exp(-d^2 / sigma^2)`, sigma = mean of all stored neighbour distances.
    Gaussian,
}

fn distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b) {
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            if aa == 0.0 || bb == 0.0 {
                // a zero vector has no direction; treat as orthogonal
                return 1.0;
            }
            (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
        }
    }
}

/// Every row's other points sorted by (distance, index). Built once and
/// reused for every k of a sweep.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    pub metric: Metric,
    pub ranked: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    pub fn new(x: &FeatureMatrix, metric: Metric) -> Self {
        let n = x.n();
        let ranked = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, distance(x.row(i), x.row(j), metric))).collect();
                row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                row
            })
            .collect();
        Self { metric, ranked }
    }

    pub fn n(&self) -> usize {
        self.ranked.len()
    }

    pub fn graph(&self, k: usize, weight_mode: WeightMode) -> Result<KnnGraph, ClusterError> {
        let n = self.n();
        if k == 0 || k >= n {
            return Err(ClusterError::InvalidK { k, n });
        }
        let sigma = self.ranked.iter().flat_map(|r| r[..k].iter().map(|p| p.1)).sum::<f64>() / (n * k) as f64;
        let weight = |d: f64| match weight_mode {
            WeightMode::Unit => 1.0,
            WeightMode::Distance => d,
            WeightMode::Gaussian => {
                if sigma > 0.0 {
                    (-(d * d) / (sigma * sigma)).exp()
                } else {
                    1.0
                }
            }
        };
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, row) in self.ranked.iter().enumerate() {
            for &(j, d) in &row[..k] {
                adj[i].push((j, weight(d)));
                adj[j].push((i, weight(d)));
            }
        }
        for a in &mut adj {
            a.sort_by(|x, y| x.0.cmp(&y.0));
            a.dedup_by_key(|e| e.0);
        }
        Ok(KnnGraph { k, metric: self.metric, weight_mode, adj })
    }
}

/// Undirected weighted graph without self-edges; `adj[i]` is sorted by
/// neighbour index and every edge appears in both endpoint lists.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub metric: Metric,
    pub weight_mode: WeightMode,
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    /// Graph from an explicit undirected edge list (`k` is recorded as 0).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i != j {
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
        for a in &mut adj {
            a.sort_by(|x, y| x.0.cmp(&y.0));
            a.dedup_by_key(|e| e.0);
        }
        Self { k: 0, metric: Metric::L2, weight_mode: WeightMode::Unit, adj }
    }

    /// Each undirected edge once, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, a) in self.adj.iter().enumerate() {
            out.extend(a.iter().filter(|e| e.0 > i).map(|&(j, w)| (i, j, w)));
        }
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }
}

pub fn knn_graph(x: &FeatureMatrix, k: usize, metric: Metric, weight_mode: WeightMode) -> Result<KnnGraph, ClusterError> {
    if k == 0 || k >= x.n() {
        return Err(ClusterError::InvalidK { k, n: x.n() });
    }
    NeighborIndex::new(x, metric).graph(k, weight_mode)
}
