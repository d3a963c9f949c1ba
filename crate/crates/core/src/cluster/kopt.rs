//! Choice of k: sweep k, count Louvain communities, and take the midpoint of
//! the first run of constant community count spanning at least `span`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{NeighborIndex, WeightMode};
use super::louvain::louvain;
use super::ClusterError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub n_clusters: usize,
    pub modularity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k_opt: usize,
    /// First and last sampled k of the chosen run.
    pub plateau: (usize, usize),
    /// No run reached the required span; the longest run was used.
    pub no_plateau: bool,
    pub curve: Vec<SweepPoint>,
}

/// Sampled k values: `[lo, hi]` clamped to `[1, n - 1]`, every `step`.
pub fn k_grid(lo: usize, hi: usize, step: usize, n: usize) -> Vec<usize> {
    let lo = lo.max(1);
    let hi = hi.min(n.saturating_sub(1));
    if lo > hi {
        return Vec::new();
    }
    (lo..=hi).step_by(step.max(1)).collect()
}

/// Maximal runs of equal `n_clusters` over consecutive curve samples, as
/// index ranges into the curve.
fn runs(curve: &[SweepPoint]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=curve.len() {
        if i == curve.len() || curve[i].n_clusters != curve[start].n_clusters {
            out.push((start, i - 1));
            start = i;
        }
    }
    out
}

/// Sampled k nearest to the run midpoint; an exact tie goes to the lower k.
fn midpoint_k(curve: &[SweepPoint], (a, b): (usize, usize)) -> usize {
    let mid2 = curve[a].k + curve[b].k; // twice the midpoint, kept integral
    curve[a..=b].iter().map(|p| p.k).min_by_key(|&k| ((2 * k).abs_diff(mid2), k)).expect("non-empty run")
}

/// Applies the plateau rule to an existing curve (sorted by k).
pub fn select_from_curve(curve: Vec<SweepPoint>, span: usize) -> Result<KSelection, ClusterError> {
    if curve.is_empty() {
        return Err(ClusterError::InvalidK { k: 0, n: 0 });
    }
    let rs = runs(&curve);
    let span_of = |r: &(usize, usize)| curve[r.1].k - curve[r.0].k;
    let (run, no_plateau) = match rs.iter().find(|r| span_of(r) >= span) {
        Some(r) => (*r, false),
        None => {
            // longest run; ties go to the earliest
            let r = *rs.iter().rev().max_by_key(|r| span_of(r)).unwrap();
            log::warn!("no plateau of span {span}; using the longest run k = {}..{}", curve[r.0].k, curve[r.1].k);
            (r, true)
        }
    };
    Ok(KSelection { k_opt: midpoint_k(&curve, run), plateau: (curve[run.0].k, curve[run.1].k), no_plateau, curve })
}

/// Runs the graph + Louvain for every k in `ks` (independent runs,
/// evaluated concurrently, collected in k order).
pub fn k_sweep(index: &NeighborIndex, ks: &[usize], weight_mode: WeightMode, seed: u64, gamma: f64) -> Result<Vec<SweepPoint>, ClusterError> {
    ks.par_iter()
        .map(|&k| {
            let g = index.graph(k, weight_mode)?;
            let r = louvain(&g, seed, gamma)?;
            Ok(SweepPoint { k, n_clusters: r.n_communities, modularity: r.modularity })
        })
        .collect()
}

pub fn select_k_opt(
    index: &NeighborIndex,
    k_range: (usize, usize),
    step: usize,
    span: usize,
    weight_mode: WeightMode,
    seed: u64,
    gamma: f64,
) -> Result<KSelection, ClusterError> {
    let ks = k_grid(k_range.0, k_range.1, step, index.n());
    if ks.is_empty() {
        return Err(ClusterError::InvalidK { k: k_range.0, n: index.n() });
    }
    select_from_curve(k_sweep(index, &ks, weight_mode, seed, gamma)?, span)
}
