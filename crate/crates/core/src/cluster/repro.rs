//! Agreement of clustering variants with a reference clustering: random
//! subsets, varying k, cosine distance and an alternative PCA dimension.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cluster_features, ClusterConfig, ClusterError, Clustering, FeatureMatrix, Metric, PcaTarget};
use crate::evalmetrics::agreement;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproConfig {
    pub subsets: usize,
    pub subset_fraction: f64,
    /// k values for the varying-k curve; empty uses the sweep grid.
    pub k_values: Vec<usize>,
    pub alt_pca_dim: usize,
    pub seed: u64,
}

impl Default for ReproConfig {
    fn default() -> Self {
        Self { subsets: 5, subset_fraction: 0.8, k_values: Vec::new(), alt_pca_dim: 1024, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub ri: f64,
    pub ari: f64,
    /// Subjects present in both clusterings.
    pub n_shared: usize,
    pub k_used: usize,
    pub n_clusters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCurvePoint {
    pub k: usize,
    pub n_clusters: usize,
    pub ri: f64,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub reference_k: usize,
    pub reference_clusters: usize,
    pub variants: Vec<VariantReport>,
    pub k_curve: Vec<KCurvePoint>,
}

impl ReproReport {
    pub fn mean_subset_ari(&self) -> Option<f64> {
        let v: Vec<f64> = self.variants.iter().filter(|v| v.variant.starts_with("subset")).map(|v| v.ari).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Compares `other` with `reference` on the subjects they share.
fn compare(reference: &Clustering, other: &Clustering, variant: String) -> Result<VariantReport, ClusterError> {
    let pos: std::collections::HashMap<&str, usize> = reference.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (id, &l) in other.ids.iter().zip(&other.labels) {
        if let Some(&i) = pos.get(id.as_str()) {
            a.push(reference.labels[i]);
            b.push(l);
        }
    }
    let ag = agreement(&a, &b)?;
    Ok(VariantReport { variant, ri: ag.ri, ari: ag.ari, n_shared: a.len(), k_used: other.k_used, n_clusters: other.n_clusters() })
}

/// Re-runs the clustering under each variant with k fixed to the
/// reference k (clamped to the subset size) and reports RI/ARI against
/// `reference`. `raw` holds the unreduced features of every subject.
pub fn reproducibility_suite(
    raw: &FeatureMatrix,
    reference: &Clustering,
    cfg: &ClusterConfig,
    rcfg: &ReproConfig,
) -> Result<ReproReport, ClusterError> {
    let n = raw.n();
    if n < 2 {
        return Err(ClusterError::DegenerateData(format!("need at least 2 subjects, got {n}")));
    }
    let fixed = ClusterConfig { k: Some(reference.k_used), ..cfg.clone() };
    let mut variants = Vec::new();

    let same = cluster_features(raw, &fixed)?;
    variants.push(compare(reference, &same.clustering, "identical".into())?);

    let m = ((n as f64) * rcfg.subset_fraction).round().clamp(2.0, n as f64) as usize;
    for s in 0..rcfg.subsets {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed::derive(rcfg.seed, &[s as u64])));
        idx.truncate(m);
        idx.sort_unstable();
        let run = cluster_features(&raw.select_rows(&idx), &fixed)?;
        variants.push(compare(reference, &run.clustering, format!("subset_{s}"))?);
    }

    let cos = cluster_features(raw, &ClusterConfig { metric: Metric::Cosine, ..fixed.clone() })?;
    variants.push(compare(reference, &cos.clustering, "cosine".into())?);

    let alt = cluster_features(raw, &ClusterConfig { pca: Some(PcaTarget::Dim(rcfg.alt_pca_dim)), ..fixed.clone() })?;
    variants.push(compare(reference, &alt.clustering, format!("pca_{}", rcfg.alt_pca_dim))?);

    let ks = if rcfg.k_values.is_empty() { super::k_grid(cfg.k_min, cfg.k_max, cfg.k_step, n) } else { rcfg.k_values.clone() };
    // reduce once; only the graph changes with k
    let base = match cfg.pca {
        Some(t) => super::pca_reduce(raw, t)?.features,
        None => raw.clone(),
    };
    let index = super::NeighborIndex::new(&base, cfg.metric);
    let mut k_curve = Vec::with_capacity(ks.len());
    for &k in ks.iter().filter(|&&k| k >= 1 && k < n) {
        let g = index.graph(k, cfg.weight_mode)?;
        let r = super::louvain(&g, cfg.seed, cfg.resolution)?;
        let ag = agreement(&reference.labels, &r.labels)?;
        k_curve.push(KCurvePoint { k, n_clusters: r.n_communities, ri: ag.ri, ari: ag.ari });
    }
    Ok(ReproReport { reference_k: reference.k_used, reference_clusters: reference.n_clusters(), variants, k_curve })
}
