//! Feature reduction, kNN graphs, Louvain community detection, choice of k
//! and agreement between clustering variants.

mod io;
mod knn;
mod kopt;
mod louvain;
mod pca;
mod repro;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    read_assignments_csv, read_features_bin, read_features_csv, write_assignments_csv, write_features_bin, write_features_csv,
    write_sweep_csv,
};
pub use knn::{knn_graph, KnnGraph, Metric, NeighborIndex, WeightMode};
pub use kopt::{k_grid, k_sweep, select_from_curve, select_k_opt, KSelection, SweepPoint};
pub use louvain::{louvain, louvain_with_order, modularity, LouvainResult, GAIN_TOL};
pub use pca::{pca_reduce, PcaModel, PcaResult, PcaTarget};
pub use repro::{reproducibility_suite, KCurvePoint, ReproConfig, ReproReport, VariantReport};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid k = {k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Metrics(#[from] crate::evalmetrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    Pca { source_dim: usize, components: usize, variance_explained: f64 },
}

/// Row-major `n x d` matrix with one subject per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub d: usize,
    pub data: Vec<f64>,
    pub provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, d: usize, data: Vec<f64>) -> Result<Self, ClusterError> {
        if data.len() != ids.len() * d {
            return Err(ClusterError::Format(format!("{} values for {} rows of width {d}", data.len(), ids.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::DegenerateData("non-finite feature value".into()));
        }
        Ok(Self { ids, d, data, provenance: Provenance::Raw })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { ids: rows.iter().map(|&r| self.ids[r].clone()).collect(), d: self.d, data, provenance: self.provenance.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// `None` clusters the features as given.
    pub pca: Option<PcaTarget>,
    /// Fixed k; `None` selects k by the plateau rule.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    pub plateau_span: usize,
    pub metric: Metric,
    pub weight_mode: WeightMode,
    pub resolution: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            pca: Some(PcaTarget::Dim(2048)),
            k: None,
            k_min: 5,
            k_max: 2500,
            k_step: 5,
            plateau_span: 100,
            metric: Metric::L2,
            weight_mode: WeightMode::Unit,
            resolution: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub k_used: usize,
    pub seed: u64,
    pub modularity: f64,
    pub round_modularity: Vec<f64>,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Debug)]
pub struct ClusterRun {
    /// Features the graph was built on.
    pub features: FeatureMatrix,
    pub warnings: Vec<String>,
    pub selection: Option<KSelection>,
    pub clustering: Clustering,
}

/// PCA (optional), k selection (unless fixed), kNN graph and Louvain.
pub fn cluster_features(raw: &FeatureMatrix, cfg: &ClusterConfig) -> Result<ClusterRun, ClusterError> {
    let (features, warnings) = match cfg.pca {
        Some(t) => {
            let r = pca_reduce(raw, t)?;
            (r.features, r.warnings)
        }
        None => (raw.clone(), Vec::new()),
    };
    let index = NeighborIndex::new(&features, cfg.metric);
    let (k, selection) = match cfg.k {
        Some(k) => (k.min(features.n().saturating_sub(1)).max(1), None),
        None => {
            let s = select_k_opt(&index, (cfg.k_min, cfg.k_max), cfg.k_step, cfg.plateau_span, cfg.weight_mode, cfg.seed, cfg.resolution)?;
            (s.k_opt, Some(s))
        }
    };
    let g = index.graph(k, cfg.weight_mode)?;
    let r = louvain(&g, cfg.seed, cfg.resolution)?;
    let clustering = Clustering {
        ids: features.ids.clone(),
        labels: r.labels,
        k_used: k,
        seed: cfg.seed,
        modularity: r.modularity,
        round_modularity: r.round_modularity,
    };
    Ok(ClusterRun { features, warnings, selection, clustering })
}
