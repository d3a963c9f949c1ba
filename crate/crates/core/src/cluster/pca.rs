//! Principal component analysis via a symmetric eigendecomposition of either
//! the covariance (d <= n) or the Gram matrix (d > n).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{ClusterError, FeatureMatrix, Provenance};

/// How many components to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    Dim(usize),
    /// Smallest number of components whose cumulative explained variance
    /// reaches this fraction.
    Variance(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major `k x d`, unit-norm rows, descending variance.
    pub components: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
    pub d: usize,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn explained(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.d..(i + 1) * self.d]
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        (0..self.k()).map(|c| self.component(c).iter().zip(row).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum()).collect()
    }

    pub fn reconstruct_row(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &s) in scores.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.component(c)) {
                *o += s * w;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PcaResult {
    pub features: FeatureMatrix,
    pub model: PcaModel,
    pub warnings: Vec<String>,
}

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

pub fn pca_reduce(x: &FeatureMatrix, target: PcaTarget) -> Result<PcaResult, ClusterError> {
    let (n, d) = (x.n(), x.d);
    if n < 2 {
        return Err(ClusterError::DegenerateData(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut xc = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            xc[(i, j)] = v - mean[j];
        }
    }
    let denom = (n - 1) as f64;
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / denom;
    if !(total_variance > 0.0) {
        return Err(ClusterError::DegenerateData("features have zero variance".into()));
    }

    // (eigenvalue, unit component in feature space)
    let mut pairs: Vec<(f64, Vec<f64>)> = if d <= n {
        let cov = xc.transpose() * &xc / denom;
        let eig = SymmetricEigen::new(cov);
        (0..d).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect())).collect()
    } else {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|i| {
                let lam = eig.eigenvalues[i];
                let u = eig.eigenvectors.column(i);
                let mut v: Vec<f64> = (0..d).map(|j| xc.column(j).dot(&u)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|a| *a /= norm);
                }
                (lam / denom, v)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let lam_max = pairs[0].0;
    let rank = pairs.iter().take_while(|p| p.0 > RANK_TOL * lam_max).count();

    let mut warnings = Vec::new();
    let requested = match target {
        PcaTarget::Dim(k) => k,
        PcaTarget::Variance(frac) => {
            let mut acc = 0.0;
            let mut k = rank;
            for (i, p) in pairs.iter().enumerate().take(rank) {
                acc += p.0;
                if acc / total_variance >= frac - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let k = requested.min(n - 1).min(d).max(1);
    if k < requested {
        warnings.push(format!("requested {requested} components; effective dimension is {k} (n = {n}, d = {d})"));
    }
    let k_kept = k.min(rank.max(1));
    if k_kept < k {
        warnings.push(format!("data has rank {rank}; keeping {k_kept} components"));
    }
    let k = k_kept;

    let mut components = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for (lam, mut v) in pairs.into_iter().take(k) {
        // sign: largest-magnitude entry positive (first such on ties)
        let mut best = 0;
        for j in 1..d {
            if v[j].abs() > v[best].abs() + 1e-12 {
                best = j;
            }
        }
        if v[best] < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        components.extend(v);
        eigenvalues.push(lam.max(0.0));
    }
    let model = PcaModel { mean, components, eigenvalues, total_variance, d };
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        data.extend(model.transform_row(x.row(i)));
    }
    let features = FeatureMatrix {
        ids: x.ids.clone(),
        d: k,
        data,
        provenance: Provenance::Pca { source_dim: d, components: k, variance_explained: model.explained() },
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PcaResult { features, model, warnings })
}
