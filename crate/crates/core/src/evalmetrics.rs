//! Reconstruction metrics on binary masks (Dice, false-positive rate, tree
//! length, centerline leakage) and clustering agreement (Rand index and
//! adjusted Rand index).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::BinaryImage;
use crate::skel2d::skeletonize;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reference mask or skeleton is empty")]
    EmptyReference,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub dice: f64,
    pub fpr: f64,
    pub tl: f64,
    pub cl: f64,
}

/// `m`: reference mask, `m_hat`: prediction, `s`/`s_hat`: their skeletons.
///
/// TL = |S ∩ M̂| / |S|, CL = |Ŝ \ M| / |S|, FPR = |M̂ \ M| / |M|,
/// DSC = 2|M̂ ∩ M| / (|M| + |M̂|).
pub fn recon_metrics(m: &BinaryImage, m_hat: &BinaryImage, s: &BinaryImage, s_hat: &BinaryImage) -> Result<ReconReport, MetricsError> {
    for (name, img) in [("prediction", m_hat), ("skeleton", s), ("predicted skeleton", s_hat)] {
        if (img.h, img.w) != (m.h, m.w) {
            return Err(MetricsError::SizeMismatch(format!("{name} is {}x{}, reference {}x{}", img.h, img.w, m.h, m.w)));
        }
    }
    let nm = m.count();
    let ns = s.count();
    if nm == 0 || ns == 0 {
        return Err(MetricsError::EmptyReference);
    }
    let count = |f: &dyn Fn(usize) -> bool| (0..m.data.len()).filter(|&i| f(i)).count() as f64;
    let inter = count(&|i| m.data[i] && m_hat.data[i]);
    let fp = count(&|i| m_hat.data[i] && !m.data[i]);
    let s_in = count(&|i| s.data[i] && m_hat.data[i]);
    let leak = count(&|i| s_hat.data[i] && !m.data[i]);
    let (nm, ns) = (nm as f64, ns as f64);
    Ok(ReconReport {
        dice: 2.0 * inter / (nm + m_hat.count() as f64),
        fpr: fp / nm,
        tl: s_in / ns,
        cl: leak / ns,
    })
}

/// Skeletonizes both masks and scores them.
pub fn mask_metrics(m: &BinaryImage, m_hat: &BinaryImage) -> Result<ReconReport, MetricsError> {
    recon_metrics(m, m_hat, &skeletonize(m), &skeletonize(m_hat))
}

/// Arithmetic mean of each field.
pub fn average_reports(reports: &[ReconReport]) -> Option<ReconReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&ReconReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(ReconReport { dice: sum(|r| r.dice), fpr: sum(|r| r.fpr), tl: sum(|r| r.tl), cl: sum(|r| r.cl) })
}

/// Mean and sample standard deviation (n - 1); sd is 0 for one value.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAgreement {
    pub ri: f64,
    pub ari: f64,
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Contingency counts: (cell counts, row sums, column sums).
fn contingency(c1: &[usize], c2: &[usize]) -> Result<(Vec<u64>, Vec<u64>, Vec<u64>), MetricsError> {
    if c1.len() != c2.len() {
        return Err(MetricsError::SizeMismatch(format!("{} vs {} labels", c1.len(), c2.len())));
    }
    if c1.len() < 2 {
        return Err(MetricsError::SizeMismatch(format!("need at least 2 items, got {}", c1.len())));
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&a, &b) in c1.iter().zip(c2) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    Ok((cells.into_values().collect(), rows.into_values().collect(), cols.into_values().collect()))
}

/// Fraction of item pairs on which the two clusterings agree, over C(n, 2).
pub fn rand_index(c1: &[usize], c2: &[usize]) -> Result<f64, MetricsError> {
    let (cells, rows, cols) = contingency(c1, c2)?;
    let total = choose2(c1.len() as u64);
    let both: f64 = cells.iter().map(|&x| choose2(x)).sum();
    let a: f64 = rows.iter().map(|&x| choose2(x)).sum();
    let b: f64 = cols.iter().map(|&x| choose2(x)).sum();
    // agreements = together in both + apart in both
    Ok((total + 2.0 * both - a - b) / total)
}

/// Hubert-Arabie adjusted Rand index. When the expected and maximum index
/// coincide (both clusterings all-singletons, or both one cluster) the
/// clusterings are identical and 1 is returned.
pub fn adjusted_rand_index(c1: &[usize], c2: &[usize]) -> Result<f64, MetricsError> {
    let (cells, rows, cols) = contingency(c1, c2)?;
    let total = choose2(c1.len() as u64);
    let index: f64 = cells.iter().map(|&x| choose2(x)).sum();
    let a: f64 = rows.iter().map(|&x| choose2(x)).sum();
    let b: f64 = cols.iter().map(|&x| choose2(x)).sum();
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(if same_partition(c1, c2) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

pub fn agreement(c1: &[usize], c2: &[usize]) -> Result<ClusterAgreement, MetricsError> {
    Ok(ClusterAgreement { ri: rand_index(c1, c2)?, ari: adjusted_rand_index(c1, c2)? })
}

/// Equal up to renaming of labels.
pub fn same_partition(c1: &[usize], c2: &[usize]) -> bool {
    if c1.len() != c2.len() {
        return false;
    }
    let mut f = BTreeMap::new();
    let mut g = BTreeMap::new();
    c1.iter().zip(c2).all(|(&a, &b)| *f.entry(a).or_insert(b) == b && *g.entry(b).or_insert(a) == a)
}
