//! CSV and binary containers for feature matrices, assignments and sweeps.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClusterError, FeatureMatrix, Provenance, SweepPoint};

const MAGIC: &[u8; 8] = b"FEAT0001";

fn csv_err(e: csv::Error) -> ClusterError {
    ClusterError::Format(e.to_string())
}

/// Header `subject_id,f0,...,f{d-1}`; values in shortest round-trip form.
pub fn write_features_csv(path: &Path, x: &FeatureMatrix) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..x.d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..x.n() {
        let mut rec = vec![x.ids[i].clone()];
        rec.extend(x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix, ClusterError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let d = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    let (mut ids, mut data) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|e| ClusterError::Format(format!("{v:?}: {e}")))?);
        }
    }
    FeatureMatrix::new(ids, d, data)
}

#[derive(Serialize, Deserialize)]
struct BinHeader {
    n: usize,
    d: usize,
    ids: Vec<String>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// 8-byte magic, u64 LE header length, JSON header, then `n*d` LE f64.
pub fn write_features_bin(path: &Path, x: &FeatureMatrix, config_hash: Option<&str>) -> Result<(), ClusterError> {
    let header = BinHeader { n: x.n(), d: x.d, ids: x.ids.clone(), provenance: x.provenance.clone(), config_hash: config_hash.map(str::to_string) };
    let json = serde_json::to_vec(&header).map_err(|e| ClusterError::Format(e.to_string()))?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    for v in &x.data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_features_bin(path: &Path) -> Result<FeatureMatrix, ClusterError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| ClusterError::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature container"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let h: BinHeader = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?).map_err(|e| bad(&e.to_string()))?;
    let blob = &bytes[16 + hlen..];
    if blob.len() != h.n * h.d * 8 || h.ids.len() != h.n {
        return Err(bad("blob size does not match header"));
    }
    let data = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut x = FeatureMatrix::new(h.ids, h.d, data)?;
    x.provenance = h.provenance;
    Ok(x)
}

/// Header `subject_id,label`.
pub fn write_assignments_csv(path: &Path, ids: &[String], labels: &[usize]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["subject_id", "label"]).map_err(csv_err)?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments_csv(path: &Path) -> Result<(Vec<String>, Vec<usize>), ClusterError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(ClusterError::Format(format!("expected 2 columns, got {}", rec.len())));
        }
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse().map_err(|e| ClusterError::Format(format!("label {:?}: {e}", &rec[1])))?);
    }
    Ok((ids, labels))
}

/// Header `k,n_clusters,modularity`.
pub fn write_sweep_csv(path: &Path, curve: &[SweepPoint]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["k", "n_clusters", "modularity"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.k.to_string(), p.n_clusters.to_string(), p.modularity.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
