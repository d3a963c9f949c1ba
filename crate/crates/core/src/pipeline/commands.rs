use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ModelSource;
use super::{write_sidecar, CommandReport, Layout, PipelineConfig, PipelineError};
use crate::autoenc::{
    fine_tune, load_checkpoint, save_checkpoint, stacks_to_tensor, stratified_folds, train_cv, ArchitectureDescriptor,
    Autoencoder, EpochRecord,
};
use crate::cluster::{
    cluster_features, read_assignments_csv, read_features_bin, reproducibility_suite, write_assignments_csv,
    write_features_bin, write_features_csv, write_sweep_csv, Clustering, FeatureMatrix, Provenance,
};
use crate::evalmetrics::{adjusted_rand_index, average_reports, mask_metrics, mean_sd, ReconReport};
use crate::image::BinaryImage;
use crate::synthtree::{subject_spec, NUM_CLASSES};
use crate::voxform::{align_and_crop, preprocess_aligned, LabeledVolume, MipStack, MipVariant, View};

/// One row of `cohort/manifest.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub class_label: u8,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
}

/// Contents of `models/<variant>/train.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub variant: MipVariant,
    pub mip_size: usize,
    pub parameter_count: usize,
    pub best_fold: usize,
    pub folds: Vec<FoldSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(xs: &[f64]) -> Self {
        let (mean, sd) = mean_sd(xs);
        Self { mean, sd }
    }
}

/// Across-fold statistics for one (training variant, evaluation variant) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub train_variant: MipVariant,
    pub eval_variant: MipVariant,
    pub n_folds: usize,
    pub n_subjects: usize,
    pub dice: MeanSd,
    pub fpr: MeanSd,
    pub tl: MeanSd,
    pub cl: MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub identity_model: bool,
    pub threshold: f32,
    pub rows: Vec<EvalSummaryRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReconRow {
    train_variant: String,
    eval_variant: String,
    fold: usize,
    subject_id: String,
    view: String,
    dice: f64,
    fpr: f64,
    tl: f64,
    cl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TableRow {
    train_eval: String,
    n_folds: usize,
    n_subjects: usize,
    dice_mean: f64,
    dice_sd: f64,
    fpr_mean: f64,
    fpr_sd: f64,
    tl_mean: f64,
    tl_sd: f64,
    cl_mean: f64,
    cl_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    fold: usize,
    epoch: usize,
    lr: f64,
    train_loss: f64,
    val_loss: Option<f64>,
    best_val_loss: Option<f64>,
}

impl From<&EpochRecord> for CurveRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            fold: r.fold,
            epoch: r.epoch,
            lr: r.lr,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            best_val_loss: r.best_val_loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FinetuneSummary {
    config_hash: String,
    from: MipVariant,
    variant: MipVariant,
    fold: usize,
    train_subjects: Vec<String>,
    final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Selection {
    k_opt: usize,
    plateau: (usize, usize),
    no_plateau: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClusterSummary {
    config_hash: String,
    n_subjects: usize,
    k_used: usize,
    n_clusters: usize,
    seed: u64,
    modularity: f64,
    round_modularity: Vec<f64>,
    selection: Option<Selection>,
    provenance: Provenance,
    warnings: Vec<String>,
    /// ARI against the generating class labels, when the manifest covers
    /// every clustered subject.
    class_ari: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReproFile {
    config_hash: String,
    mean_subset_ari: Option<f64>,
    report: crate::cluster::ReproReport,
}

fn upstream(cfg: &PipelineConfig, command: &str) -> String {
    format!("airtree {command} --out {}", cfg.work_dir.display())
}

fn require(cfg: &PipelineConfig, path: &Path, command: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact { path: path.to_path_buf(), command: upstream(cfg, command) })
    }
}

fn read_json<T: DeserializeOwned>(cfg: &PipelineConfig, path: &Path, command: &str) -> Result<T, PipelineError> {
    require(cfg, path, command)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], hash: &str, command: &str) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_sidecar(path, hash, command)
}

/// Writes `errors/<command>.csv` when subjects failed and removes a stale one
/// otherwise.
fn finish(layout: &Layout, hash: &str, report: &CommandReport) -> Result<(), PipelineError> {
    let path = layout.errors(report.command);
    if report.failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path)?;
            let _ = std::fs::remove_file(super::sidecar_path(&path));
        }
        return Ok(());
    }
    std::fs::create_dir_all(path.parent().expect("errors dir"))?;
    write_csv(&path, &report.failures, hash, report.command)
}

pub fn read_manifest(cfg: &PipelineConfig) -> Result<Vec<ManifestRow>, PipelineError> {
    let path = Layout::new(&cfg.work_dir).manifest();
    require(cfg, &path, "synth")?;
    let mut r = csv::Reader::from_path(&path)?;
    Ok(r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?)
}

/// Generates the class-balanced synthetic cohort. Subject `4 i + c` is the
/// `i`-th member of class `c`.
pub fn synth(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    std::fs::create_dir_all(layout.cohort_dir())?;
    let dims = [cfg.cohort.volume_dim; 3];
    let base = cfg.seeds().synth;
    let n = cfg.cohort.n_per_class * NUM_CLASSES as usize;
    let results: Vec<(String, Result<ManifestRow, PipelineError>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let id = format!("sub{j:04}");
            let class = (j % NUM_CLASSES as usize) as u8;
            let run = || -> Result<ManifestRow, PipelineError> {
                let (spec, vol) = subject_spec(class, j / NUM_CLASSES as usize, base, dims)?;
                vol.save(&layout.volume(&id))?;
                let meta = serde_json::json!({
                    "subject_id": id,
                    "class_label": class,
                    "config_hash": hash,
                    "tree": spec,
                });
                write_json(&layout.volume_meta(&id), &meta)?;
                Ok(ManifestRow { subject_id: id.clone(), class_label: class, seed: spec.seed })
            };
            let r = run();
            (id, r)
        })
        .collect();
    let mut report = CommandReport::new("synth");
    let mut rows = Vec::new();
    for (id, r) in results {
        match r {
            Ok(row) => {
                rows.push(row);
                report.processed += 1;
            }
            Err(e) => report.fail(&id, e),
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::NothingProcessed { command: "synth", failures: report.failures.len() });
    }
    write_csv(&layout.manifest(), &rows, &hash, "synth")?;
    report.outputs.push(layout.manifest());
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Aligns every subject once and writes each configured MIP variant.
pub fn preprocess(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    let rows = read_manifest(cfg)?;
    for &v in &cfg.preprocess.variants {
        std::fs::create_dir_all(layout.mips_dir(v))?;
    }
    let results: Vec<Result<(), PipelineError>> = rows
        .par_iter()
        .map(|row| {
            let id = &row.subject_id;
            let vol = LabeledVolume::load(&layout.volume(id))?;
            let aligned = align_and_crop(&vol)?;
            for &v in &cfg.preprocess.variants {
                preprocess_aligned(&aligned, v, cfg.preprocess.mip_size, id)?.save(&layout.mips_dir(v), Some(&hash))?;
            }
            Ok(())
        })
        .collect();
    let mut report = CommandReport::new("preprocess");
    for (row, r) in rows.iter().zip(results) {
        match r {
            Ok(()) => report.processed += 1,
            Err(e) => report.fail(&row.subject_id, e),
        }
    }
    if report.processed == 0 {
        return Err(PipelineError::NothingProcessed { command: "preprocess", failures: report.failures.len() });
    }
    for &v in &cfg.preprocess.variants {
        report.outputs.push(layout.mips_dir(v));
    }
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Loads the stacks of `rows` for `variant`; unreadable or mis-sized stacks
/// are recorded as failures and skipped.
fn load_stacks(
    cfg: &PipelineConfig,
    variant: MipVariant,
    rows: &[ManifestRow],
    report: &mut CommandReport,
) -> Result<Vec<(ManifestRow, MipStack)>, PipelineError> {
    let dir = Layout::new(&cfg.work_dir).mips_dir(variant);
    require(cfg, &dir, "preprocess")?;
    let size = cfg.preprocess.mip_size;
    let loaded: Vec<Result<MipStack, String>> = rows
        .par_iter()
        .map(|row| {
            let s = MipStack::load(&dir, &row.subject_id).map_err(|e| format!("{variant} stack: {e}"))?;
            if s.size != size || s.variant() != variant {
                return Err(format!("stack is {} at {}, expected {variant} at {size}", s.variant(), s.size));
            }
            Ok(s)
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter().zip(loaded) {
        match r {
            Ok(s) => out.push((row.clone(), s)),
            Err(e) => report.fail(&row.subject_id, e),
        }
    }
    Ok(out)
}

fn tensor_of(stacks: &[(ManifestRow, MipStack)]) -> Result<crate::autoenc::Tensor<f32>, PipelineError> {
    let refs: Vec<&MipStack> = stacks.iter().map(|(_, s)| s).collect();
    Ok(stacks_to_tensor(&refs)?)
}

/// Cross-validated training, one model set per configured variant.
pub fn train(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    let rows = read_manifest(cfg)?;
    let tcfg = cfg.train_config();
    let arch = ArchitectureDescriptor::with_size(cfg.preprocess.mip_size);
    let mut report = CommandReport::new("train");
    for &v in &cfg.train.variants {
        let loaded = load_stacks(cfg, v, &rows, &mut report)?;
        let data = tensor_of(&loaded)?;
        let labels: Vec<usize> = loaded.iter().map(|(r, _)| r.class_label as usize).collect();
        log::info!("train {v}: {} subjects, {} folds", loaded.len(), tcfg.folds);
        let out = train_cv(&data, &labels, &arch, &tcfg, |r| {
            log::info!(
                "{v} fold {} epoch {}: lr {:.2e} train {:.5} val {:.5}",
                r.fold,
                r.epoch,
                r.lr,
                r.train_loss,
                r.val_loss.unwrap_or(f64::NAN)
            )
        })?;
        let dir = layout.model_dir(v);
        std::fs::create_dir_all(&dir)?;
        let ids = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| loaded[i].0.subject_id.clone()).collect() };
        let mut folds = Vec::with_capacity(out.folds.len());
        for f in &out.folds {
            save_checkpoint(&f.model, &layout.fold_checkpoint(v, f.fold), f.best_epoch, f.best_val_loss, Some(&hash))?;
            folds.push(FoldSummary {
                fold: f.fold,
                best_val_loss: f.best_val_loss,
                best_epoch: f.best_epoch,
                epochs_run: f.epochs_run,
                train_subjects: ids(&f.train_indices),
                val_subjects: ids(&f.val_indices),
            });
        }
        let curves: Vec<CurveRow> = out.curves.iter().map(CurveRow::from).collect();
        write_csv(&dir.join("curves.csv"), &curves, &hash, "train")?;
        let model = &out.folds[out.best_fold].model;
        std::fs::write(dir.join("summary.txt"), model.summary())?;
        let summary = TrainSummary {
            config_hash: hash.clone(),
            variant: v,
            mip_size: cfg.preprocess.mip_size,
            parameter_count: model.parameter_count(),
            best_fold: out.best_fold,
            folds,
        };
        write_json(&layout.train_summary(v), &summary)?;
        report.processed += loaded.len();
        report.outputs.push(dir);
    }
    finish(&layout, &hash, &report)?;
    Ok(report)
}

fn best_fold_model(cfg: &PipelineConfig, v: MipVariant) -> Result<(TrainSummary, Autoencoder<f32>), PipelineError> {
    let layout = Layout::new(&cfg.work_dir);
    let ts: TrainSummary = read_json(cfg, &layout.train_summary(v), "train")?;
    let path = layout.fold_checkpoint(v, ts.best_fold);
    require(cfg, &path, "train")?;
    let (model, _) = load_checkpoint::<f32>(&path)?;
    Ok((ts, model))
}

/// Continues training the best fold model on its training subjects' stacks
/// of the fine-tuning variant.
pub fn finetune(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    let rows = read_manifest(cfg)?;
    let (from, to) = (cfg.finetune.from, cfg.finetune.variant);
    let (ts, model) = best_fold_model(cfg, from)?;
    let fold = &ts.folds[ts.best_fold];
    let by_id: HashMap<&str, &ManifestRow> = rows.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    let subset: Vec<ManifestRow> =
        fold.train_subjects.iter().filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone())).collect();
    let mut report = CommandReport::new("finetune");
    let loaded = load_stacks(cfg, to, &subset, &mut report)?;
    let data = tensor_of(&loaded)?;
    let tcfg = cfg.train_config();
    log::info!("finetune {from} -> {to}: fold {}, {} subjects", ts.best_fold, loaded.len());
    let (tuned, records) = fine_tune(&model, &data, &tcfg, ts.best_fold, |r| {
        log::info!("finetune epoch {}: lr {:.2e} train {:.5}", r.epoch, r.lr, r.train_loss)
    })?;
    let dir = layout.finetune_dir(from, to);
    std::fs::create_dir_all(&dir)?;
    let final_loss = records.last().map_or(f64::NAN, |r| r.train_loss);
    save_checkpoint(&tuned, &layout.finetune_checkpoint(from, to), records.len(), final_loss, Some(&hash))?;
    let curves: Vec<CurveRow> = records.iter().map(CurveRow::from).collect();
    write_csv(&dir.join("curves.csv"), &curves, &hash, "finetune")?;
    let summary = FinetuneSummary {
        config_hash: hash.clone(),
        from,
        variant: to,
        fold: ts.best_fold,
        train_subjects: loaded.iter().map(|(r, _)| r.subject_id.clone()).collect(),
        final_train_loss: final_loss,
    };
    write_json(&dir.join("finetune.json"), &summary)?;
    report.processed = loaded.len();
    report.outputs.push(dir);
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Bottleneck features of every subject, flattened channel-major.
pub fn encode(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    let rows = read_manifest(cfg)?;
    let model = match cfg.encode.source {
        ModelSource::Trained => best_fold_model(cfg, cfg.finetune.from)?.1,
        ModelSource::Finetuned => {
            let path = layout.finetune_checkpoint(cfg.finetune.from, cfg.finetune.variant);
            require(cfg, &path, "finetune")?;
            load_checkpoint::<f32>(&path)?.0
        }
    };
    let mut report = CommandReport::new("encode");
    let loaded = load_stacks(cfg, cfg.encode.variant, &rows, &mut report)?;
    if loaded.is_empty() {
        return Err(PipelineError::NothingProcessed { command: "encode", failures: report.failures.len() });
    }
    let d = model.arch.bottleneck_len();
    let mut data = Vec::with_capacity(loaded.len() * d);
    for chunk in loaded.chunks(cfg.train.config.batch_size.max(1)) {
        let b = model.encode_batch(&tensor_of(chunk)?)?;
        if !b.is_finite() {
            return Err(crate::autoenc::AutoencError::NonFinite("bottleneck").into());
        }
        data.extend(b.data.iter().map(|&v| v as f64));
    }
    let ids = loaded.iter().map(|(r, _)| r.subject_id.clone()).collect();
    let x = FeatureMatrix::new(ids, d, data)?;
    std::fs::create_dir_all(layout.features_dir())?;
    write_features_bin(&layout.raw_features(), &x, Some(&hash))?;
    report.processed = x.n();
    report.outputs.push(layout.raw_features());
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// PCA, k selection, kNN graph and Louvain on the encoded features.
pub fn cluster(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    require(cfg, &layout.raw_features(), "encode")?;
    let raw = read_features_bin(&layout.raw_features())?;
    let ccfg = cfg.cluster_config();
    let run = cluster_features(&raw, &ccfg)?;
    let c = &run.clustering;
    log::info!("cluster: k {} -> {} clusters, modularity {:.4}", c.k_used, c.n_clusters(), c.modularity);

    let fdir = layout.features_dir();
    write_features_csv(&fdir.join("reduced.csv"), &run.features)?;
    write_sidecar(&fdir.join("reduced.csv"), &hash, "cluster")?;
    write_features_bin(&fdir.join("reduced.bin"), &run.features, Some(&hash))?;
    let cdir = layout.clusters_dir();
    std::fs::create_dir_all(&cdir)?;
    write_assignments_csv(&layout.assignments(), &c.ids, &c.labels)?;
    write_sidecar(&layout.assignments(), &hash, "cluster")?;
    if let Some(s) = &run.selection {
        write_sweep_csv(&cdir.join("sweep.csv"), &s.curve)?;
        write_sidecar(&cdir.join("sweep.csv"), &hash, "cluster")?;
    }

    let class_ari = read_manifest(cfg).ok().and_then(|rows| {
        let class: HashMap<&str, usize> = rows.iter().map(|r| (r.subject_id.as_str(), r.class_label as usize)).collect();
        let truth: Option<Vec<usize>> = c.ids.iter().map(|id| class.get(id.as_str()).copied()).collect();
        truth.and_then(|t| adjusted_rand_index(&t, &c.labels).ok())
    });
    let summary = ClusterSummary {
        config_hash: hash.clone(),
        n_subjects: c.ids.len(),
        k_used: c.k_used,
        n_clusters: c.n_clusters(),
        seed: c.seed,
        modularity: c.modularity,
        round_modularity: c.round_modularity.clone(),
        selection: run.selection.as_ref().map(|s| Selection { k_opt: s.k_opt, plateau: s.plateau, no_plateau: s.no_plateau }),
        provenance: run.features.provenance.clone(),
        warnings: run.warnings.clone(),
        class_ari,
    };
    write_json(&layout.cluster_summary(), &summary)?;
    let mut report = CommandReport::new("cluster");
    report.processed = c.ids.len();
    report.outputs.push(cdir);
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Per-subject, per-view reconstruction metrics for every configured
/// (training variant, evaluation variant) pair on each fold's validation
/// subjects, with across-fold mean and standard deviation.
pub fn evaluate(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    let rows = read_manifest(cfg)?;
    let by_id: HashMap<&str, &ManifestRow> = rows.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    let ev = &cfg.evaluate;
    let mut report = CommandReport::new("evaluate");
    let mut recon_rows = Vec::new();
    let mut summary_rows = Vec::new();
    for &(tv, evv) in &ev.pairs {
        let folds: Vec<(usize, Vec<String>)> = if ev.identity_model && !layout.train_summary(tv).exists() {
            // same split the train command would use
            let labels: Vec<usize> = rows.iter().map(|r| r.class_label as usize).collect();
            let fold_of = stratified_folds(&labels, cfg.train.config.folds, cfg.seeds().folds)?;
            (0..cfg.train.config.folds)
                .map(|f| (f, rows.iter().zip(&fold_of).filter(|(_, &g)| g == f).map(|(r, _)| r.subject_id.clone()).collect()))
                .collect()
        } else {
            let ts: TrainSummary = read_json(cfg, &layout.train_summary(tv), "train")?;
            ts.folds.into_iter().map(|f| (f.fold, f.val_subjects)).collect()
        };
        let mut fold_means: Vec<ReconReport> = Vec::new();
        let mut n_subjects = 0;
        for (fold, val) in folds {
            let model = if ev.identity_model {
                None
            } else {
                let path = layout.fold_checkpoint(tv, fold);
                require(cfg, &path, "train")?;
                Some(load_checkpoint::<f32>(&path)?.0)
            };
            let subset: Vec<ManifestRow> = val.iter().filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone())).collect();
            let loaded = load_stacks(cfg, evv, &subset, &mut report)?;
            let mut subject_means = Vec::new();
            for chunk in loaded.chunks(cfg.train.config.batch_size.max(1)) {
                let recon = match &model {
                    Some(m) => Some(m.forward(&tensor_of(chunk)?)?.recon),
                    None => None,
                };
                let scored: Vec<Result<Vec<ReconReport>, PipelineError>> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(i, (_, stack))| {
                        let pred = recon.as_ref().map_or(stack.data.as_slice(), |t| t.sample(i));
                        let n = stack.size * stack.size;
                        (0..View::ALL.len())
                            .map(|vi| {
                                let m = stack.view_mask(vi, 0.5);
                                let m_hat = BinaryImage::threshold(stack.size, stack.size, &pred[vi * n..(vi + 1) * n], ev.threshold);
                                Ok(mask_metrics(&m, &m_hat)?)
                            })
                            .collect()
                    })
                    .collect();
                for ((row, _), r) in chunk.iter().zip(scored) {
                    match r {
                        Ok(views) => {
                            for (view, m) in View::ALL.iter().zip(&views) {
                                recon_rows.push(ReconRow {
                                    train_variant: tv.to_string(),
                                    eval_variant: evv.to_string(),
                                    fold,
                                    subject_id: row.subject_id.clone(),
                                    view: view.name().to_string(),
                                    dice: m.dice,
                                    fpr: m.fpr,
                                    tl: m.tl,
                                    cl: m.cl,
                                });
                            }
                            subject_means.push(average_reports(&views).expect("three views"));
                        }
                        Err(e) => report.fail(&row.subject_id, e),
                    }
                }
            }
            n_subjects += subject_means.len();
            if let Some(m) = average_reports(&subject_means) {
                fold_means.push(m);
            }
        }
        let stat = |f: fn(&ReconReport) -> f64| MeanSd::of(&fold_means.iter().map(f).collect::<Vec<_>>());
        let row = EvalSummaryRow {
            train_variant: tv,
            eval_variant: evv,
            n_folds: fold_means.len(),
            n_subjects,
            dice: stat(|r| r.dice),
            fpr: stat(|r| r.fpr),
            tl: stat(|r| r.tl),
            cl: stat(|r| r.cl),
        };
        log::info!(
            "{tv}/{evv}: dice {:.3}±{:.3} fpr {:.3}±{:.3} tl {:.3}±{:.3} cl {:.3}±{:.3}",
            row.dice.mean,
            row.dice.sd,
            row.fpr.mean,
            row.fpr.sd,
            row.tl.mean,
            row.tl.sd,
            row.cl.mean,
            row.cl.sd
        );
        summary_rows.push(row);
    }
    let dir = layout.eval_dir();
    std::fs::create_dir_all(&dir)?;
    write_csv(&dir.join("recon.csv"), &recon_rows, &hash, "evaluate")?;
    let table: Vec<TableRow> = summary_rows
        .iter()
        .map(|r| TableRow {
            train_eval: format!("{}/{}", r.train_variant, r.eval_variant),
            n_folds: r.n_folds,
            n_subjects: r.n_subjects,
            dice_mean: r.dice.mean,
            dice_sd: r.dice.sd,
            fpr_mean: r.fpr.mean,
            fpr_sd: r.fpr.sd,
            tl_mean: r.tl.mean,
            tl_sd: r.tl.sd,
            cl_mean: r.cl.mean,
            cl_sd: r.cl.sd,
        })
        .collect();
    write_csv(&dir.join("table.csv"), &table, &hash, "evaluate")?;
    let summary = EvalSummary { config_hash: hash.clone(), identity_model: ev.identity_model, threshold: ev.threshold, rows: summary_rows };
    write_json(&dir.join("summary.json"), &summary)?;
    report.processed = recon_rows.len() / View::ALL.len();
    report.outputs.push(dir);
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Agreement of subset, cosine, alternative-PCA and varying-k clusterings
/// with the clustering written by the cluster command.
pub fn reproduce(cfg: &PipelineConfig) -> Result<CommandReport, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout::new(&cfg.work_dir);
    require(cfg, &layout.raw_features(), "encode")?;
    let summary: ClusterSummary = read_json(cfg, &layout.cluster_summary(), "cluster")?;
    require(cfg, &layout.assignments(), "cluster")?;
    let raw = read_features_bin(&layout.raw_features())?;
    let (ids, labels) = read_assignments_csv(&layout.assignments())?;
    let reference = Clustering {
        ids,
        labels,
        k_used: summary.k_used,
        seed: summary.seed,
        modularity: summary.modularity,
        round_modularity: summary.round_modularity,
    };
    let rep = reproducibility_suite(&raw, &reference, &cfg.cluster_config(), &cfg.repro_config())?;
    let dir = layout.repro_dir();
    std::fs::create_dir_all(&dir)?;
    write_csv(&dir.join("variants.csv"), &rep.variants, &hash, "reproduce")?;
    write_csv(&dir.join("k_curve.csv"), &rep.k_curve, &hash, "reproduce")?;
    let mean = rep.mean_subset_ari();
    if let Some(m) = mean {
        log::info!("reproduce: mean subset ARI {m:.3}");
    }
    write_json(&dir.join("report.json"), &ReproFile { config_hash: hash.clone(), mean_subset_ari: mean, report: rep })?;
    let mut report = CommandReport::new("reproduce");
    report.processed = raw.n();
    report.outputs.push(dir);
    finish(&layout, &hash, &report)?;
    Ok(report)
}

/// Every command in dependency order; stops at the first command-level error.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<CommandReport>, PipelineError> {
    let steps: [fn(&PipelineConfig) -> Result<CommandReport, PipelineError>; 8] =
        [synth, preprocess, train, finetune, encode, cluster, evaluate, reproduce];
    steps.iter().map(|step| step(cfg)).collect()
}
