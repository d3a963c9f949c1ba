use airtree::autoenc::{
    evaluate_loss, fine_tune, fit_epochs, stacks_to_tensor, train_cv, ArchitectureDescriptor, Autoencoder, Tensor,
    TrainConfig,
};
use airtree::synthtree::cohort;
use airtree::voxform::{preprocess, MipStack, MipVariant};
use rayon::prelude::*;

const DT: MipVariant = MipVariant { dilated: true, trachea_included: true };

fn stacks(n_per_class: usize, dim: usize, size: usize, seed: u64) -> (Vec<MipStack>, Vec<usize>) {
    let subjects = cohort(n_per_class, seed, [dim; 3]).unwrap();
    let stacks = subjects.par_iter().map(|s| preprocess(&s.volume, DT, size, &s.subject_id).unwrap()).collect();
    (stacks, subjects.iter().map(|s| s.class_label as usize).collect())
}

fn tensor(stacks: &[MipStack]) -> Tensor<f32> {
    stacks_to_tensor(&stacks.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn short_cross_validation_bookkeeping_and_determinism() {
    let (s, labels) = stacks(5, 64, 32, 1);
    let data = tensor(&s);
    let arch = ArchitectureDescriptor::with_size(32);
    let cfg = TrainConfig { max_epochs: 2, init_seed: 3, fold_seed: 4, ..TrainConfig::default() };
    let out = train_cv(&data, &labels, &arch, &cfg, |_| {}).unwrap();
    assert_eq!(out.folds.len(), 5);
    let mut seen = vec![0; 20];
    for f in &out.folds {
        assert_eq!(f.val_indices.len(), 4);
        let mut classes: Vec<usize> = f.val_indices.iter().map(|&i| labels[i]).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1, 2, 3]);
        for &i in &f.val_indices {
            seen[i] += 1;
        }
        let recs: Vec<_> = out.curves.iter().filter(|r| r.fold == f.fold).collect();
        assert_eq!(recs.len(), f.epochs_run);
        assert!(f.epochs_run <= 2);
        let mut running = f64::INFINITY;
        for w in recs.windows(2) {
            assert!(w[1].best_val_loss.unwrap() <= w[0].best_val_loss.unwrap());
        }
        for r in &recs {
            running = running.min(r.val_loss.unwrap());
            assert_eq!(r.best_val_loss.unwrap(), running);
        }
        assert_eq!(f.best_val_loss, running);
    }
    assert_eq!(seen, vec![1; 20]);

    let again = train_cv(&data, &labels, &arch, &cfg, |_| {}).unwrap();
    assert_eq!(again.curves, out.curves);
    for (a, b) in out.folds.iter().zip(&again.folds) {
        assert_eq!(a.model.flat_params(), b.model.flat_params());
    }
}

#[test]
fn early_stopping_waits_for_patience() {
    let (s, labels) = stacks(5, 64, 32, 2);
    let data = tensor(&s);
    let arch = ArchitectureDescriptor::with_size(32);
    let cfg = TrainConfig { max_epochs: 25, patience: 3, lr0: 5e-3, first_period: 4.0, ..TrainConfig::default() };
    let out = train_cv(&data, &labels, &arch, &cfg, |_| {}).unwrap();
    for f in &out.folds {
        let recs: Vec<_> = out.curves.iter().filter(|r| r.fold == f.fold).collect();
        // every stop is exactly `patience` epochs after the best one
        if f.epochs_run < cfg.max_epochs {
            assert_eq!(f.epochs_run, f.best_epoch + 1 + cfg.patience, "fold {}", f.fold);
        }
        // and no window of `patience` non-improving epochs occurs earlier
        let mut since = 0;
        for (i, r) in recs.iter().enumerate() {
            let improved = i == 0 || r.best_val_loss.unwrap() < recs[i - 1].best_val_loss.unwrap();
            since = if improved { 0 } else { since + 1 };
            if i + 1 < recs.len() {
                assert!(since < cfg.patience);
            }
        }
        let best = &recs[f.best_epoch];
        assert_eq!(best.val_loss.unwrap(), f.best_val_loss);
    }
}

#[test]
fn fine_tuning_protocol() {
    let (s, labels) = stacks(10, 64, 64, 3);
    let data = tensor(&s);
    let arch = ArchitectureDescriptor::with_size(64);
    let cfg = TrainConfig { max_epochs: 8, ..TrainConfig::default() };
    let out = train_cv(&data, &labels, &arch, &cfg, |_| {}).unwrap();
    let best = &out.folds[out.best_fold];
    let train: Vec<MipStack> = best.train_indices.iter().map(|&i| s[i].clone()).collect();
    let train_data = tensor(&train);
    let all: Vec<usize> = (0..train.len()).collect();
    let before = evaluate_loss(&best.model, &train_data, &all, cfg.batch_size).unwrap();
    let (tuned, records) = fine_tune(&best.model, &train_data, &cfg, best.fold, |_| {}).unwrap();
    let after = evaluate_loss(&tuned, &train_data, &all, cfg.batch_size).unwrap();
    println!("fine-tune on pretraining data: loss {before:.5} -> {after:.5}");
    assert_eq!(records.len(), 5);
    assert_eq!(records[0].lr, 1e-4);
    assert!(records.iter().all(|r| r.lr <= 1e-4));
    assert!(after <= before * 1.05, "loss rose from {before} to {after}");
}

#[test]
fn desk_scale_training_reduces_loss_and_encodes() {
    let (s, _) = stacks(25, 128, 128, 4);
    assert_eq!(s.len(), 100);
    let data = tensor(&s);
    let arch = ArchitectureDescriptor::with_size(128);
    let cfg = TrainConfig { init_seed: 5, ..TrainConfig::default() };
    let model = Autoencoder::<f32>::new(arch, 5).unwrap();
    let (trained, records) = fit_epochs(&model, &data, &cfg, &cfg.schedule(), 30, (0, 9), |r| {
        println!("epoch {:2}: lr {:.2e} loss {:.5}", r.epoch + 1, r.lr, r.train_loss)
    })
    .unwrap();
    let (first, last) = (records[0].train_loss, records[29].train_loss);
    assert!(last <= 0.5 * first, "training loss {first} -> {last}");

    let f0 = trained.encode(&s[0]).unwrap();
    let f0_again = trained.encode(&s[0]).unwrap();
    let f1 = trained.encode(&s[1]).unwrap();
    assert_eq!(f0.values, f0_again.values);
    assert_eq!(f0.values.len(), 128 * 8 * 8);
    let dist: f64 = f0.values.iter().zip(&f1.values).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 0.0);
    let fwd = trained.forward(&tensor(&s[..2])).unwrap();
    assert_eq!(fwd.bottleneck.sample(0), f0.values.as_slice());
    assert_eq!(fwd.bottleneck.sample(1), f1.values.as_slice());
}

#[test]
fn reference_bottleneck_is_32768_values() {
    let subjects = cohort(1, 6, [64; 3]).unwrap();
    let stack = preprocess(&subjects[0].volume, DT, 256, "s").unwrap();
    let model = Autoencoder::<f32>::new(ArchitectureDescriptor::reference(), 1).unwrap();
    let f = model.encode(&stack).unwrap();
    assert_eq!(f.shape, [128, 16, 16]);
    assert_eq!(f.values.len(), 32768);
    assert!(f.values.iter().all(|v| v.is_finite()));
}
