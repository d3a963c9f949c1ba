use airtree::seed;
use airtree::synthtree::{build_skeleton, cohort, generate, TreeSpec, TreeSummary, NUM_CLASSES};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn features(s: &TreeSummary) -> [f64; 4] {
    [s.mean_branch_angle, s.max_depth as f64, s.depth_asymmetry, s.trachea_length]
}

fn summaries(per_class: usize, salt: u64) -> Vec<([f64; 4], usize)> {
    let mut out = Vec::new();
    for c in 0..NUM_CLASSES {
        for i in 0..per_class {
            let spec = TreeSpec::for_class(c, seed::derive(salt, &[c as u64, i as u64]), [128; 3]);
            let skel = build_skeleton(&spec).unwrap();
            out.push((features(&skel.summary()), c as usize));
        }
    }
    out
}

/// Least-squares one-vs-rest linear classifier on standardized features.
struct LinearProbe {
    mean: [f64; 4],
    sd: [f64; 4],
    w: DMatrix<f64>,
}

impl LinearProbe {
    fn design(&self, x: &[f64; 4]) -> Vec<f64> {
        let mut row = vec![1.0];
        row.extend((0..4).map(|j| (x[j] - self.mean[j]) / self.sd[j]));
        row
    }

    fn fit(data: &[([f64; 4], usize)]) -> Self {
        let n = data.len() as f64;
        let mut mean = [0.0; 4];
        let mut sd = [0.0; 4];
        for j in 0..4 {
            mean[j] = data.iter().map(|(x, _)| x[j]).sum::<f64>() / n;
            sd[j] = (data.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
        }
        let mut probe = Self { mean, sd, w: DMatrix::zeros(5, NUM_CLASSES as usize) };
        let rows: Vec<f64> = data.iter().flat_map(|(x, _)| probe.design(x)).collect();
        let a = DMatrix::from_row_slice(data.len(), 5, &rows);
        let ata = a.transpose() * &a;
        for c in 0..NUM_CLASSES as usize {
            let y = DVector::from_iterator(data.len(), data.iter().map(|(_, l)| if *l == c { 1.0 } else { 0.0 }));
            let wc = ata.clone().cholesky().expect("full-rank design").solve(&(a.transpose() * y));
            probe.w.set_column(c, &wc);
        }
        probe
    }

    fn predict(&self, x: &[f64; 4]) -> usize {
        let d = DVector::from_vec(self.design(x));
        let scores = self.w.transpose() * d;
        scores.argmax().0
    }
}

#[test]
fn linear_probe_separates_classes() {
    let train = summaries(100, 11);
    let test = summaries(100, 12);
    let probe = LinearProbe::fit(&train);
    let acc = |d: &[([f64; 4], usize)]| d.iter().filter(|(x, l)| probe.predict(x) == *l).count() as f64 / d.len() as f64;
    let (train_acc, test_acc) = (acc(&train), acc(&test));
    println!("linear probe accuracy: train {train_acc:.3}, held-out {test_acc:.3}");
    assert!(train_acc >= 0.95, "train accuracy {train_acc}");
    assert!(test_acc >= 0.95, "held-out accuracy {test_acc}");
}

#[test]
fn cohort_sizes_and_labels() {
    let one = cohort(1, 5, [64; 3]).unwrap();
    assert_eq!(one.iter().map(|s| s.class_label).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let full = cohort(50, 5, [64; 3]).unwrap();
    assert_eq!(full.len(), 200);
    for c in 0..NUM_CLASSES {
        assert_eq!(full.iter().filter(|s| s.class_label == c).count(), 50);
    }
    for s in &full {
        assert_eq!(s.volume.component_count(), 1, "{}", s.subject_id);
        s.volume.validate().unwrap();
    }
    let again = cohort(1, 5, [64; 3]).unwrap();
    for (a, b) in one.iter().zip(&again) {
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.seed, b.seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_trees_are_valid(seed in any::<u64>(), class in 0u8..4) {
        let spec = TreeSpec::for_class(class, seed, [96; 3]);
        let skel = build_skeleton(&spec).unwrap();
        prop_assert!(skel.generations_monotone());
        if let Ok(vol) = generate(&spec) {
            prop_assert!(vol.validate().is_ok());
            prop_assert_eq!(vol.component_count(), 1);
            prop_assert_eq!(vol.max_generation(), skel.segments.iter().map(|s| s.generation).max());
            prop_assert_eq!(generate(&spec).unwrap(), vol);
        }
    }
}
