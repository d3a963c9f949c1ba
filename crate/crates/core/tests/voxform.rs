use airtree::image::BinaryImage;
use airtree::synthtree::{generate, TreeSpec};
use airtree::voxform::{
    align_and_crop, apply_alignment, compute_alignment, mask_trachea, max_pool_resize, preprocess, project_mip,
    LabeledVolume, MipOptions, MipStack, MipVariant,
};
use proptest::prelude::*;

fn volume_from(dims: [usize; 3], voxels: &[(usize, usize, usize, u8)]) -> LabeledVolume {
    let mut v = LabeledVolume::new(dims, [1.0; 3]);
    for &(x, y, z, l) in voxels {
        v.set(x % dims[0], y % dims[1], z % dims[2], l);
    }
    v
}

fn voxels() -> impl Strategy<Value = Vec<(usize, usize, usize, u8)>> {
    prop::collection::vec((0usize..64, 0usize..64, 0usize..64, 1u8..=12), 1..60)
}

fn dims() -> impl Strategy<Value = [usize; 3]> {
    [6usize..20, 6usize..20, 6usize..20]
}

fn opts(dilate: bool, size: usize) -> MipOptions {
    MipOptions { dilate_peripheral: dilate, size, ..Default::default() }
}

fn subset(a: &MipStack, b: &MipStack) -> bool {
    a.data.iter().zip(&b.data).all(|(&x, &y)| x <= y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_monotone(d in dims(), base in voxels(), extra in voxels(), dilate in any::<bool>()) {
        let small = volume_from(d, &base);
        let mut big = small.clone();
        for (x, y, z, l) in extra {
            let (x, y, z) = (x % d[0], y % d[1], z % d[2]);
            // only background becomes foreground; existing labels stay
            if big.get(x, y, z) == 0 {
                big.set(x, y, z, l);
            }
        }
        let o = opts(dilate, 16);
        let a = project_mip(&small, &o, "s", true).unwrap();
        let b = project_mip(&big, &o, "s", true).unwrap();
        prop_assert!(subset(&a, &b));
    }

    #[test]
    fn dilation_is_superset(d in dims(), vox in voxels()) {
        let v = volume_from(d, &vox);
        let nd = project_mip(&v, &opts(false, 16), "s", true).unwrap();
        let dl = project_mip(&v, &opts(true, 16), "s", true).unwrap();
        prop_assert!(subset(&nd, &dl));
    }

    #[test]
    fn trachea_masking_shrinks_views(d in dims(), vox in voxels(), trachea in voxels(), dilate in any::<bool>()) {
        let mut all = vox.clone();
        all.extend(trachea.iter().map(|&(x, y, z, _)| (x, y, z, 1)));
        let v = volume_from(d, &all);
        let o = opts(dilate, 16);
        let t = project_mip(&v, &o, "s", true).unwrap();
        if let Ok(masked) = mask_trachea(&v) {
            prop_assert_eq!(masked.dims, v.dims);
            let nt = project_mip(&masked, &o, "s", false).unwrap();
            prop_assert!(subset(&nt, &t));
        }
    }

    #[test]
    fn max_pool_matches_block_or(h in 1usize..6, w in 1usize..6, f in 1usize..5, bits in prop::collection::vec(any::<bool>(), 900)) {
        // square source of side s * f pooled to s: each output is the OR of its f x f block
        let s = h.max(w);
        let n = s * f;
        let img = BinaryImage::from_fn(n, n, |y, x| bits[(y * n + x) % bits.len()]);
        let out = max_pool_resize(&img, s);
        for r in 0..s {
            for c in 0..s {
                let any = (r * f..(r + 1) * f).any(|y| (c * f..(c + 1) * f).any(|x| img.get(y, x)));
                prop_assert_eq!(out.get(r, c), any);
            }
        }
    }

    #[test]
    fn max_pool_never_drops_foreground(h in 1usize..80, w in 1usize..80, size in 1usize..40, y in 0usize..80, x in 0usize..80) {
        let (y, x) = (y % h, x % w);
        let img = BinaryImage::from_fn(h, w, |r, c| r == y && c == x);
        prop_assert_eq!(max_pool_resize(&img, size).count() >= 1, true);
    }
}

/// Ellipsoid with distinct semi-axes along x, y, z: its covariance is
/// diagonal with descending variances in x, y, z order.
fn ellipsoid(center: [f64; 3], semi: [f64; 3], dims: [usize; 3]) -> LabeledVolume {
    let mut v = LabeledVolume::new(dims, [1.0; 3]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let r: f64 = (0..3).map(|i| ((p[i] - center[i]) / semi[i]).powi(2)).sum();
                if r <= 1.0 {
                    v.set(x, y, z, 1);
                }
            }
        }
    }
    v
}

#[test]
fn already_aligned_volume_gives_identity() {
    let v = ellipsoid([20.0, 15.0, 12.0], [14.0, 9.0, 5.0], [41, 31, 25]);
    let a = compute_alignment(&v).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((a.rotation[i][j] - want).abs() < 1e-6, "R[{i}][{j}] = {}", a.rotation[i][j]);
        }
    }
}

#[test]
fn realignment_of_aligned_tree_is_near_identity() {
    let spec = TreeSpec::for_class(1, 3, [96; 3]);
    let vol = generate(&spec).unwrap();
    let aligned = align_and_crop(&vol).unwrap();
    let a = compute_alignment(&aligned).unwrap();
    assert!(a.orthonormality_error() < 1e-9);
    assert!((a.determinant() - 1.0).abs() < 1e-9);
    // nearest-neighbour resampling perturbs the covariance slightly
    for i in 0..3 {
        assert!(a.rotation[i][i] > 0.99, "R = {:?}", a.rotation);
    }
    let n0 = vol.foreground_count() as f64;
    let n1 = apply_alignment(&vol, &compute_alignment(&vol).unwrap()).unwrap().foreground_count() as f64;
    assert!((n1 - n0).abs() / n0 < 0.1);
}

#[test]
fn dilation_is_noop_for_shallow_synthetic_tree() {
    let spec = TreeSpec { max_generation: 4, ..TreeSpec::for_class(0, 9, [64; 3]) };
    let vol = generate(&spec).unwrap();
    assert!(vol.max_generation().unwrap() <= 4);
    for t in [true, false] {
        let d = preprocess(&vol, MipVariant { dilated: true, trachea_included: t }, 64, "s").unwrap();
        let nd = preprocess(&vol, MipVariant { dilated: false, trachea_included: t }, 64, "s").unwrap();
        assert_eq!(d.data, nd.data);
    }
}

#[test]
fn synthetic_stacks_are_binary_and_nested() {
    let spec = TreeSpec::for_class(2, 4, [96; 3]);
    let vol = generate(&spec).unwrap();
    let get = |dilated, trachea_included| preprocess(&vol, MipVariant { dilated, trachea_included }, 64, "s").unwrap();
    let (dt, dnt, ndt, ndnt) = (get(true, true), get(true, false), get(false, true), get(false, false));
    for s in [&dt, &dnt, &ndt, &ndnt] {
        assert!(s.is_binary());
        assert_eq!(s.data.len(), 3 * 64 * 64);
        assert!(s.data.iter().any(|&v| v == 1.0));
    }
    assert!(subset(&ndt, &dt));
    assert!(subset(&ndnt, &dnt));
    assert!(subset(&dnt, &dt));
    assert!(subset(&ndnt, &ndt));
}
