//! Principal-axis alignment and tight cropping of labeled volumes.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{LabeledVolume, VoxError};

/// Relative eigenvalue gap below which two principal axes count as tied.
const EIGEN_TIE_TOL: f64 = 1e-9;
/// Smallest-to-largest eigenvalue ratio treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Rotation onto principal axes plus the voxel-space centroid it pivots on.
///
/// Row `i` of `rotation` is the `i`-th principal direction (physical
/// coordinates), so `rotation * p` expresses `p` in principal coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidAlignment {
    pub rotation: [[f64; 3]; 3],
    pub centroid: [f64; 3],
}

impl RigidAlignment {
    pub fn identity(centroid: [f64; 3]) -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], centroid }
    }

    fn matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    /// Max deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }
}

/// PCA of the physical foreground coordinates. Rows are eigenvectors in
/// descending eigenvalue order, each signed so its largest-magnitude entry
/// is positive; the last row is flipped if that leaves a reflection.
pub fn compute_alignment(vol: &LabeledVolume) -> Result<RigidAlignment, VoxError> {
    let mut count = 0usize;
    let mut sum = [0f64; 3];
    for (x, y, z, _) in vol.foreground() {
        count += 1;
        sum[0] += x as f64;
        sum[1] += y as f64;
        sum[2] += z as f64;
    }
    if count == 0 {
        return Err(VoxError::DegenerateGeometry("empty foreground".into()));
    }
    let centroid = [sum[0] / count as f64, sum[1] / count as f64, sum[2] / count as f64];
    let s = vol.spacing;
    let mut cov = Matrix3::<f64>::zeros();
    for (x, y, z, _) in vol.foreground() {
        let d = Vector3::new(
            (x as f64 - centroid[0]) * s[0],
            (y as f64 - centroid[1]) * s[1],
            (z as f64 - centroid[2]) * s[2],
        );
        cov += d * d.transpose();
    }
    cov /= count as f64;

    let eig = SymmetricEigen::new(cov);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin <= RANK_TOL * lmax {
        return Err(VoxError::DegenerateGeometry(format!(
            "foreground covariance is rank deficient (eigenvalues {:.3e}..{:.3e})",
            lmin, lmax
        )));
    }

    let mut axes: Vec<(f64, [f64; 3])> = (0..3)
        .map(|i| {
            let c = eig.eigenvectors.column(i);
            let mut v = [c[0], c[1], c[2]];
            let mut pivot = 0;
            for j in 1..3 {
                if v[j].abs() > v[pivot].abs() {
                    pivot = j;
                }
            }
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    axes.sort_by(|a, b| {
        if (a.0 - b.0).abs() > EIGEN_TIE_TOL * lmax {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        } else {
            // tie: lexicographically larger direction first
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal)
        }
    });

    let mut a = RigidAlignment { rotation: [axes[0].1, axes[1].1, axes[2].1], centroid };
    if a.determinant() < 0.0 {
        a.rotation[2].iter_mut().for_each(|e| *e = -*e);
    }
    Ok(a)
}

/// Rotates the volume into principal coordinates and crops it tightly.
///
/// Output spacing is isotropic with the input voxel volume preserved
/// (geometric mean of the spacings). Labels are resampled by nearest
/// neighbour through the inverse rotation, so no new labels appear.
pub fn apply_alignment(vol: &LabeledVolume, a: &RigidAlignment) -> Result<LabeledVolume, VoxError> {
    if a.orthonormality_error() > 1e-6 {
        return Err(VoxError::DegenerateGeometry("rotation is not orthonormal".into()));
    }
    let r = a.matrix();
    let s = vol.spacing;
    let c = a.centroid;
    let h = (s[0] * s[1] * s[2]).cbrt();

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (x, y, z, _) in vol.foreground() {
        let p = r * Vector3::new((x as f64 - c[0]) * s[0], (y as f64 - c[1]) * s[1], (z as f64 - c[2]) * s[2]);
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    if !lo[0].is_finite() {
        return Err(VoxError::DegenerateGeometry("rotated bounding box is empty".into()));
    }
    // Voxels are cubes, not points: widen the center bounding box by the
    // rotated half-voxel extent, then center an h-spaced grid on it.
    let mut dims = [0usize; 3];
    let mut start = [0f64; 3];
    for i in 0..3 {
        let pad: f64 = (0..3).map(|j| r[(i, j)].abs() * s[j] / 2.0).sum();
        let extent = hi[i] - lo[i] + 2.0 * pad;
        dims[i] = ((extent / h).round() as usize).max(1);
        start[i] = (lo[i] + hi[i]) / 2.0 - (dims[i] - 1) as f64 * h / 2.0;
    }

    let rt = r.transpose();
    let mut out = LabeledVolume::new(dims, [h; 3]);
    let [nx, ny, nz] = vol.dims;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = Vector3::new(start[0] + i as f64 * h, start[1] + j as f64 * h, start[2] + k as f64 * h);
                let q = rt * p;
                let xs = [
                    (c[0] + q[0] / s[0]).round(),
                    (c[1] + q[1] / s[1]).round(),
                    (c[2] + q[2] / s[2]).round(),
                ];
                if xs[0] < 0.0 || xs[1] < 0.0 || xs[2] < 0.0 {
                    continue;
                }
                let (x, y, z) = (xs[0] as usize, xs[1] as usize, xs[2] as usize);
                if x >= nx || y >= ny || z >= nz {
                    continue;
                }
                let l = vol.get(x, y, z);
                if l > 0 {
                    out.set(i, j, k, l);
                }
            }
        }
    }
    crop_to_foreground(&out)
}

/// Tight axis-aligned crop around the foreground.
pub fn crop_to_foreground(vol: &LabeledVolume) -> Result<LabeledVolume, VoxError> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (x, y, z, _) in vol.foreground() {
        any = true;
        for (i, v) in [x, y, z].into_iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    if !any {
        return Err(VoxError::DegenerateGeometry("nothing to crop: empty foreground".into()));
    }
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let mut out = LabeledVolume::new(dims, vol.spacing);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let src = vol.index(lo[0], lo[1] + y, lo[2] + z);
            let dst = out.index(0, y, z);
            out.data[dst..dst + dims[0]].copy_from_slice(&vol.data[src..src + dims[0]]);
        }
    }
    Ok(out)
}

/// Alignment followed by crop, the usual preprocessing entry point.
pub fn align_and_crop(vol: &LabeledVolume) -> Result<LabeledVolume, VoxError> {
    let a = compute_alignment(vol)?;
    apply_alignment(vol, &a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill_box(v: &mut LabeledVolume, lo: [usize; 3], hi: [usize; 3], label: u8) {
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    v.set(x, y, z, label);
                }
            }
        }
    }

    #[test]
    fn box_longest_along_z_maps_z_to_first_axis() {
        // Extents 3 x 5 x 11: variances ordered z > y > x, so the rotation
        // is the permutation (z, y, x) with det fixed to +1.
        let mut v = LabeledVolume::new([16, 16, 16], [1.0; 3]);
        fill_box(&mut v, [2, 2, 2], [5, 7, 13], 1);
        let a = compute_alignment(&v).unwrap();
        let r = a.rotation;
        assert!((r[0][2] - 1.0).abs() < 1e-9, "{r:?}");
        assert!((r[1][1] - 1.0).abs() < 1e-9, "{r:?}");
        assert!((r[2][0].abs() - 1.0).abs() < 1e-9, "{r:?}");
        assert!((a.determinant() - 1.0).abs() < 1e-9);
        assert!(a.orthonormality_error() < 1e-9);
    }

    #[test]
    fn single_voxel_is_degenerate() {
        let mut v = LabeledVolume::new([4, 4, 4], [1.0; 3]);
        v.set(1, 1, 1, 1);
        assert!(matches!(compute_alignment(&v), Err(VoxError::DegenerateGeometry(_))));
        let empty = LabeledVolume::new([4, 4, 4], [1.0; 3]);
        assert!(matches!(compute_alignment(&empty), Err(VoxError::DegenerateGeometry(_))));
    }

    #[test]
    fn coplanar_slab_is_degenerate() {
        let mut v = LabeledVolume::new([8, 8, 8], [1.0; 3]);
        fill_box(&mut v, [0, 0, 3], [8, 8, 4], 1);
        assert!(matches!(compute_alignment(&v), Err(VoxError::DegenerateGeometry(_))));
    }

    #[test]
    fn spherical_shell_is_deterministic() {
        let mut v = LabeledVolume::new([21, 21, 21], [1.0; 3]);
        for z in 0..21 {
            for y in 0..21 {
                for x in 0..21 {
                    let d = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2) + (z as f64 - 10.0).powi(2)).sqrt();
                    if (7.5..8.5).contains(&d) {
                        v.set(x, y, z, 1);
                    }
                }
            }
        }
        let a = compute_alignment(&v).unwrap();
        let b = compute_alignment(&v).unwrap();
        assert_eq!(a, b);
        assert!(a.orthonormality_error() < 1e-9);
        assert!((a.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_alignment_is_tight_crop() {
        let mut v = LabeledVolume::new([10, 10, 10], [1.0; 3]);
        fill_box(&mut v, [2, 3, 4], [5, 8, 6], 2);
        v.set(4, 7, 5, 5);
        let a = RigidAlignment::identity([3.3, 4.1, 5.7]);
        let out = apply_alignment(&v, &a).unwrap();
        assert_eq!(out, crop_to_foreground(&v).unwrap());
        assert_eq!(out.dims, [3, 5, 2]);
    }

    #[test]
    fn corner_voxel_crops_to_unit_volume() {
        let mut v = LabeledVolume::new([6, 6, 6], [1.0; 3]);
        v.set(5, 5, 5, 9);
        let out = apply_alignment(&v, &RigidAlignment::identity([5.0, 5.0, 5.0])).unwrap();
        assert_eq!(out.dims, [1, 1, 1]);
        assert_eq!(out.data, vec![9]);
    }

    #[test]
    fn quarter_turn_preserves_label_multiset() {
        // L-shaped tree in the xy plane with some z thickness.
        let mut v = LabeledVolume::new([20, 20, 6], [1.0; 3]);
        fill_box(&mut v, [2, 2, 1], [4, 15, 4], 1);
        fill_box(&mut v, [4, 2, 1], [14, 4, 4], 3);
        // 90 degrees about z: (x, y) -> (-y, x)
        let a = RigidAlignment {
            rotation: [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            centroid: [8.0, 8.0, 2.0],
        };
        let out = apply_alignment(&v, &a).unwrap();
        // Direct oracle: forward-map every foreground voxel and compare.
        let mut want = LabeledVolume::new([20, 20, 6], [1.0; 3]);
        for (x, y, z, l) in v.foreground() {
            let nx = 16 - y; // -(y - 8) + 8
            let ny = x;
            want.set(nx, ny, z, l);
        }
        let want = crop_to_foreground(&want).unwrap();
        assert_eq!(out, want);
        assert_eq!(out.label_histogram()[1..], v.label_histogram()[1..]);
    }

    #[test]
    fn anisotropic_spacing_preserves_count_roughly() {
        let mut v = LabeledVolume::new([60, 30, 20], [0.5, 0.5, 1.0]);
        fill_box(&mut v, [10, 10, 3], [50, 22, 15], 1);
        let out = align_and_crop(&v).unwrap();
        let (a, b) = (v.foreground_count() as f64, out.foreground_count() as f64);
        assert!((a - b).abs() / a < 0.1, "{a} vs {b}");
    }
}
