//! Three-view maximum intensity projections with optional dilation of the
//! peripheral airways.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabeledVolume, VoxError};
use crate::image::BinaryImage;

/// Projection planes, in stacking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// xy plane, projected along z; rows = y, cols = x.
    Axial,
    /// xz plane, projected along y; rows = z, cols = x.
    Coronal,
    /// yz plane, projected along x; rows = z, cols = y.
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }
}

/// Dilated/undilated × trachea included/masked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MipVariant {
    pub dilated: bool,
    pub trachea_included: bool,
}

impl MipVariant {
    pub const ALL: [MipVariant; 4] = [
        MipVariant { dilated: true, trachea_included: true },
        MipVariant { dilated: true, trachea_included: false },
        MipVariant { dilated: false, trachea_included: true },
        MipVariant { dilated: false, trachea_included: false },
    ];

    /// Filesystem-safe tag, e.g. `D_T`.
    pub fn tag(self) -> String {
        self.to_string().replace('+', "_")
    }
}

impl fmt::Display for MipVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = if self.dilated { "D" } else { "ND" };
        let t = if self.trachea_included { "T" } else { "NT" };
        write!(f, "{d}+{t}")
    }
}

impl FromStr for MipVariant {
    type Err = VoxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "+");
        let (d, t) = norm
            .split_once('+')
            .ok_or_else(|| VoxError::Format(format!("bad MIP variant {s:?}, expected e.g. D+T")))?;
        let dilated = match d {
            "D" => true,
            "ND" => false,
            _ => return Err(VoxError::Format(format!("bad dilation tag in {s:?}"))),
        };
        let trachea_included = match t {
            "T" => true,
            "NT" => false,
            _ => return Err(VoxError::Format(format!("bad trachea tag in {s:?}"))),
        };
        Ok(Self { dilated, trachea_included })
    }
}

impl Serialize for MipVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MipVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipOptions {
    pub dilate_peripheral: bool,
    /// Generations strictly deeper than this are dilated.
    pub dilation_threshold_generation: u8,
    pub kernel: (usize, usize),
    pub anchor: (usize, usize),
    pub size: usize,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self { dilate_peripheral: false, dilation_threshold_generation: 5, kernel: (4, 4), anchor: (1, 1), size: 256 }
    }
}

/// Three `size x size` projections stacked as `3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MipStack {
    pub subject_id: String,
    pub size: usize,
    pub dilated: bool,
    pub trachea_included: bool,
    /// `3 * size * size` values in `[0, 1]`, view-major in [`View::ALL`] order.
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipSidecar {
    pub subject_id: String,
    pub dilated: bool,
    pub trachea_included: bool,
    pub view_order: Vec<View>,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MipStack {
    pub fn from_views(subject_id: impl Into<String>, variant: MipVariant, views: &[BinaryImage; 3]) -> Self {
        let size = views[0].h;
        let mut data = Vec::with_capacity(3 * size * size);
        for v in views {
            assert_eq!((v.h, v.w), (size, size), "views must be square and equally sized");
            data.extend(v.to_f32());
        }
        Self {
            subject_id: subject_id.into(),
            size,
            dilated: variant.dilated,
            trachea_included: variant.trachea_included,
            data,
        }
    }

    pub fn variant(&self) -> MipVariant {
        MipVariant { dilated: self.dilated, trachea_included: self.trachea_included }
    }

    pub fn view(&self, i: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[i * n..(i + 1) * n]
    }

    /// Binarized view (`>= threshold`).
    pub fn view_mask(&self, i: usize, threshold: f32) -> BinaryImage {
        BinaryImage::threshold(self.size, self.size, self.view(i), threshold)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    fn view_path(dir: &Path, subject: &str, view: View) -> PathBuf {
        dir.join(format!("{subject}_{}.pgm", view.name()))
    }

    pub fn sidecar_path(dir: &Path, subject: &str) -> PathBuf {
        dir.join(format!("{subject}.json"))
    }

    /// Writes `<id>_{axial,coronal,sagittal}.pgm` and `<id>.json` into `dir`.
    pub fn save(&self, dir: &Path, config_hash: Option<&str>) -> Result<(), VoxError> {
        std::fs::create_dir_all(dir)?;
        for (i, view) in View::ALL.into_iter().enumerate() {
            let bytes: Vec<u8> = self.view(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            let f = std::fs::File::create(Self::view_path(dir, &self.subject_id, view))?;
            crate::image::write_pgm_bytes(std::io::BufWriter::new(f), self.size, self.size, &bytes)
                .map_err(|e| VoxError::Format(e.to_string()))?;
        }
        let sidecar = MipSidecar {
            subject_id: self.subject_id.clone(),
            dilated: self.dilated,
            trachea_included: self.trachea_included,
            view_order: View::ALL.to_vec(),
            size: self.size,
            config_hash: config_hash.map(str::to_owned),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| VoxError::Format(e.to_string()))?;
        std::fs::write(Self::sidecar_path(dir, &self.subject_id), json)?;
        Ok(())
    }

    pub fn load(dir: &Path, subject: &str) -> Result<Self, VoxError> {
        let json = std::fs::read_to_string(Self::sidecar_path(dir, subject))?;
        let sidecar: MipSidecar = serde_json::from_str(&json).map_err(|e| VoxError::Format(e.to_string()))?;
        let mut data = Vec::with_capacity(3 * sidecar.size * sidecar.size);
        for &view in &sidecar.view_order {
            let f = std::fs::File::open(Self::view_path(dir, subject, view))?;
            let (h, w, maxval, bytes) = crate::image::read_pgm_bytes(f).map_err(|e| VoxError::Format(e.to_string()))?;
            if h != sidecar.size || w != sidecar.size {
                return Err(VoxError::Format(format!("{subject} {}: {h}x{w} != sidecar size", view.name())));
            }
            data.extend(bytes.iter().map(|&b| b as f32 / maxval as f32));
        }
        if sidecar.view_order != View::ALL {
            return Err(VoxError::Format(format!("{subject}: unsupported view order {:?}", sidecar.view_order)));
        }
        Ok(Self {
            subject_id: sidecar.subject_id,
            size: sidecar.size,
            dilated: sidecar.dilated,
            trachea_included: sidecar.trachea_included,
            data,
        })
    }
}

/// Sets every voxel of generation 0 (label 1) to background.
pub fn mask_trachea(vol: &LabeledVolume) -> Result<LabeledVolume, VoxError> {
    let mut out = vol.clone();
    for l in out.data.iter_mut() {
        if *l == 1 {
            *l = 0;
        }
    }
    if out.foreground_count() == 0 {
        return Err(VoxError::EmptyResult);
    }
    Ok(out)
}

/// Max projection of the voxels whose label satisfies `keep`, at native
/// resolution.
pub fn project_labels(vol: &LabeledVolume, view: View, keep: impl Fn(u8) -> bool) -> BinaryImage {
    let [nx, ny, nz] = vol.dims;
    let mut img = match view {
        View::Axial => BinaryImage::new(ny, nx),
        View::Coronal => BinaryImage::new(nz, nx),
        View::Sagittal => BinaryImage::new(nz, ny),
    };
    for (x, y, z, l) in vol.foreground() {
        if keep(l) {
            match view {
                View::Axial => img.set(y, x, true),
                View::Coronal => img.set(z, x, true),
                View::Sagittal => img.set(z, y, true),
            }
        }
    }
    img
}

/// Binary dilation with a `kh x kw` block of ones. A source pixel at `p`
/// paints `p + (i - anchor.0, j - anchor.1)` for every kernel cell `(i, j)`.
pub fn dilate(img: &BinaryImage, kernel: (usize, usize), anchor: (usize, usize)) -> BinaryImage {
    let mut out = BinaryImage::new(img.h, img.w);
    for r in 0..img.h {
        for c in 0..img.w {
            if !img.get(r, c) {
                continue;
            }
            for i in 0..kernel.0 {
                for j in 0..kernel.1 {
                    let rr = r as isize + i as isize - anchor.0 as isize;
                    let cc = c as isize + j as isize - anchor.1 as isize;
                    if rr >= 0 && cc >= 0 && (rr as usize) < img.h && (cc as usize) < img.w {
                        out.set(rr as usize, cc as usize, true);
                    }
                }
            }
        }
    }
    out
}

/// Centers the image on a square background canvas.
pub fn pad_to_square(img: &BinaryImage) -> BinaryImage {
    let n = img.h.max(img.w);
    let (r0, c0) = ((n - img.h) / 2, (n - img.w) / 2);
    let mut out = BinaryImage::new(n, n);
    for r in 0..img.h {
        for c in 0..img.w {
            if img.get(r, c) {
                out.set(r + r0, c + c0, true);
            }
        }
    }
    out
}

fn bin_range(i: usize, src: usize, dst: usize) -> (usize, usize) {
    let lo = i * src / dst;
    let hi = ((i + 1) * src / dst).max(lo + 1).min(src);
    (lo, hi)
}

/// Resamples to `size x size` by taking the max over each source bin. When
/// downsampling the bins partition the source; when upsampling each output
/// pixel reads the source pixel it falls in.
pub fn max_pool_resize(img: &BinaryImage, size: usize) -> BinaryImage {
    let mut out = BinaryImage::new(size, size);
    if img.h == 0 || img.w == 0 {
        return out;
    }
    for r in 0..size {
        let (r0, r1) = bin_range(r, img.h, size);
        for c in 0..size {
            let (c0, c1) = bin_range(c, img.w, size);
            let hit = (r0..r1).any(|rr| (c0..c1).any(|cc| img.get(rr, cc)));
            out.set(r, c, hit);
        }
    }
    out
}

/// One view before square padding and resizing.
pub fn project_view_full(vol: &LabeledVolume, view: View, opts: &MipOptions) -> BinaryImage {
    if !opts.dilate_peripheral {
        return project_labels(vol, view, |l| l > 0);
    }
    let cut = opts.dilation_threshold_generation.saturating_add(1);
    let mut central = project_labels(vol, view, |l| l > 0 && l <= cut);
    let peripheral = project_labels(vol, view, |l| l > cut);
    central.union_with(&dilate(&peripheral, opts.kernel, opts.anchor));
    central
}

/// Builds the three normalized views of a (usually aligned and cropped)
/// volume.
pub fn project_mip(
    vol: &LabeledVolume,
    opts: &MipOptions,
    subject_id: &str,
    trachea_included: bool,
) -> Result<MipStack, VoxError> {
    if vol.foreground_count() == 0 {
        return Err(VoxError::EmptyResult);
    }
    let views = View::ALL.map(|v| max_pool_resize(&pad_to_square(&project_view_full(vol, v, opts)), opts.size));
    Ok(MipStack::from_views(
        subject_id,
        MipVariant { dilated: opts.dilate_peripheral, trachea_included },
        &views,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_round_trip() {
        for v in MipVariant::ALL {
            assert_eq!(v.to_string().parse::<MipVariant>().unwrap(), v);
            assert_eq!(v.tag().parse::<MipVariant>().unwrap(), v);
        }
        assert_eq!(MipVariant::ALL[0].to_string(), "D+T");
        assert!("X+T".parse::<MipVariant>().is_err());
    }

    #[test]
    fn single_voxel_single_pixel_per_view() {
        let mut v = LabeledVolume::new([5, 6, 7], [1.0; 3]);
        v.set(1, 2, 3, 3);
        for view in View::ALL {
            let img = project_view_full(&v, view, &MipOptions::default());
            assert_eq!(img.count(), 1);
        }
        assert!(project_labels(&v, View::Axial, |l| l > 0).get(2, 1));
        assert!(project_labels(&v, View::Coronal, |l| l > 0).get(3, 1));
        assert!(project_labels(&v, View::Sagittal, |l| l > 0).get(3, 2));
    }

    #[test]
    fn dilation_block_with_anchor_one_one() {
        // generation 7 -> label 8, at x = 10, y = 10 (axial row 10, col 10)
        let mut v = LabeledVolume::new([20, 20, 3], [1.0; 3]);
        v.set(10, 10, 1, 8);
        let opts = MipOptions { dilate_peripheral: true, ..Default::default() };
        let img = project_view_full(&v, View::Axial, &opts);
        let want = BinaryImage::from_fn(20, 20, |r, c| (9..=12).contains(&r) && (9..=12).contains(&c));
        assert_eq!(img, want);
    }

    #[test]
    fn dilation_is_noop_for_shallow_trees() {
        let mut v = LabeledVolume::new([10, 10, 10], [1.0; 3]);
        for g in 0..6u8 {
            v.set(g as usize + 2, 3, 4, g + 1);
        }
        let d = project_mip(&v, &MipOptions { dilate_peripheral: true, size: 16, ..Default::default() }, "s", true).unwrap();
        let nd = project_mip(&v, &MipOptions { size: 16, ..Default::default() }, "s", true).unwrap();
        assert_eq!(d.data, nd.data);
    }

    #[test]
    fn max_pool_keeps_isolated_pixels() {
        let mut img = BinaryImage::new(300, 300);
        img.set(137, 299, true);
        let out = max_pool_resize(&img, 256);
        assert_eq!(out.count(), 1);
        let up = max_pool_resize(&img, 512);
        assert!(up.count() >= 1);
    }

    #[test]
    fn pad_centers_content() {
        let img = BinaryImage::from_fn(2, 6, |_, _| true);
        let sq = pad_to_square(&img);
        assert_eq!((sq.h, sq.w), (6, 6));
        assert!(sq.get(2, 0) && sq.get(3, 5) && !sq.get(1, 0) && !sq.get(4, 0));
    }

    #[test]
    fn trachea_masking() {
        let mut v = LabeledVolume::new([8, 1, 1], [1.0; 3]);
        for g in 0..6u8 {
            v.set(g as usize, 0, 0, g + 1);
        }
        let m = mask_trachea(&v).unwrap();
        assert_eq!(m.get(0, 0, 0), 0);
        let (a, b) = (v.label_histogram(), m.label_histogram());
        assert_eq!(a[2..], b[2..]);
        let mut only = LabeledVolume::new([2, 1, 1], [1.0; 3]);
        only.set(0, 0, 0, 1);
        assert!(matches!(mask_trachea(&only), Err(VoxError::EmptyResult)));
    }

    #[test]
    fn stack_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = LabeledVolume::new([6, 5, 4], [1.0; 3]);
        v.set(1, 1, 1, 1);
        v.set(2, 2, 2, 9);
        let s = project_mip(&v, &MipOptions { dilate_peripheral: true, size: 8, ..Default::default() }, "sub01", true).unwrap();
        s.save(dir.path(), Some("abc")).unwrap();
        assert_eq!(MipStack::load(dir.path(), "sub01").unwrap(), s);
        let side: MipSidecar = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sub01.json")).unwrap()).unwrap();
        assert_eq!(side.view_order, View::ALL.to_vec());
        assert_eq!(side.config_hash.as_deref(), Some("abc"));
    }
}
