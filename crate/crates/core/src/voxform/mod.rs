//! Labeled airway volumes and their conversion to normalized 3-view MIP
//! stacks: principal-axis alignment, cropping, trachea masking, peripheral
//! dilation and downsampling.

mod align;
mod mip;
mod volume;

use thiserror::Error;

pub use align::{align_and_crop, apply_alignment, compute_alignment, crop_to_foreground, RigidAlignment};
pub use mip::{
    dilate, mask_trachea, max_pool_resize, pad_to_square, project_labels, project_mip, project_view_full, MipOptions,
    MipSidecar, MipStack, MipVariant, View,
};
pub use volume::{LabeledVolume, MAX_LABEL};

#[derive(Debug, Error)]
pub enum VoxError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("operation removed all foreground voxels")]
    EmptyResult,
    #[error("label {0} exceeds the maximum generation label 17")]
    InvalidLabel(u8),
    #[error("foreground has {0} 26-connected components, expected 1")]
    NotConnected(usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Full preprocessing of one subject for one variant: align the whole mask,
/// crop, optionally mask the trachea, then project.
pub fn preprocess(vol: &LabeledVolume, variant: MipVariant, size: usize, subject_id: &str) -> Result<MipStack, VoxError> {
    let aligned = align_and_crop(vol)?;
    preprocess_aligned(&aligned, variant, size, subject_id)
}

/// Same as [`preprocess`] for a volume that is already aligned and cropped,
/// so the four variants can share one alignment.
pub fn preprocess_aligned(
    aligned: &LabeledVolume,
    variant: MipVariant,
    size: usize,
    subject_id: &str,
) -> Result<MipStack, VoxError> {
    let opts = MipOptions { dilate_peripheral: variant.dilated, size, ..Default::default() };
    if variant.trachea_included {
        project_mip(aligned, &opts, subject_id, true)
    } else {
        project_mip(&mask_trachea(aligned)?, &opts, subject_id, false)
    }
}
