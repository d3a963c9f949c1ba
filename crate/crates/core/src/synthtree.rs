//! Synthetic generation-labeled airway trees with four planted shape
//! classes, used in place of clinical segmentations.
//!
//! A tree is grown as a recursive bifurcation from a trachea segment; each
//! segment is rasterized as a capsule. The classes differ in branch angle,
//! trachea length, depth and left/right depth balance.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::voxform::{LabeledVolume, VoxError};

pub const NUM_CLASSES: u8 = 4;
const MIN_RADIUS: f64 = 1.0;
const MAX_ATTEMPTS: u64 = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("tree exceeds volume bounds (segment {segment} of generation {generation})")]
    RasterizationOverflow { segment: usize, generation: u8 },
    #[error("invalid tree spec: {0}")]
    InvalidSpec(String),
    #[error("rasterized tree is not a single connected component: {0}")]
    Volume(#[from] VoxError),
}

/// Generator parameters for one tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub seed: u64,
    pub shape_class: u8,
    pub max_generation: u8,
    /// Mean angle between the two children of a bifurcation, in degrees.
    pub branch_angle_mean: f64,
    pub branch_length_decay: f64,
    pub radius_decay: f64,
    pub volume_dims: [usize; 3],
    pub trachea_length: f64,
    pub trachea_radius: f64,
    /// Depth removed from the left main-bronchus subtree.
    pub left_depth_deficit: u8,
}

impl TreeSpec {
    /// Class preset. Lengths scale with the smallest volume dimension
    /// (tuned at 128).
    pub fn for_class(shape_class: u8, seed: u64, volume_dims: [usize; 3]) -> Self {
        let scale = *volume_dims.iter().min().unwrap_or(&128) as f64 / 128.0;
        let base = Self {
            seed,
            shape_class,
            max_generation: 8,
            branch_angle_mean: 60.0,
            branch_length_decay: 0.74,
            radius_decay: 0.78,
            volume_dims,
            trachea_length: 26.0 * scale,
            trachea_radius: 4.0 * scale.max(0.5),
            left_depth_deficit: 0,
        };
        match shape_class {
            0 => Self { branch_angle_mean: 32.0, ..base },
            1 => Self { branch_angle_mean: 95.0, branch_length_decay: 0.7, ..base },
            2 => Self {
                trachea_length: 10.0 * scale,
                max_generation: 10,
                branch_length_decay: 0.76,
                ..base
            },
            _ => Self { left_depth_deficit: 5, branch_angle_mean: 60.0, ..base },
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        if self.volume_dims.iter().any(|&d| d < 64) {
            return Err(SynthError::InvalidSpec(format!("volume dims {:?} must each be >= 64", self.volume_dims)));
        }
        if self.shape_class >= NUM_CLASSES {
            return Err(SynthError::InvalidSpec(format!("shape class {} out of range", self.shape_class)));
        }
        if self.max_generation > 16 {
            return Err(SynthError::InvalidSpec("max_generation must be <= 16".into()));
        }
        for (name, v) in [("branch_length_decay", self.branch_length_decay), ("radius_decay", self.radius_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SynthError::InvalidSpec(format!("{name} = {v} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One tube of the tree skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    pub generation: u8,
    pub parent: Option<usize>,
    /// 0 = left main-bronchus subtree, 1 = right, `None` for the trachea.
    pub side: Option<u8>,
}

impl Segment {
    fn direction(&self) -> [f64; 3] {
        normalize(sub(self.end, self.start))
    }
}

/// Centerline tree before rasterization.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSkeleton {
    pub segments: Vec<Segment>,
}

/// Shape statistics computed directly from a skeleton.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeSummary {
    pub mean_branch_angle: f64,
    pub max_depth: u8,
    pub trachea_length: f64,
    /// Deepest right-subtree generation minus deepest left-subtree generation.
    pub depth_asymmetry: f64,
    pub segment_count: usize,
}

impl TreeSkeleton {
    pub fn summary(&self) -> TreeSummary {
        let mut angles = Vec::new();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.segments.len()];
        for (i, s) in self.segments.iter().enumerate() {
            if let Some(p) = s.parent {
                children[p].push(i);
            }
        }
        for kids in &children {
            if kids.len() == 2 {
                let (a, b) = (self.segments[kids[0]].direction(), self.segments[kids[1]].direction());
                angles.push(dot(a, b).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        let depth = |side: u8| {
            self.segments.iter().filter(|s| s.side == Some(side)).map(|s| s.generation).max().unwrap_or(0) as f64
        };
        let trachea = &self.segments[0];
        TreeSummary {
            mean_branch_angle: if angles.is_empty() { 0.0 } else { angles.iter().sum::<f64>() / angles.len() as f64 },
            max_depth: self.segments.iter().map(|s| s.generation).max().unwrap_or(0),
            trachea_length: norm(sub(trachea.end, trachea.start)),
            depth_asymmetry: depth(1) - depth(0),
            segment_count: self.segments.len(),
        }
    }

    /// Every child sits one generation below its parent.
    pub fn generations_monotone(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.parent.is_none_or(|p| self.segments[p].generation < s.generation))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

/// Rodrigues rotation of `v` about unit `axis`.
fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    add(add(scale(v, c), scale(cross(axis, v), s)), scale(axis, dot(axis, v) * (1.0 - c)))
}

/// Grows the centerline tree for `spec`.
pub fn build_skeleton(spec: &TreeSpec) -> Result<TreeSkeleton, SynthError> {
    spec.check()?;
    let mut rng = seed::rng(spec.seed);
    let [nx, ny, nz] = spec.volume_dims.map(|d| d as f64);
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, amp: f64| 1.0 + rng.random_range(-amp..amp);

    let tree_angle = spec.branch_angle_mean + rng.random_range(-4.0..4.0);
    let trachea_len = spec.trachea_length * jitter(&mut rng, 0.1);
    let top = [nx / 2.0 + rng.random_range(-2.0..2.0), ny / 2.0 + rng.random_range(-2.0..2.0), nz - 8.0];
    let mut segments = vec![Segment {
        start: top,
        end: add(top, [0.0, 0.0, -trachea_len]),
        radius: spec.trachea_radius.max(MIN_RADIUS),
        generation: 0,
        parent: None,
        side: None,
    }];

    // (segment index, branching-plane normal, length of that segment)
    let first_len = 18.0 * spec.volume_dims.iter().min().copied().unwrap_or(128) as f64 / 128.0;
    let mut stack = vec![(0usize, [1.0, 0.0, 0.0], first_len / spec.branch_length_decay)];
    while let Some((idx, normal, len)) = stack.pop() {
        let parent = segments[idx].clone();
        let child_gen = parent.generation + 1;
        let depth_cap = |side: Option<u8>| match side {
            Some(0) => spec.max_generation.saturating_sub(spec.left_depth_deficit),
            _ => spec.max_generation,
        };
        if child_gen > spec.max_generation {
            continue;
        }
        let dir = parent.direction();
        for (k, sign) in [(0u8, -1.0), (1u8, 1.0)] {
            let side = parent.side.or(Some(k));
            if child_gen > depth_cap(side) {
                continue;
            }
            let half = (tree_angle / 2.0 + rng.random_range(-6.0f64..6.0)).max(2.0).to_radians();
            let d = normalize(rotate(dir, normal, sign * half));
            let twist = (90.0 + rng.random_range(-20.0f64..20.0)).to_radians();
            let n_next = normalize(rotate(normalize(cross(d, normal)), d, twist - PI / 2.0));
            let l = len * spec.branch_length_decay * jitter(&mut rng, 0.15);
            let r = (parent.radius * spec.radius_decay * jitter(&mut rng, 0.05)).max(MIN_RADIUS);
            segments.push(Segment {
                start: parent.end,
                end: add(parent.end, scale(d, l)),
                radius: r,
                generation: child_gen,
                parent: Some(idx),
                side,
            });
            stack.push((segments.len() - 1, n_next, l));
        }
    }
    Ok(TreeSkeleton { segments })
}

/// Rasterizes a skeleton; overlapping tubes keep the shallower generation.
pub fn rasterize(skel: &TreeSkeleton, dims: [usize; 3]) -> Result<LabeledVolume, SynthError> {
    let mut vol = LabeledVolume::new(dims, [1.0; 3]);
    for (si, s) in skel.segments.iter().enumerate() {
        let overflow = SynthError::RasterizationOverflow { segment: si, generation: s.generation };
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for ax in 0..3 {
            let a = s.start[ax].min(s.end[ax]) - s.radius;
            let b = s.start[ax].max(s.end[ax]) + s.radius;
            if a < 0.0 || b > (dims[ax] - 1) as f64 {
                return Err(overflow);
            }
            lo[ax] = a.ceil() as usize;
            hi[ax] = b.floor() as usize;
        }
        let seg = sub(s.end, s.start);
        let len2 = dot(seg, seg).max(1e-12);
        let label = s.generation + 1;
        let r2 = s.radius * s.radius;
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let t = (dot(sub(p, s.start), seg) / len2).clamp(0.0, 1.0);
                    let q = add(s.start, scale(seg, t));
                    let d = sub(p, q);
                    if dot(d, d) <= r2 {
                        let cur = vol.get(x, y, z);
                        if cur == 0 || cur > label {
                            vol.set(x, y, z, label);
                        }
                    }
                }
            }
        }
    }
    Ok(vol)
}

/// Generates one labeled volume.
pub fn generate(spec: &TreeSpec) -> Result<LabeledVolume, SynthError> {
    let skel = build_skeleton(spec)?;
    let vol = rasterize(&skel, spec.volume_dims)?;
    vol.validate()?;
    Ok(vol)
}

/// One cohort member.
#[derive(Clone, Debug)]
pub struct Subject {
    pub subject_id: String,
    pub class_label: u8,
    pub seed: u64,
    pub volume: LabeledVolume,
}

/// Generates the tree spec for subject `index` of class `class`, retrying seeds
/// until the tree fits.
pub fn subject_spec(class: u8, index: usize, base_seed: u64, dims: [usize; 3]) -> Result<(TreeSpec, LabeledVolume), SynthError> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed::derive(base_seed, &[class as u64, index as u64, attempt]);
        let spec = TreeSpec::for_class(class, s, dims);
        match generate(&spec) {
            Ok(v) => return Ok((spec, v)),
            Err(e @ SynthError::InvalidSpec(_)) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Class-balanced deterministic cohort, classes interleaved:
/// subject `4 * i + c` is the `i`-th member of class `c`.
pub fn cohort(n_per_class: usize, base_seed: u64, dims: [usize; 3]) -> Result<Vec<Subject>, SynthError> {
    if n_per_class == 0 {
        return Err(SynthError::InvalidSpec("n_per_class must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_per_class * NUM_CLASSES as usize);
    for i in 0..n_per_class {
        for c in 0..NUM_CLASSES {
            let (spec, volume) = subject_spec(c, i, base_seed, dims)?;
            out.push(Subject {
                subject_id: format!("sub{:04}", out.len()),
                class_label: c,
                seed: spec.seed,
                volume,
            });
        }
    }
    Ok(out)
}
