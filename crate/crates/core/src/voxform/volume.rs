use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use super::VoxError;

/// Highest admissible label: Weibel generation 16 stored as 17.
pub const MAX_LABEL: u8 = 17;

const LVOL_MAGIC: &[u8; 8] = b"LVOL0001";
const LVOL_HEADER_LEN: usize = 64;

/// Dense 3D label grid. `0` is background, `g + 1` an airway voxel of
/// generation `g`. Storage is x-fastest: `data[x + nx * (y + ny * z)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVolume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<u8>,
}

impl LabeledVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self { dims, spacing, data: vec![0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_data(dims: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> Result<Self, VoxError> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(VoxError::Format(format!(
                "label buffer has {} bytes, dims {:?} need {}",
                data.len(),
                dims,
                dims[0] * dims[1] * dims[2]
            )));
        }
        if let Some(&bad) = data.iter().find(|&&l| l > MAX_LABEL) {
            return Err(VoxError::InvalidLabel(bad));
        }
        Ok(Self { dims, spacing, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) {
        let i = self.index(x, y, z);
        self.data[i] = label;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&l| l > 0).count()
    }

    /// Voxel count per label value, indexed `0..=MAX_LABEL`.
    pub fn label_histogram(&self) -> [usize; MAX_LABEL as usize + 1] {
        let mut h = [0usize; MAX_LABEL as usize + 1];
        for &l in &self.data {
            h[l.min(MAX_LABEL) as usize] += 1;
        }
        h
    }

    /// Deepest generation present, if any foreground exists.
    pub fn max_generation(&self) -> Option<u8> {
        self.data.iter().copied().max().filter(|&l| l > 0).map(|l| l - 1)
    }

    /// Iterator over `(x, y, z, label)` of foreground voxels.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize, usize, u8)> + '_ {
        let [nx, ny, _] = self.dims;
        self.data.iter().enumerate().filter(|(_, &l)| l > 0).map(move |(i, &l)| {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            (x, y, z, l)
        })
    }

    /// Number of 26-connected foreground components.
    pub fn component_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut seen = vec![false; self.data.len()];
        let mut queue = VecDeque::new();
        let mut components = 0;
        for start in 0..self.data.len() {
            if self.data[start] == 0 || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                                continue;
                            }
                            let j = self.index(xx as usize, yy as usize, zz as usize);
                            if self.data[j] > 0 && !seen[j] {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        components
    }

    /// Checks the invariants required of a volume entering the pipeline.
    pub fn validate(&self) -> Result<(), VoxError> {
        if let Some(&bad) = self.data.iter().find(|&&l| l > MAX_LABEL) {
            return Err(VoxError::InvalidLabel(bad));
        }
        if self.foreground_count() == 0 {
            return Err(VoxError::EmptyResult);
        }
        let c = self.component_count();
        if c != 1 {
            return Err(VoxError::NotConnected(c));
        }
        Ok(())
    }

    /// Serializes into the `.lvol` container.
    pub fn write_lvol<W: Write>(&self, mut w: W) -> Result<(), VoxError> {
        let mut header = [0u8; LVOL_HEADER_LEN];
        header[..8].copy_from_slice(LVOL_MAGIC);
        for (i, &d) in self.dims.iter().enumerate() {
            let d = u32::try_from(d).map_err(|_| VoxError::Format("dimension exceeds u32".into()))?;
            header[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
        }
        for (i, &s) in self.spacing.iter().enumerate() {
            header[20 + 8 * i..28 + 8 * i].copy_from_slice(&s.to_le_bytes());
        }
        w.write_all(&header)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_lvol<R: Read>(mut r: R) -> Result<Self, VoxError> {
        let mut header = [0u8; LVOL_HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| VoxError::Format(format!("truncated header: {e}")))?;
        if &header[..8] != LVOL_MAGIC {
            return Err(VoxError::Format("bad magic".into()));
        }
        if header[44..].iter().any(|&b| b != 0) {
            return Err(VoxError::Format("reserved header bytes are not zero".into()));
        }
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        }
        let mut spacing = [0f64; 3];
        for (i, s) in spacing.iter_mut().enumerate() {
            *s = f64::from_le_bytes(header[20 + 8 * i..28 + 8 * i].try_into().unwrap());
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VoxError::Format(format!("invalid spacing {spacing:?}")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| VoxError::Format("dimension product overflows".into()))?;
        let mut data = vec![0u8; n];
        r.read_exact(&mut data)
            .map_err(|e| VoxError::Format(format!("truncated label data: {e}")))?;
        Self::from_data(dims, spacing, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), VoxError> {
        let f = std::fs::File::create(path)?;
        self.write_lvol(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, VoxError> {
        let f = std::fs::File::open(path)?;
        Self::read_lvol(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lvol_header_layout() {
        let mut v = LabeledVolume::new([2, 3, 4], [0.5, 0.75, 1.0]);
        v.set(1, 2, 3, 7);
        let mut buf = Vec::new();
        v.write_lvol(&mut buf).unwrap();
        assert_eq!(buf.len(), 64 + 24);
        assert_eq!(&buf[..8], b"LVOL0001");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 0.75);
        assert!(buf[44..64].iter().all(|&b| b == 0));
        // x-fastest: (1,2,3) -> 1 + 2*(2 + 3*3) = 23
        assert_eq!(buf[64 + 23], 7);
        assert_eq!(LabeledVolume::read_lvol(&buf[..]).unwrap(), v);
    }

    #[test]
    fn lvol_rejects_corruption() {
        let v = LabeledVolume::new([2, 2, 2], [1.0; 3]);
        let mut buf = Vec::new();
        v.write_lvol(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(LabeledVolume::read_lvol(&bad[..]), Err(VoxError::Format(_))));
        assert!(matches!(LabeledVolume::read_lvol(&buf[..70]), Err(VoxError::Format(_))));
        let mut lab = buf.clone();
        lab[64] = 18;
        assert!(matches!(LabeledVolume::read_lvol(&lab[..]), Err(VoxError::InvalidLabel(18))));
    }

    #[test]
    fn connectivity_counts_diagonal_neighbors() {
        let mut v = LabeledVolume::new([4, 4, 4], [1.0; 3]);
        v.set(0, 0, 0, 1);
        v.set(1, 1, 1, 2);
        assert_eq!(v.component_count(), 1);
        v.set(3, 3, 3, 2);
        assert_eq!(v.component_count(), 2);
        assert!(matches!(v.validate(), Err(VoxError::NotConnected(2))));
    }
}
