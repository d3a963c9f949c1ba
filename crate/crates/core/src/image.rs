//! Plain 2D binary raster used for projections, skeletons and metrics.

use std::io::{BufRead, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PGM: {0}")]
    Malformed(String),
}

/// Row-major `h x w` binary image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![false; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Self { h, w, data }
    }

    /// Thresholds a real-valued map: `v >= threshold` is foreground.
    pub fn threshold(h: usize, w: usize, values: &[f32], threshold: f32) -> Self {
        assert_eq!(values.len(), h * w);
        Self { h, w, data: values.iter().map(|&v| v >= threshold).collect() }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.w + c] = v;
    }

    /// Out-of-bounds reads are background.
    #[inline]
    pub fn get_signed(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.h && (c as usize) < self.w && self.get(r as usize, c as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.h == other.h && self.w == other.w && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn union_with(&mut self, other: &BinaryImage) {
        assert_eq!((self.h, self.w), (other.h, other.w));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Number of 8-connected foreground components.
    pub fn components8(&self) -> usize {
        let mut seen = vec![false; self.data.len()];
        let mut stack = Vec::new();
        let mut n = 0;
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            n += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (r, c) = ((i / self.w) as isize, (i % self.w) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if self.get_signed(rr, cc) {
                            let j = rr as usize * self.w + cc as usize;
                            if !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        n
    }

    /// Binary (P5) PGM, foreground written as 255.
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<(), PgmError> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm_bytes(w, self.h, self.w, &bytes)
    }

    /// Reads a P5 PGM; pixels above half of maxval are foreground.
    pub fn read_pgm<R: Read>(r: R) -> Result<Self, PgmError> {
        let (h, w, maxval, bytes) = read_pgm_bytes(r)?;
        let half = maxval / 2;
        Ok(Self { h, w, data: bytes.iter().map(|&b| u32::from(b) > half).collect() })
    }
}

pub fn write_pgm_bytes<W: Write>(mut w: W, h: usize, width: usize, bytes: &[u8]) -> Result<(), PgmError> {
    assert_eq!(bytes.len(), h * width);
    write!(w, "P5\n{} {}\n255\n", width, h)?;
    w.write_all(bytes)?;
    Ok(())
}

/// Returns `(h, w, maxval, pixels)`; only 8-bit maxvals are accepted.
pub fn read_pgm_bytes<R: Read>(r: R) -> Result<(usize, usize, u32, Vec<u8>), PgmError> {
    let mut r = std::io::BufReader::new(r);
    let mut tokens: Vec<String> = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(PgmError::Malformed("truncated header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(PgmError::Malformed(format!("expected P5, found {}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| PgmError::Malformed(format!("bad header field {s:?}")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::Malformed(format!("unsupported maxval {maxval}")));
    }
    let mut bytes = vec![0u8; h * w];
    r.read_exact(&mut bytes).map_err(|_| PgmError::Malformed("truncated pixel data".into()))?;
    Ok((h, w, maxval as u32, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = BinaryImage::from_fn(5, 7, |r, c| (r * 3 + c) % 4 == 0);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n7 5\n255\n"));
        assert_eq!(BinaryImage::read_pgm(&buf[..]).unwrap(), img);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend([0, 255]);
        let img = BinaryImage::read_pgm(&buf[..]).unwrap();
        assert_eq!(img.data, vec![false, true]);
    }

    #[test]
    fn eight_connected_components() {
        let img = BinaryImage::from_fn(4, 4, |r, c| (r, c) == (0, 0) || (r, c) == (1, 1) || (r, c) == (3, 3));
        assert_eq!(img.components8(), 2);
    }
}
