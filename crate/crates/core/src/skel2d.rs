//! Zhang–Suen thinning of binary projections into 1-pixel centerlines.
//!
//! Each sub-iteration first marks candidates with the classic Zhang–Suen
//! tests, then deletes them in raster order, re-checking that the pixel is
//! still simple in the partially thinned image. The re-check keeps 2x2
//! blocks and 2-pixel-thick diagonals from vanishing, so the number of
//! 8-connected components never changes.

use crate::image::BinaryImage;

/// Neighbors P2..P9, clockwise from north.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

struct Padded {
    w: usize,
    data: Vec<bool>,
}

impl Padded {
    fn new(img: &BinaryImage) -> Self {
        let w = img.w + 2;
        let mut data = vec![false; (img.h + 2) * w];
        for r in 0..img.h {
            for c in 0..img.w {
                data[(r + 1) * w + c + 1] = img.get(r, c);
            }
        }
        Self { w, data }
    }

    #[inline]
    fn ring(&self, i: usize) -> [bool; 8] {
        let w = self.w as isize;
        RING.map(|(dr, dc)| self.data[(i as isize + dr * w + dc) as usize])
    }
}

/// `A(P)`: 0→1 transitions around the ring.
fn transitions(n: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count()
}

fn count(n: &[bool; 8]) -> usize {
    n.iter().filter(|&&b| b).count()
}

/// Deleting the pixel keeps its neighbors in one run and leaves an endpoint.
fn removable(n: &[bool; 8]) -> bool {
    let b = count(n);
    (2..=6).contains(&b) && transitions(n) == 1
}

fn candidate(n: &[bool; 8], first: bool) -> bool {
    // n[0]=P2 (N), n[2]=P4 (E), n[4]=P6 (S), n[6]=P8 (W)
    if !removable(n) {
        return false;
    }
    if first {
        !(n[0] && n[2] && n[4]) && !(n[2] && n[4] && n[6])
    } else {
        !(n[0] && n[2] && n[6]) && !(n[0] && n[4] && n[6])
    }
}

fn sub_iteration(p: &mut Padded, h: usize, first: bool) -> bool {
    let w = p.w;
    let marked: Vec<usize> = (1..=h)
        .flat_map(|r| (1..w - 1).map(move |c| r * w + c))
        .filter(|&i| p.data[i] && candidate(&p.ring(i), first))
        .collect();
    let mut changed = false;
    for i in marked {
        if removable(&p.ring(i)) {
            p.data[i] = false;
            changed = true;
        }
    }
    changed
}

/// Thins `img` until neither sub-iteration removes a pixel.
pub fn skeletonize(img: &BinaryImage) -> BinaryImage {
    let mut p = Padded::new(img);
    loop {
        let a = sub_iteration(&mut p, img.h, true);
        let b = sub_iteration(&mut p, img.h, false);
        if !a && !b {
            break;
        }
    }
    BinaryImage::from_fn(img.h, img.w, |r, c| p.data[(r + 1) * p.w + c + 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_stays_empty() {
        let img = BinaryImage::new(7, 9);
        assert_eq!(skeletonize(&img), img);
    }

    #[test]
    fn thin_lines_unchanged() {
        let h = BinaryImage::from_fn(5, 12, |r, c| r == 2 && (1..11).contains(&c));
        assert_eq!(skeletonize(&h), h);
        let d = BinaryImage::from_fn(10, 10, |r, c| r == c);
        assert_eq!(skeletonize(&d), d);
    }

    #[test]
    fn filled_square_collapses() {
        let sq = BinaryImage::from_fn(14, 14, |r, c| (2..12).contains(&r) && (2..12).contains(&c));
        let s = skeletonize(&sq);
        assert!(s.count() >= 1 && s.count() <= 20, "{} pixels", s.count());
        assert!(s.is_subset_of(&sq));
        assert_eq!(s.components8(), 1);
    }

    #[test]
    fn two_by_two_block_survives() {
        let sq = BinaryImage::from_fn(4, 4, |r, c| (1..3).contains(&r) && (1..3).contains(&c));
        let s = skeletonize(&sq);
        assert_eq!(s.components8(), 1);
        assert!(s.count() >= 1);
    }

    #[test]
    fn thick_diagonal_survives() {
        let img = BinaryImage::from_fn(12, 12, |r, c| c == r || c == r + 1);
        let s = skeletonize(&img);
        assert_eq!(s.components8(), 1);
        assert!(s.count() >= 1 && s.is_subset_of(&img));
    }

    #[test]
    fn touches_image_border() {
        let img = BinaryImage::from_fn(6, 6, |_, _| true);
        let s = skeletonize(&img);
        assert_eq!(s.components8(), 1);
        assert!(s.count() < 36);
    }

    fn blob() -> impl Strategy<Value = BinaryImage> {
        (4usize..24, 4usize..24)
            .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(proptest::bool::weighted(0.55), h * w)))
            .prop_map(|(h, w, data)| BinaryImage { h, w, data })
    }

    proptest! {
        #[test]
        fn skeleton_properties(img in blob()) {
            let s = skeletonize(&img);
            prop_assert!(s.is_subset_of(&img));
            prop_assert_eq!(skeletonize(&s), s.clone());
            prop_assert_eq!(s.components8(), img.components8());
        }
    }
}
