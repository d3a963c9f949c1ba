#![allow(dead_code)]

use airtree::autoenc::{ArchitectureDescriptor, Autoencoder, Tensor};
use rand::Rng;

/// Central-difference check of every parameter gradient of the tiny
/// network in f64. Returns (max relative error, parameter count).
pub fn tiny_gradient_check(seed: u64, step: f64, floor: f64) -> (f64, usize) {
    let mut rng = airtree::seed::rng(seed);
    let mut model = Autoencoder::<f64>::new(ArchitectureDescriptor::tiny(), seed).unwrap();
    let x = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|_| rng.random_range(0.0..1.0)).collect());
    let t = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|_| rng.random_bool(0.3) as u8 as f64).collect());
    model.loss_and_grad(&x, &t, false).unwrap();
    let grads = model.flat_grads();
    let base = model.flat_params();
    let mut worst = 0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        model.set_flat_params(&p);
        let lp = model.train_mode_loss(&x, &t).unwrap().total;
        p[i] = base[i] - step;
        model.set_flat_params(&p);
        let lm = model.train_mode_loss(&x, &t).unwrap().total;
        let fd = (lp - lm) / (2.0 * step);
        let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(floor);
        worst = worst.max(rel);
    }
    (worst, base.len())
}

/// Pair-enumeration oracle: (pairs together in both, together in c1,
/// together in c2, total pairs).
pub fn pair_counts(c1: &[usize], c2: &[usize]) -> (f64, f64, f64, f64) {
    let (mut tp, mut a, mut b, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..c1.len() {
        for j in i + 1..c1.len() {
            let s1 = c1[i] == c1[j];
            let s2 = c2[i] == c2[j];
            tp += (s1 && s2) as u8 as f64;
            a += s1 as u8 as f64;
            b += s2 as u8 as f64;
            total += 1.0;
        }
    }
    (tp, a, b, total)
}

pub fn brute_rand_index(c1: &[usize], c2: &[usize]) -> f64 {
    let (mut agree, mut total) = (0.0, 0.0);
    for i in 0..c1.len() {
        for j in i + 1..c1.len() {
            agree += ((c1[i] == c1[j]) == (c2[i] == c2[j])) as u8 as f64;
            total += 1.0;
        }
    }
    agree / total
}

/// (RI - E[RI]) / (1 - E[RI]) with E over uniformly random relabelings of
/// the items of `c2`: a random permutation sends a pair to a uniform random
/// pair, so a pair together in `c1` stays together with probability b/total.
pub fn brute_ari_expected(c1: &[usize], c2: &[usize]) -> f64 {
    let (_, a, b, total) = pair_counts(c1, c2);
    let ri = brute_rand_index(c1, c2);
    let e_tp = a * b / total;
    let e_ri = (total - a - b + 2.0 * e_tp) / total;
    (ri - e_ri) / (1.0 - e_ri)
}

/// Same quantity with E[RI] averaged over every permutation of `c2`.
pub fn brute_ari_exhaustive(c1: &[usize], c2: &[usize]) -> f64 {
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let perms = permutations(c1.len());
    let mut e_ri = 0.0;
    for p in &perms {
        let shuffled: Vec<usize> = p.iter().map(|&i| c2[i]).collect();
        e_ri += brute_rand_index(c1, &shuffled);
    }
    e_ri /= perms.len() as f64;
    (brute_rand_index(c1, c2) - e_ri) / (1.0 - e_ri)
}

pub fn random_blob(rng: &mut impl Rng, h: usize, w: usize) -> airtree::image::BinaryImage {
    // union of random discs and bars
    let mut img = airtree::image::BinaryImage::new(h, w);
    for _ in 0..rng.random_range(1..5) {
        let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        if rng.random_bool(0.5) {
            let r = rng.random_range(1.5..(h.min(w) as f64 / 4.0));
            for y in 0..h {
                for x in 0..w {
                    if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                        img.set(y, x, true);
                    }
                }
            }
        } else {
            let (ly, lx) = (rng.random_range(1..h / 2), rng.random_range(1..w / 2));
            for y in (cy as usize)..(cy as usize + ly).min(h) {
                for x in (cx as usize)..(cx as usize + lx).min(w) {
                    img.set(y, x, true);
                }
            }
        }
    }
    img
}

/// Planted-partition graph: `blocks` groups of `size` nodes, edge
/// probabilities `p_in` within and `p_out` between groups.
pub fn planted_partition(seed: u64, blocks: usize, size: usize, p_in: f64, p_out: f64) -> (airtree::cluster::KnnGraph, Vec<usize>) {
    let mut rng = airtree::seed::rng(seed);
    let n = blocks * size;
    let truth: Vec<usize> = (0..n).map(|i| i / size).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if truth[i] == truth[j] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((i, j, 1.0));
            }
        }
    }
    (airtree::cluster::KnnGraph::from_edges(n, &edges), truth)
}
