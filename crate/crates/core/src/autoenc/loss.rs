//! Equal-weight binary cross-entropy + soft Dice reconstruction loss.

use super::AutoencError;
use crate::Scalar;

/// Dice smoothing term.
pub const DICE_EPS: f64 = 1.0;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
}

fn check<S: Scalar>(recon: &[S], target: &[S]) -> Result<(), AutoencError> {
    if recon.len() != target.len() {
        return Err(AutoencError::ShapeMismatch(format!("recon has {} values, target {}", recon.len(), target.len())));
    }
    if recon.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(AutoencError::NonFinite("loss input"));
    }
    Ok(())
}

/// `0.5 * mean BCE + 0.5 * (1 - (2 sum(p t) + eps) / (sum p + sum t + eps))`
/// over every element of the batch.
pub fn loss<S: Scalar>(recon: &[S], target: &[S]) -> Result<LossParts, AutoencError> {
    check(recon, target)?;
    let n = recon.len().max(1) as f64;
    let (mut bce, mut inter, mut sp, mut st) = (0f64, 0f64, 0f64, 0f64);
    for (&p, &t) in recon.iter().zip(target) {
        let (p, t) = (p.as_f64(), t.as_f64());
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        bce -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        inter += p * t;
        sp += p;
        st += t;
    }
    let bce = bce / n;
    let dice = 1.0 - (2.0 * inter + DICE_EPS) / (sp + st + DICE_EPS);
    Ok(LossParts { bce, dice, total: 0.5 * bce + 0.5 * dice })
}

/// Loss and its gradient with respect to the pre-sigmoid logits, given the
/// sigmoid outputs `recon`.
pub fn loss_and_logit_grad<S: Scalar>(recon: &[S], target: &[S]) -> Result<(LossParts, Vec<S>), AutoencError> {
    let parts = loss(recon, target)?;
    let n = recon.len().max(1) as f64;
    let (mut inter, mut denom) = (0f64, DICE_EPS);
    for (&p, &t) in recon.iter().zip(target) {
        inter += p.as_f64() * t.as_f64();
        denom += p.as_f64() + t.as_f64();
    }
    let numer = 2.0 * inter + DICE_EPS;
    let grad = recon
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64(), t.as_f64());
            let dsig = p * (1.0 - p);
            // d BCE / d logit, zero where the clamp is active
            let bce = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) { (p - t) / n } else { 0.0 };
            let ddice_dp = -(2.0 * t * denom - numer) / (denom * denom);
            S::lit(0.5 * bce + 0.5 * ddice_dp * dsig)
        })
        .collect();
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_half_against_empty_target() {
        let recon = vec![0.5f64; 64];
        let target = vec![0.0f64; 64];
        let l = loss(&recon, &target).unwrap();
        assert!((l.bce - std::f64::consts::LN_2).abs() < 1e-12);
        let dice = 1.0 - DICE_EPS / (32.0 + DICE_EPS);
        assert!((l.dice - dice).abs() < 1e-12);
        assert!((l.total - 0.5 * (std::f64::consts::LN_2 + dice)).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_limit() {
        let target: Vec<f64> = (0..100).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let mut prev = f64::INFINITY;
        for clamp in [1e-2, 1e-4, 1e-7] {
            let recon: Vec<f64> = target.iter().map(|&t| if t == 1.0 { 1.0 - clamp } else { clamp }).collect();
            let l = loss(&recon, &target).unwrap();
            assert!(l.total < prev);
            prev = l.total;
        }
        let recon: Vec<f64> = target.iter().map(|&t| if t == 1.0 { 1.0 - 1e-7 } else { 1e-7 }).collect();
        assert!(loss(&recon, &target).unwrap().dice < 1e-6);
    }

    #[test]
    fn permutation_invariant() {
        let recon: Vec<f64> = (0..50).map(|i| 0.1 + 0.8 * ((i * 7) % 50) as f64 / 50.0).collect();
        let target: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        let a = loss(&recon, &target).unwrap();
        let (mut r2, mut t2) = (recon.clone(), target.clone());
        r2.reverse();
        t2.reverse();
        let b = loss(&r2, &t2).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(loss(&[f64::NAN], &[0.0]), Err(AutoencError::NonFinite(_))));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits: Vec<f64> = (0..20).map(|i| ((i as f64) * 0.73).sin() * 3.0).collect();
        let target: Vec<f64> = (0..20).map(|i| ((i * 5) % 3 == 0) as u8 as f64).collect();
        let sig = |z: &[f64]| z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect::<Vec<_>>();
        let (_, g) = loss_and_logit_grad(&sig(&logits), &target).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp[i] += h;
            let mut lm = logits.clone();
            lm[i] -= h;
            let fd = (loss(&sig(&lp), &target).unwrap().total - loss(&sig(&lm), &target).unwrap().total) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
