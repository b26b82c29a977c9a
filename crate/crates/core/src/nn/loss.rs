//! Pixel-wise binary cross-entropy.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::types::{BinaryMask, ProbMap};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside the log.
pub const PROB_FLOOR: f64 = 1e-7;

fn check(n: usize, target: &BinaryMask, pixel_mask: Option<&BinaryMask>) -> Result<()> {
    if target.len() != n {
        return Err(Error::Dimension(format!("prediction has {n} pixels, target {}", target.len())));
    }
    if let Some(m) = pixel_mask {
        m.same_shape(target)?;
    }
    Ok(())
}

/// Mean BCE over the pixels selected by `pixel_mask` (all pixels if `None`).
/// An empty selection yields zero.
pub fn bce_loss<T: Real>(pred: &ProbMap<T>, target: &BinaryMask, pixel_mask: Option<&BinaryMask>) -> Result<f64> {
    check(pred.as_slice().len(), target, pixel_mask)?;
    let lo = PROB_FLOOR;
    let hi = 1.0 - PROB_FLOOR;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (&p, &y)) in pred.as_slice().iter().zip(target.as_slice()).enumerate() {
        if pixel_mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        let p = p.as_f64().clamp(lo, hi);
        sum -= if y { p.ln() } else { (1.0 - p).ln() };
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// BCE from sigmoid outputs plus its gradient with respect to the logits,
/// scaled by `weight`. Inside the clamp the derivative is `p - y`; where the
/// clamp is active the loss is flat and the gradient is zero.
pub fn bce_with_logit_grad<T: Real>(
    probs: &[T],
    target: &BinaryMask,
    pixel_mask: Option<&BinaryMask>,
    weight: f64,
) -> Result<(f64, Vec<T>)> {
    check(probs.len(), target, pixel_mask)?;
    let lo = T::lit(PROB_FLOOR);
    let hi = T::one() - lo;
    let selected = pixel_mask.map_or(probs.len(), |m| m.count_fg());
    let mut grad = vec![T::zero(); probs.len()];
    if selected == 0 {
        return Ok((0.0, grad));
    }
    let scale = T::lit(weight / selected as f64);
    let mut sum = 0.0;
    for (i, (&p, &y)) in probs.iter().zip(target.as_slice()).enumerate() {
        if pixel_mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        let pc = p.max(lo).min(hi);
        sum -= if y { pc.as_f64().ln() } else { (1.0 - pc.as_f64()).ln() };
        if p > lo && p < hi {
            let yv = if y { T::one() } else { T::zero() };
            grad[i] = (p - yv) * scale;
        }
    }
    Ok((sum / selected as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_everywhere_is_ln2() {
        let p = ProbMap::<f64>::filled(3, 3, 0.5);
        let y = BinaryMask::from_fn(3, 3, |r, c| (r + c) % 2 == 0);
        assert!((bce_loss(&p, &y, None).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_case() {
        let p = ProbMap::<f64>::new(1, 2, vec![0.9, 0.2]).unwrap();
        let y = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        let want = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((bce_loss(&p, &y, None).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_near_zero() {
        let y = BinaryMask::from_fn(2, 2, |r, _| r == 0);
        let p = ProbMap::<f64>::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(bce_loss(&p, &y, None).unwrap() < 1e-5);
    }

    #[test]
    fn empty_pixel_mask_is_zero() {
        let y = BinaryMask::filled(2, 2, true);
        let none = BinaryMask::filled(2, 2, false);
        let p = ProbMap::<f32>::filled(2, 2, 0.3);
        assert_eq!(bce_loss(&p, &y, Some(&none)).unwrap(), 0.0);
        let (l, g) = bce_with_logit_grad(p.as_slice(), &y, Some(&none), 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_mask_restricts() {
        let p = ProbMap::<f64>::new(1, 2, vec![0.9, 0.2]).unwrap();
        let y = BinaryMask::new(1, 2, vec![true, true]).unwrap();
        let sel = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        assert!((bce_loss(&p, &y, Some(&sel)).unwrap() + (0.9f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_agrees_with_loss() {
        let probs = vec![0.9f64, 0.2, 0.6];
        let y = BinaryMask::new(1, 3, vec![true, false, false]).unwrap();
        let (l, g) = bce_with_logit_grad(&probs, &y, None, 1.0).unwrap();
        let p = ProbMap::new(1, 3, probs.clone()).unwrap();
        assert!((l - bce_loss(&p, &y, None).unwrap()).abs() < 1e-12);
        assert!((g[0] - (0.9 - 1.0) / 3.0).abs() < 1e-12);
        assert!((g[2] - 0.6 / 3.0).abs() < 1e-12);
    }
}
