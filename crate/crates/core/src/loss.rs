//! Task losses and evaluation metrics on plain slices.

use crate::error::{shape_err, Error, Result};

/// Mean of squared differences.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(shape_err(target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mse of empty input".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(scores)[label]` via log-sum-exp.
pub fn softmax_xent(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - scores[label])
}

pub fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// `10·log10(peak²/MSE)`; `+inf` when the prediction is exact.
pub fn psnr(pred: &[f64], target: &[f64]) -> Result<f64> {
    let err = mse(pred, target)?;
    let peak = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        let t = vec![0.3, -1.0, 2.0];
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!((mse(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(mse(&p, &t[..2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut acc = 0.0;
        for i in 0..50 {
            acc += (a[i] - b[i]).powi(2);
        }
        acc /= 50.0;
        assert!((mse(&a, &b).unwrap() - acc).abs() <= 1e-15 * acc);
    }

    #[test]
    fn xent_examples() {
        let c = 7;
        let uniform = vec![0.4; c];
        assert!((softmax_xent(&uniform, 3).unwrap() - (c as f64).ln()).abs() < 1e-14);
        let mut peaked = vec![0.0; 10];
        peaked[4] = 30.0;
        assert!(softmax_xent(&peaked, 4).unwrap() < 1e-10);
        assert!(softmax_xent(&peaked, 10).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s: Vec<f64> = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let label = rng.gen_range(0..10);
            let naive = -(s[label].exp() / s.iter().map(|v| v.exp()).sum::<f64>()).ln();
            assert!((softmax_xent(&s, label).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_exact_is_infinite() {
        let t = vec![0.1, 0.9];
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
        let p = vec![0.1, 0.8];
        let expected = 10.0 * (0.81f64 / 0.005).log10();
        assert!((psnr(&p, &t).unwrap() - expected).abs() < 1e-12);
    }
}
