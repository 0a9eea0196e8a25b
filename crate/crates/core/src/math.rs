//! Small numeric helpers shared by the loss kernels.

use crate::{Error, Result};

/// Default floor added inside logarithms.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(x + floor)`, refusing `log(0)` when no floor is configured.
pub fn floored_ln(x: f64, floor: f64, what: impl FnOnce() -> String) -> Result<f64> {
    let v = x + floor;
    if v <= 0.0 {
        return Err(Error::LogOfZero(what()));
    }
    Ok(v.ln())
}

/// Pulls a probability-space gradient `dL/dp` back to the logits of
/// `p = softmax(z)`: `dL/dz_j = p_j (g_j - <g, p>)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(p, g)| p * (g - dot)).collect()
}

/// Checks that `p` is non-negative and sums to one within `tol`.
pub fn check_distribution(p: &[f64], tol: f64) -> Result<()> {
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NotADistribution(format!("entry {i} is {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotADistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// `KL(p || q)` with the floor applied inside the logs of both arguments.
pub fn kl_divergence(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            let lq = floored_ln(qi, floor, || format!("q[{i}] = 0 under p[{i}] = {pi}"))?;
            total += pi * ((pi + floor).ln() - lq);
        }
    }
    Ok(total)
}

/// Gradient of [`kl_divergence`] with respect to `q`.
pub fn kl_divergence_grad_q(p: &[f64], q: &[f64], floor: f64) -> Vec<f64> {
    p.iter().zip(q).map(|(&pi, &qi)| if pi > 0.0 { -pi / (qi + floor) } else { 0.0 }).collect()
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0], 1.0);
        let b = softmax(&[101.0, 102.0, 103.0], 1.0);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn temperature_flattens() {
        let sharp = softmax(&[0.0, 2.0], 1.0);
        let soft = softmax(&[0.0, 2.0], 4.0);
        assert!(soft[1] < sharp[1]);
    }

    #[test]
    fn log_of_zero_without_floor_is_an_error() {
        assert!(matches!(floored_ln(0.0, 0.0, || "x".into()), Err(Error::LogOfZero(_))));
        assert!(floored_ln(0.0, 1e-12, || "x".into()).is_ok());
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let p = [0.2, 0.3, 0.5];
        assert!(kl_divergence(&p, &p, 0.0).unwrap().abs() < 1e-15);
    }
}
