//! Elementwise and vector primitives shared by the network and the diagnostics.

use crate::error::{Error, Result};

use super::matrix::{dot, norm};

/// Epsilon added to the mean square inside every RMSNorm.
pub const RMS_EPS: f64 = 1e-8;

/// `v / sqrt(mean(v²) + eps)`
pub fn rms_norm(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("rms_norm of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rms_norm input".into()));
    }
    let ms = dot(v, v) / v.len() as f64;
    let denom = (ms + eps).sqrt();
    if denom == 0.0 {
        // only reachable with eps = 0 and a zero vector
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter().map(|x| x / denom).collect())
}

pub fn relu_squared(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let r = x.max(0.0);
            r * r
        })
        .collect()
}

/// Softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut p = Vec::with_capacity(logits.len());
    softmax_into(logits, 1.0 / temperature, &mut p);
    Ok(p)
}

/// Unchecked softmax of `scale · logits`, overwriting `out`.
pub(crate) fn softmax_into(logits: &[f64], scale: f64, out: &mut Vec<f64>) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    out.clear();
    out.extend(logits.iter().map(|&x| ((x - max) * scale).exp()));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
}

/// `log softmax(logits)`.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum::<f64>()
}

/// KL(target ‖ softmax(student_logits)) and the matching cross-entropy.
///
/// Returns `(kl, ce)` with `kl = ce − H(target)`.
pub fn kl_and_cross_entropy(target: &[f64], student_logits: &[f64]) -> Result<(f64, f64)> {
    if target.len() != student_logits.len() {
        return Err(Error::Shape(format!(
            "target has {} entries, logits {}",
            target.len(),
            student_logits.len()
        )));
    }
    if target.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidArgument(
            "target distribution has negative or non-finite entries".into(),
        ));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "target sums to {total}, expected 1"
        )));
    }
    if student_logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("student logits".into()));
    }
    let logp = log_softmax(student_logits);
    let ce = -target
        .iter()
        .zip(&logp)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lq)| p * lq)
        .sum::<f64>();
    Ok((ce - entropy(target), ce))
}

/// Angle in `[0, π]` between two nonzero vectors, as
/// `2·atan2(‖û − v̂‖, ‖û + v̂‖)`, which stays accurate near 0 and π where
/// `acos` of the cosine does not.
pub fn angle_between(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("{} vs {} entries", u.len(), v.len())));
    }
    angle_checked(u, v).ok_or_else(|| Error::InvalidArgument("angle with a zero vector".into()))
}

/// `None` when either argument has zero norm.
pub(crate) fn angle_checked(u: &[f64], v: &[f64]) -> Option<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (x, y) = (a / nu, b / nv);
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2};

    #[test]
    fn rms_norm_examples() {
        // rms of [3,4] is sqrt(12.5)
        let out = rms_norm(&[3.0, 4.0], 0.0).unwrap();
        assert!((out[0] - 3.0 / 12.5f64.sqrt()).abs() < 1e-15);
        assert!((out[0] - 0.848_528_137_423_857).abs() < 1e-12);
        assert!((out[1] - 1.131_370_849_898_476).abs() < 1e-12);

        assert_eq!(rms_norm(&[0.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert!(rms_norm(&[], 1e-8).is_err());
        assert!(rms_norm(&[1.0, f64::INFINITY], 1e-8).is_err());
    }

    #[test]
    fn relu_squared_examples() {
        assert_eq!(relu_squared(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 4.0]);
        assert_eq!(relu_squared(&[-3.0, -0.1]), vec![0.0, 0.0]);
        assert_eq!(relu_squared(&[0.5]), vec![0.25]);
    }

    #[test]
    fn softmax_examples() {
        for t in [0.01, 1.0, 50.0] {
            assert_eq!(softmax_temperature(&[0.0, 0.0], t).unwrap(), vec![0.5, 0.5]);
        }
        let p = softmax_temperature(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731_058_578_630_005).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995).abs() < 1e-12);

        let p = softmax_temperature(&[1.0, 0.0], 0.01).unwrap();
        assert!(p[1] < 1e-20);
        assert!(softmax_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_temperature(&[1.0], -1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let logits = [0.3, -1.2, 2.0, 0.0];
        let p = softmax_temperature(&logits, 1.0).unwrap();
        let (kl, _) = kl_and_cross_entropy(&p, &logits).unwrap();
        assert!(kl.abs() < 1e-10);

        let (kl, ce) = kl_and_cross_entropy(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((ce - LN_2).abs() < 1e-15 && (kl - LN_2).abs() < 1e-15);

        let (kl, ce) = kl_and_cross_entropy(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert!(kl.abs() < 1e-15 && (ce - LN_2).abs() < 1e-15);

        assert!(kl_and_cross_entropy(&[1.5, -0.5], &[0.0, 0.0]).is_err());
        assert!(kl_and_cross_entropy(&[0.4, 0.4], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn angle_examples() {
        assert!((angle_between(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle_between(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        let a = angle_between(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((a - FRAC_PI_4).abs() < 1e-15);
        assert!(angle_between(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn rms_norm_has_unit_rms(v in vec_strategy(7), c in 0.01f64..100.0) {
            prop_assume!(norm(&v) > 1e-3);
            let out = rms_norm(&v, 0.0).unwrap();
            let rms = (dot(&out, &out) / 7.0).sqrt();
            prop_assert!((rms - 1.0).abs() < 1e-9);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let out2 = rms_norm(&scaled, 0.0).unwrap();
            for (a, b) in out.iter().zip(&out2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(v in vec_strategy(6), shift in -50.0f64..50.0, t in 0.05f64..5.0) {
            let p = softmax_temperature(&v, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax_temperature(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_nonnegative(t in vec_strategy(5), s in vec_strategy(5), temp in 0.1f64..3.0) {
            let target = softmax_temperature(&t, temp).unwrap();
            let (kl, ce) = kl_and_cross_entropy(&target, &s).unwrap();
            prop_assert!(kl >= -1e-12);
            prop_assert!(ce >= kl - 1e-12);
        }

        #[test]
        fn angle_symmetric_and_scale_invariant(u in vec_strategy(4), v in vec_strategy(4), a in 0.1f64..10.0, b in 0.1f64..10.0) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let t = angle_between(&u, &v).unwrap();
            prop_assert!((0.0..=std::f64::consts::PI).contains(&t));
            prop_assert!((t - angle_between(&v, &u).unwrap()).abs() < 1e-12);
            let us: Vec<f64> = u.iter().map(|x| x * a).collect();
            let vs: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((t - angle_between(&us, &vs).unwrap()).abs() < 1e-7);
        }
    }
}
