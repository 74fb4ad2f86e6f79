//! Smoothed training targets and the cross-entropy loss over arbitrary
//! target distributions.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::records::NUM_CLASSES;

/// Probabilities are clamped to `[LOG_EPS, 1]` before taking logs.
pub const LOG_EPS: f64 = 1e-12;

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SmoothingError {
    #[error("expected a one-hot vector, got {0:?}")]
    NotOneHot(Vec<f64>),
    #[error("expected a probability vector summing to 1, got {0:?}")]
    NotStochastic(Vec<f64>),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, SmoothingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmoothingMode {
    None,
    Uniform,
    SoftConsensus,
}

impl fmt::Display for SmoothingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoothingMode::None => "none",
            SmoothingMode::Uniform => "uniform",
            SmoothingMode::SoftConsensus => "soft_consensus",
        })
    }
}

impl FromStr for SmoothingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(SmoothingMode::None),
            "uniform" => Ok(SmoothingMode::Uniform),
            "soft_consensus" => Ok(SmoothingMode::SoftConsensus),
            other => Err(format!("unknown smoothing mode {other:?}")),
        }
    }
}

/// A training target row: a probability vector over the five stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedTarget {
    pub values: [f64; NUM_CLASSES],
    pub alpha: f64,
    pub mode: SmoothingMode,
}

impl SmoothedTarget {
    pub fn one_hot(class: usize) -> Self {
        let mut values = [0.0; NUM_CLASSES];
        values[class] = 1.0;
        Self {
            values,
            alpha: 0.0,
            mode: SmoothingMode::None,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SmoothingError::Alpha(alpha));
    }
    Ok(())
}

fn check_one_hot(v: &[f64]) -> Result<()> {
    let ones = v.iter().filter(|&&x| x == 1.0).count();
    let zeros = v.iter().filter(|&&x| x == 0.0).count();
    if v.len() != NUM_CLASSES || ones != 1 || zeros != NUM_CLASSES - 1 {
        return Err(SmoothingError::NotOneHot(v.to_vec()));
    }
    Ok(())
}

fn check_stochastic(v: &[f64]) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(SmoothingError::NotStochastic(v.to_vec()));
    }
    Ok(())
}

fn to_array(v: &[f64]) -> Result<[f64; NUM_CLASSES]> {
    v.try_into().map_err(|_| SmoothingError::Shape {
        expected: NUM_CLASSES,
        found: v.len(),
    })
}

/// `onehot * (1 - alpha) + alpha / K`.
pub fn uniform_smooth(onehot: &[f64], alpha: f64) -> Result<SmoothedTarget> {
    check_one_hot(onehot)?;
    check_alpha(alpha)?;
    let y = to_array(onehot)?;
    let k = NUM_CLASSES as f64;
    Ok(SmoothedTarget {
        values: y.map(|v| v * (1.0 - alpha) + alpha / k),
        alpha,
        mode: SmoothingMode::Uniform,
    })
}

/// `onehot * (1 - alpha) + alpha * sc_row`.
pub fn sc_smooth(onehot: &[f64], alpha: f64, sc_row: &[f64]) -> Result<SmoothedTarget> {
    check_one_hot(onehot)?;
    check_alpha(alpha)?;
    check_stochastic(sc_row)?;
    let y = to_array(onehot)?;
    let sc = to_array(sc_row)?;
    let mut values = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        values[k] = y[k] * (1.0 - alpha) + alpha * sc[k];
    }
    Ok(SmoothedTarget {
        values,
        alpha,
        mode: SmoothingMode::SoftConsensus,
    })
}

/// `-sum_k target_k * ln(max(p_k, LOG_EPS))`.
pub fn cross_entropy(target: &[f64], probs: &[f64]) -> Result<f64> {
    if target.len() != probs.len() {
        return Err(SmoothingError::Shape {
            expected: target.len(),
            found: probs.len(),
        });
    }
    Ok(target
        .iter()
        .zip(probs)
        .map(|(&t, &p)| if t == 0.0 { 0.0 } else { -t * p.clamp(LOG_EPS, 1.0).ln() })
        .sum())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient of `cross_entropy(target, softmax(logits))` w.r.t. the logits.
pub fn cross_entropy_grad(target: &[f64], logits: &[f64]) -> Result<Vec<f64>> {
    if target.len() != logits.len() {
        return Err(SmoothingError::Shape {
            expected: target.len(),
            found: logits.len(),
        });
    }
    Ok(softmax(logits).into_iter().zip(target).map(|(p, &t)| p - t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: [f64; 5] = [1.0, 0.0, 0.0, 0.0, 0.0];

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn uniform_examples() {
        let t = uniform_smooth(&W, 0.5).unwrap();
        assert_close(&t.values, &[0.6, 0.1, 0.1, 0.1, 0.1], 1e-15);
        assert_eq!(uniform_smooth(&W, 0.0).unwrap().values, W);
        let n2 = [0.0, 0.0, 1.0, 0.0, 0.0];
        // 1 * 0.9 + 0.1 / 5 and 0.1 / 5
        assert_close(
            &uniform_smooth(&n2, 0.1).unwrap().values,
            &[0.02, 0.02, 0.92, 0.02, 0.02],
            1e-15,
        );
    }

    #[test]
    fn uniform_rejects_soft_input() {
        assert!(matches!(
            uniform_smooth(&[0.5, 0.5, 0.0, 0.0, 0.0], 0.1),
            Err(SmoothingError::NotOneHot(_))
        ));
        assert!(uniform_smooth(&W, 1.5).is_err());
    }

    #[test]
    fn sc_worked_example() {
        let t = sc_smooth(&W, 0.5, &[0.6, 0.2, 0.2, 0.0, 0.0]).unwrap();
        assert_close(&t.values, &[0.8, 0.1, 0.1, 0.0, 0.0], 1e-12);
        assert_eq!(t.mode, SmoothingMode::SoftConsensus);
    }

    #[test]
    fn sc_endpoints() {
        let sc = [0.6, 0.2, 0.2, 0.0, 0.0];
        assert_eq!(sc_smooth(&W, 1.0, &sc).unwrap().values, sc);
        assert_eq!(sc_smooth(&W, 0.0, &sc).unwrap().values, W);
        for alpha in [0.1, 0.37, 0.9, 1.0] {
            assert_eq!(sc_smooth(&W, alpha, &W).unwrap().values, W);
        }
        assert!(matches!(
            sc_smooth(&W, 0.5, &[0.5, 0.2, 0.0, 0.0, 0.0]),
            Err(SmoothingError::NotStochastic(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&W, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap() <= 1e-11);
        let l = cross_entropy(&W, &[0.5, 0.125, 0.125, 0.125, 0.125]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = cross_entropy(&[0.8, 0.1, 0.1, 0.0, 0.0], &[0.2; 5]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        // zero probability on the target class is clamped, not infinite
        let l = cross_entropy(&W, &[0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((l + LOG_EPS.ln()).abs() < 1e-9);
        assert!(cross_entropy(&W, &[1.0]).is_err());
    }

    #[test]
    fn grad_examples() {
        let g = cross_entropy_grad(&[0.2; 5], &[0.3; 5]).unwrap();
        assert_close(&g, &[0.0; 5], 1e-15);
        // logits whose softmax is [0.9, 0.025, ...]
        let logits = [0.9f64.ln(), 0.025f64.ln(), 0.025f64.ln(), 0.025f64.ln(), 0.025f64.ln()];
        let g = cross_entropy_grad(&W, &logits).unwrap();
        assert_close(&g, &[-0.1, 0.025, 0.025, 0.025, 0.025], 1e-12);
    }

    fn fd_grad(target: &[f64], logits: &[f64], h: f64) -> Vec<f64> {
        (0..logits.len())
            .map(|k| {
                let mut up = logits.to_vec();
                let mut dn = logits.to_vec();
                up[k] += h;
                dn[k] -= h;
                let fu = cross_entropy(target, &softmax(&up)).unwrap();
                let fd = cross_entropy(target, &softmax(&dn)).unwrap();
                (fu - fd) / (2.0 * h)
            })
            .collect()
    }

    fn stochastic(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, NUM_CLASSES).prop_map(stochastic)
    }

    #[test]
    fn grad_matches_finite_differences_on_1000_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let target = stochastic((0..NUM_CLASSES).map(|_| rng.random_range(0.0..1.0)).collect());
            let logits: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.random_range(-4.0..4.0)).collect();
            let analytic = cross_entropy_grad(&target, &logits).unwrap();
            let numeric = fd_grad(&target, &logits, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                assert!(rel < 1e-6, "analytic {a} numeric {n}");
            }
        }
    }

    proptest! {
        #[test]
        fn smoothed_targets_are_stochastic(class in 0usize..5, alpha in 0.0f64..=1.0, sc in prob_vec()) {
            let mut onehot = [0.0; 5];
            onehot[class] = 1.0;
            let u = uniform_smooth(&onehot, alpha).unwrap();
            let s = sc_smooth(&onehot, alpha, &sc).unwrap();
            prop_assert!((u.values.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!((s.values.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn gibbs_inequality(t in prob_vec(), p in prob_vec()) {
            let cross = cross_entropy(&t, &p).unwrap();
            let entropy = cross_entropy(&t, &t).unwrap();
            prop_assert!(cross >= entropy - 1e-12);
        }
    }
}
