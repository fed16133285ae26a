use crate::error::{ensure, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class distribution and predicted class; ties resolve to the lower index.
pub fn softmax_predict(logits: &[f64]) -> (Vec<f64>, usize) {
    let probs = softmax(logits);
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    (probs, best)
}

/// Cross-entropy of `logits` against class `target`, with its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    ensure!(
        target < logits.len(),
        InvalidInput,
        "target class {target} out of range for {} logits",
        logits.len()
    );
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax(&[0.0; 5]);
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert_eq!(softmax_predict(&[0.0; 5]).1, 0);
    }

    #[test]
    fn known_values() {
        let e: [f64; 3] = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let s: f64 = e.iter().sum();
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (got, want) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-5);
        }
        for (got, ei) in p.iter().zip(e) {
            assert!((got - ei / s).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn uniform_cross_entropy_is_log_classes() {
        for c in 2..9 {
            let (loss, _) = cross_entropy(&vec![0.0; c], c - 1).unwrap();
            assert_eq!(loss, (c as f64).ln());
        }
        assert!(cross_entropy(&[0.0; 3], 3).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.3, -1.1, 2.0, 0.4];
        let (_, g) = cross_entropy(&logits, 2).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = logits;
            a[i] += h;
            let mut b = logits;
            b[i] -= h;
            let num = (cross_entropy(&a, 2).unwrap().0 - cross_entropy(&b, 2).unwrap().0) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn sums_to_one_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..12),
            k in -50.0f64..50.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = logits.iter().map(|v| v + k).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
