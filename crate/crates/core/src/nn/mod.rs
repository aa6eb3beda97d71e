//! Small differentiable layer: dense tanh networks with hand-written
//! backpropagation, Adam, diagonal Gaussians and a finite-difference
//! gradient checker.

mod adam;
mod gaussian;
mod gradcheck;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{DiagGaussian, GaussianGrad, LOG_STD_MAX, LOG_STD_MIN};
pub use gradcheck::{finite_difference_check, GradCheck};
pub use mlp::{Dense, ForwardPass, InputGrad, Mlp, MlpGrads};

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        // e^-1000 underflows to zero in f64
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert!(softmax(&[]).is_err());
    }

    proptest! {
        #[test]
        fn simplex_and_shift_invariance(
            logits in prop::collection::vec(-50.0f64..50.0, 1..8),
            shift in -64i32..64,
        ) {
            let p = softmax(&logits).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            // dyadic shifts of dyadic logits are exact, so max-subtraction
            // returns the same centred logits bit for bit
            let dyadic: Vec<f64> = logits.iter().map(|l| (l * 256.0).round() / 256.0).collect();
            let shifted: Vec<f64> = dyadic.iter().map(|l| l + shift as f64).collect();
            prop_assert_eq!(softmax(&dyadic).unwrap(), softmax(&shifted).unwrap());
        }
    }
}
