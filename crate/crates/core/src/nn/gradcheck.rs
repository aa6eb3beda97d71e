use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Outcome of a central-difference gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub probed: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compare the analytic gradient returned by `loss_and_grad` with central
/// differences on a random subset of `probes` parameters.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6·max(1, |loss|))`; the
/// floor keeps round-off on vanishing gradients from dominating.
pub fn finite_difference_check<F, R>(
    mut loss_and_grad: F,
    params: &[f64],
    eps: f64,
    probes: usize,
    rng: &mut R,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    let (loss, analytic) = loss_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape("analytic gradient", params.len(), analytic.len()));
    }
    let floor = 1e-6 * loss.abs().max(1.0);
    let indices = sample(rng, params.len(), probes.min(params.len()));
    let mut report = GradCheck {
        max_rel_error: 0.0,
        probed: 0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut point = params.to_vec();
    for i in indices.iter() {
        point[i] = params[i] + eps;
        let (plus, _) = loss_and_grad(&point)?;
        point[i] = params[i] - eps;
        let (minus, _) = loss_and_grad(&point)?;
        point[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.probed += 1;
        if rel > report.max_rel_error || report.probed == 1 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss_is_exact_to_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let report = finite_difference_check(
            |p| Ok((0.5 * p.iter().map(|v| v * v).sum::<f64>(), p.to_vec())),
            &theta,
            1e-5,
            150,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.probed, 150);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta = vec![1.0, 2.0, 3.0];
        let report = finite_difference_check(
            |p| Ok((p.iter().map(|v| v * v).sum::<f64>(), p.to_vec())),
            &theta,
            1e-5,
            3,
            &mut rng,
        )
        .unwrap();
        assert!((report.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = finite_difference_check(
            |p| Ok((f64::NAN, p.to_vec())),
            &[1.0],
            1e-5,
            1,
            &mut rng,
        );
        assert!(err.is_err());
    }
}
