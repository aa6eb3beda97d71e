//! Weighted divergence to several skill priors under adaptive, hard-max and
//! uniform weights, and the policy that minimises it.
//!
//! cargo run --release --example divergence

use mprl::agent::multi_prior_divergence_grad;
use mprl::nn::DiagGaussian;
use mprl::predictor::mean_simplex;
use ndarray::array;

fn main() -> anyhow::Result<()> {
    let priors = vec![
        DiagGaussian::new(vec![-1.0, 0.5], vec![-0.5, 0.0])?,
        DiagGaussian::new(vec![0.5, 0.5], vec![0.0, -1.0])?,
        DiagGaussian::new(vec![2.0, -1.0], vec![0.3, 0.3])?,
    ];
    // per-transition predictor outputs along one executed skill
    let trace = array![[0.10, 0.70, 0.20], [0.05, 0.80, 0.15], [0.20, 0.55, 0.25]];
    let adaptive = mean_simplex(trace.view());
    let schemes = [
        ("adaptive", adaptive.clone()),
        ("hard-max", one_hot(&adaptive)),
        ("uniform", vec![1.0 / 3.0; 3]),
    ];

    for (name, w) in &schemes {
        let mut mean = vec![0.0; 2];
        let mut log_std = vec![0.0; 2];
        let start = multi_prior_divergence_grad(&DiagGaussian::new(mean.clone(), log_std.clone())?, &priors, w)?.0;
        let mut d = start;
        for _ in 0..2000 {
            let pi = DiagGaussian::new(mean.clone(), log_std.clone())?;
            let (value, g) = multi_prior_divergence_grad(&pi, &priors, w)?;
            d = value;
            for j in 0..2 {
                mean[j] -= 0.05 * g.mean[j];
                log_std[j] -= 0.05 * g.log_std[j];
            }
        }
        let (m_star, s_star) = closed_form(&priors, w);
        println!(
            "{name:>8} w=[{:.3}, {:.3}, {:.3}]  D: {start:.3} -> {d:.3}  mean ({:.3}, {:.3}) vs ({:.3}, {:.3})  std ({:.3}, {:.3}) vs ({:.3}, {:.3})",
            w[0], w[1], w[2],
            mean[0], mean[1], m_star[0], m_star[1],
            log_std[0].exp(), log_std[1].exp(), s_star[0], s_star[1],
        );
    }
    Ok(())
}

fn one_hot(w: &[f64]) -> Vec<f64> {
    let i = mprl::predictor::argmax(w);
    (0..w.len()).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

/// Minimiser of Σ wᵢ KL(π ‖ pᵢ): precisions add, means are precision-weighted.
fn closed_form(priors: &[DiagGaussian], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = priors[0].dim();
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for j in 0..dim {
        let (mut prec, mut num) = (0.0, 0.0);
        for (p, &wi) in priors.iter().zip(w) {
            let v = p.std()[j].powi(2);
            prec += wi / v;
            num += wi * p.mean()[j] / v;
        }
        mean[j] = num / prec;
        std[j] = prec.powf(-0.5);
    }
    (mean, std)
}
