use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian stored as mean and clamped log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

/// Gradient of a scalar with respect to a [`DiagGaussian`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianGrad {
    pub fn zeros(dim: usize) -> Self {
        GaussianGrad {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }
}

impl DiagGaussian {
    /// Builds a distribution, clamping `log_std` into
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::shape("gaussian log std", mean.len(), log_std.len()));
        }
        if mean.is_empty() {
            return Err(Error::InvalidArgument("gaussian of dimension zero".into()));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(DiagGaussian { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    /// Interprets a network head of width `2·dim`: means first, then raw
    /// log standard deviations.
    pub fn from_head(raw: &[f64]) -> Result<Self> {
        if !raw.len().is_multiple_of(2) || raw.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "gaussian head must have even positive width, got {}",
                raw.len()
            )));
        }
        let d = raw.len() / 2;
        DiagGaussian::new(raw[..d].to_vec(), raw[d..].to_vec())
    }

    /// Chain rule from distribution gradients back to the raw head. Log std
    /// entries that were clamped receive zero gradient.
    pub fn head_grad(raw: &[f64], grad: &GaussianGrad) -> Vec<f64> {
        let d = raw.len() / 2;
        let mut out = Vec::with_capacity(raw.len());
        out.extend_from_slice(&grad.mean);
        for (i, g) in grad.log_std.iter().enumerate() {
            let r = raw[d + i];
            let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&r);
            out.push(if inside { *g } else { 0.0 });
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    fn check_dim(&self, what: &str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::shape(what, self.dim(), len));
        }
        Ok(())
    }

    /// Reparameterised sample `μ + σ ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("gaussian noise", noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, l), e)| m + l.exp() * e)
            .collect())
    }

    /// Gradient of a scalar w.r.t. the distribution parameters, given its
    /// gradient w.r.t. a sample drawn with `noise`.
    pub fn sample_grad(&self, noise: &[f64], d_sample: &[f64]) -> GaussianGrad {
        GaussianGrad {
            mean: d_sample.to_vec(),
            log_std: self
                .log_std
                .iter()
                .zip(noise)
                .zip(d_sample)
                .map(|((l, e), g)| g * l.exp() * e)
                .collect(),
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim("gaussian point", x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, l), x)| {
                let u = (x - m) * (-l).exp();
                -0.5 * u * u - l - HALF_LOG_TWO_PI
            })
            .sum())
    }

    /// Log density together with its gradients w.r.t. the parameters and
    /// the point.
    pub fn log_prob_grad(&self, x: &[f64]) -> Result<(f64, GaussianGrad, Vec<f64>)> {
        let lp = self.log_prob(x)?;
        let d = self.dim();
        let mut grad = GaussianGrad::zeros(d);
        let mut dx = vec![0.0; d];
        for i in 0..d {
            let inv_var = (-2.0 * self.log_std[i]).exp();
            let diff = x[i] - self.mean[i];
            grad.mean[i] = diff * inv_var;
            grad.log_std[i] = diff * diff * inv_var - 1.0;
            dx[i] = -diff * inv_var;
        }
        Ok((lp, grad, dx))
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        other.check_dim("kl argument", self.dim())?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let u = 2.0 * (self.log_std[i] - other.log_std[i]);
            let diff = self.mean[i] - other.mean[i];
            let inv_var_q = (-2.0 * other.log_std[i]).exp();
            // exp(u) - 1 - u is the variance-ratio part and is >= 0
            let term = 0.5 * (u.exp_m1() - u).max(0.0) + 0.5 * diff * diff * inv_var_q;
            total += term;
        }
        Ok(total)
    }

    /// `KL(self ‖ other)` with gradients w.r.t. both arguments.
    pub fn kl_grad(&self, other: &DiagGaussian) -> Result<(f64, GaussianGrad, GaussianGrad)> {
        let kl = self.kl(other)?;
        let d = self.dim();
        let mut gp = GaussianGrad::zeros(d);
        let mut gq = GaussianGrad::zeros(d);
        for i in 0..d {
            let inv_var_q = (-2.0 * other.log_std[i]).exp();
            let ratio = (2.0 * (self.log_std[i] - other.log_std[i])).exp();
            let diff = self.mean[i] - other.mean[i];
            gp.mean[i] = diff * inv_var_q;
            gq.mean[i] = -diff * inv_var_q;
            gp.log_std[i] = ratio - 1.0;
            gq.log_std[i] = 1.0 - ratio - diff * diff * inv_var_q;
        }
        Ok((kl, gp, gq))
    }
}
