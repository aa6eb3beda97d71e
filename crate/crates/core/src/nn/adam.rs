use crate::error::{Error, Result};
use crate::nn::mlp::{Dense, Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Mlp) -> Self {
        let zeros = MlpGrads::zeros_like(params).layers;
        Adam {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update in place. A non-finite gradient rejects the whole
    /// step and leaves both the parameters and the moments untouched.
    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != params.layers().len() {
            return Err(Error::shape(
                "gradient layer count",
                params.layers().len(),
                grads.layers.len(),
            ));
        }
        for (k, (g, p)) in grads.layers.iter().zip(params.layers()).enumerate() {
            if g.weight.dim() != p.weight.dim() {
                return Err(Error::shape(
                    format!("layer {k} weight gradient"),
                    p.weight.len(),
                    g.weight.len(),
                ));
            }
            if g.bias.len() != p.bias.len() {
                return Err(Error::shape(
                    format!("layer {k} bias gradient"),
                    p.bias.len(),
                    g.bias.len(),
                ));
            }
            if !g.weight.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} weight gradient")));
            }
            if !g.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} bias gradient")));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, g), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn constant_grads(mlp: &Mlp, g: f64) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(mlp);
        for l in &mut grads.layers {
            l.weight.fill(g);
            l.bias.fill(g);
        }
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut mlp = net();
        let before = mlp.clone();
        let mut adam = Adam::new(AdamConfig::default(), &mlp);
        let g = constant_grads(&mlp, 0.5);
        adam.step(&mut mlp, &g).unwrap();
        let m_after_one = adam.first[0].weight[[0, 0]];
        let mut mlp2 = before.clone();
        let mut adam2 = adam.clone();
        let g0 = constant_grads(&mlp2, 0.0);
        adam2.step(&mut mlp2, &g0).unwrap();
        assert_eq!(adam2.first[0].weight[[0, 0]], 0.9 * m_after_one);

        let mut fresh = before.clone();
        let mut adam3 = Adam::new(AdamConfig::default(), &fresh);
        adam3.step(&mut fresh, &g0).unwrap();
        assert_eq!(fresh, before);
        assert_eq!(adam3.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut mlp = net();
        let before = mlp.flat_params();
        let cfg = AdamConfig::with_lr(0.01);
        let mut adam = Adam::new(cfg, &mlp);
        let mut grads = MlpGrads::zeros_like(&mlp);
        for (i, l) in grads.layers.iter_mut().enumerate() {
            l.weight.fill(if i == 0 { 3.7 } else { -0.02 });
            l.bias.fill(1e-3);
        }
        adam.step(&mut mlp, &grads).unwrap();
        for ((a, b), g) in mlp.flat_params().iter().zip(&before).zip(grads.flat()) {
            // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((a - b - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut mlp = net();
        let before = mlp.flat_params();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &mlp);
        let grads = constant_grads(&mlp, 0.3);
        for _ in 0..50 {
            adam.step(&mut mlp, &grads).unwrap();
        }
        assert!(mlp.flat_params().iter().zip(&before).all(|(a, b)| a < b));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut mlp = net();
        let before = mlp.clone();
        let mut adam = Adam::new(AdamConfig::default(), &mlp);
        let mut grads = constant_grads(&mlp, 0.1);
        grads.layers[1].bias[0] = f64::NAN;
        let err = adam.step(&mut mlp, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 1 bias"));
        assert_eq!(mlp, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn step_is_deterministic() {
        let grads = constant_grads(&net(), -0.7);
        let run = || {
            let mut mlp = net();
            let mut adam = Adam::new(AdamConfig::default(), &mlp);
            for _ in 0..3 {
                adam.step(&mut mlp, &grads).unwrap();
            }
            mlp.to_checkpoint_bytes()
        };
        assert_eq!(run(), run());
    }
}
