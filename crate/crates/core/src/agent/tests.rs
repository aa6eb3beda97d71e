use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::demo::{generate_dataset, ExpertConfig};
use crate::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use crate::nn::finite_difference_check;
use crate::predictor::PriorPredictor;
use crate::skill::{SkillConfig, SkillModel};

fn target() -> MdpSpec {
    MdpSpec::new(
        "target",
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(2.0, 0.3, 0.3).unwrap(),
        PhysicsConfig::default(),
    )
    .unwrap()
}

fn skill_config() -> SkillConfig {
    SkillConfig {
        latent_dim: 3,
        horizon: 4,
        hidden: 8,
        ..Default::default()
    }
}

/// A reference model plus `m` priors sharing its decoder.
fn models(m: usize, seed: u64) -> (SkillModel, Vec<SkillModel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = target().feature_scale();
    let reference = SkillModel::new(&skill_config(), scale, "src-0", &mut rng).unwrap();
    let priors = (0..m)
        .map(|i| {
            let mut p = SkillModel::new(&skill_config(), scale, &format!("src-{i}"), &mut rng).unwrap();
            p.decoder = reference.decoder.clone();
            p.decoder_id = reference.decoder_id.clone();
            p
        })
        .collect();
    (reference, priors)
}

fn predictor(m: usize) -> PriorPredictor {
    let ids = (0..m).map(|i| format!("src-{i}")).collect();
    PriorPredictor::new(ids, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
}

fn small_config(seed: u64) -> AgentConfig {
    AgentConfig {
        buffer_capacity: 500,
        batch_size: 16,
        warmup_steps: 100,
        budget_steps: 500,
        hidden: 8,
        eval_episodes: 2,
        seed,
        ..Default::default()
    }
}

fn random_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> DiagGaussian {
    DiagGaussian::new(
        (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        (0..dim).map(|_| rng.gen_range(-1.5..1.0)).collect(),
    )
    .unwrap()
}

fn random_simplex(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn random_batch(n: usize, z: usize, m: usize, rng: &mut ChaCha8Rng) -> UpdateBatch {
    let feat = |rng: &mut ChaCha8Rng| Array2::from_shape_simple_fn((n, OBS_WIDTH), || rng.gen_range(-1.0..1.0));
    UpdateBatch {
        states: feat(rng),
        next_states: feat(rng),
        z: Array2::from_shape_simple_fn((n, z), || rng.gen_range(-1.0..1.0)),
        rewards: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        discounts: (0..n).map(|i| if i == 0 { 0.0 } else { 0.99f64.powi(4) }).collect(),
        weights: (0..n).map(|_| random_simplex(m, rng)).collect(),
        priors: (0..n).map(|_| (0..m).map(|_| random_gaussian(z, rng)).collect()).collect(),
        next_priors: (0..n).map(|_| (0..m).map(|_| random_gaussian(z, rng)).collect()).collect(),
    }
}

#[test]
fn single_prior_divergence_is_plain_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pi = random_gaussian(4, &mut rng);
    let p = random_gaussian(4, &mut rng);
    let q = random_gaussian(4, &mut rng);
    assert_eq!(multi_prior_divergence(&pi, std::slice::from_ref(&p), &[1.0]).unwrap(), pi.kl(&p).unwrap());
    let mixed = multi_prior_divergence(&pi, &[p.clone(), q.clone()], &[0.25, 0.75]).unwrap();
    let expected = 0.25 * pi.kl(&p).unwrap() + 0.75 * pi.kl(&q).unwrap();
    assert!((mixed - expected).abs() < 1e-12);
    assert!(multi_prior_divergence(&pi, &[p.clone(), q.clone()], &[0.5, 0.6]).is_err());
    assert!(multi_prior_divergence(&pi, &[p.clone(), q], &[1.5, -0.5]).is_err());
    assert!(multi_prior_divergence(&pi, &[p], &[0.5, 0.5]).is_err());
}

proptest! {
    #[test]
    fn weighted_divergence_gradient_matches_differences(seed in 0u64..100, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = random_gaussian(3, &mut rng);
        let priors: Vec<DiagGaussian> = (0..m).map(|_| random_gaussian(3, &mut rng)).collect();
        let w = random_simplex(m, &mut rng);
        let (d, g) = multi_prior_divergence_grad(&pi, &priors, &w).unwrap();
        prop_assert!(d >= 0.0);
        let eps = 1e-6;
        for j in 0..3 {
            let mut mean = pi.mean().to_vec();
            mean[j] += eps;
            let up = DiagGaussian::new(mean.clone(), pi.log_std().to_vec()).unwrap();
            mean[j] -= 2.0 * eps;
            let down = DiagGaussian::new(mean, pi.log_std().to_vec()).unwrap();
            let num = (multi_prior_divergence(&up, &priors, &w).unwrap()
                - multi_prior_divergence(&down, &priors, &w).unwrap()) / (2.0 * eps);
            prop_assert!((num - g.mean[j]).abs() <= 1e-6 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn temperature_moves_towards_the_constraint(alpha in 1e-4f64..100.0, d in 0.0f64..5.0) {
        let cfg = AgentConfig::default();
        let next = alpha_update(alpha, d, &cfg);
        prop_assert!((cfg.alpha_min..=cfg.alpha_max).contains(&next));
        if d < cfg.target_divergence {
            prop_assert!(next <= alpha);
        } else {
            prop_assert!(next >= alpha);
        }
    }
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let nets = AgentNets::new(3, 6, 0.3, &mut rng).unwrap();
    let batch = random_batch(5, 3, 2, &mut rng);
    let noise = noise_matrix(5, 3, &mut rng);
    let targets = critic_targets(&nets.policy, &nets.target_critic, 0.3, &batch, noise.view()).unwrap();
    assert_eq!(targets[0], batch.rewards[0]);
    let (_, g) = critic_loss_grad(&nets.critic, &batch, &targets).unwrap();
    let mut probe = nets.critic.clone();
    let r = finite_difference_check(
        |p| {
            probe.set_flat_params(p)?;
            let (l, g) = critic_loss_grad(&probe, &batch, &targets)?;
            Ok((l, g.flat()))
        },
        &nets.critic.flat_params(),
        1e-5,
        150,
        &mut rng,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert_eq!(g.flat().len(), nets.critic.param_count());
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut nets = AgentNets::new(3, 6, 0.7, &mut rng).unwrap();
    nets.policy.scale_output_layer(5.0);
    let batch = random_batch(5, 3, 3, &mut rng);
    let noise = noise_matrix(5, 3, &mut rng);
    let mut probe = nets.policy.clone();
    let r = finite_difference_check(
        |p| {
            probe.set_flat_params(p)?;
            let (l, g) = actor_loss_grad(&probe, &nets.critic, 0.7, &batch, noise.view())?;
            Ok((l.loss, g.flat()))
        },
        &nets.policy.flat_params(),
        1e-5,
        150,
        &mut rng,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn bc_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nets = AgentNets::new(3, 6, 0.1, &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((6, OBS_WIDTH), || rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_simple_fn((6, 3), || rng.gen_range(-1.0..1.0));
    let mut probe = nets.policy.clone();
    let r = finite_difference_check(
        |p| {
            probe.set_flat_params(p)?;
            let (l, g) = bc_loss_grad(&probe, x.view(), y.view())?;
            Ok((l, g.flat()))
        },
        &nets.policy.flat_params(),
        1e-5,
        150,
        &mut rng,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn update_moves_target_by_polyak_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nets = AgentNets::new(3, 6, 0.1, &mut rng).unwrap();
    let cfg = AgentConfig::default();
    let mut opt = AgentOptimizers::new(&nets, &cfg);
    let batch = random_batch(8, 3, 2, &mut rng);
    let before = nets.target_critic.flat_params();
    let n1 = noise_matrix(8, 3, &mut rng);
    let n2 = noise_matrix(8, 3, &mut rng);
    let stats = nets.update(&batch, n1.view(), n2.view(), &mut opt, &cfg).unwrap();
    let online = nets.critic.flat_params();
    for ((t, b), o) in nets.target_critic.flat_params().iter().zip(&before).zip(&online) {
        assert!((t - ((1.0 - cfg.tau) * b + cfg.tau * o)).abs() < 1e-12);
    }
    assert_eq!(stats.alpha, nets.alpha);
    assert_eq!(nets.alpha, alpha_update(0.1, stats.divergence, &cfg));
}

#[test]
fn skill_execution_respects_horizon_and_discounting() {
    let (reference, _) = models(1, 0);
    let mdp = target();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = mdp.reset(3, &mut rng).unwrap();
    let out = execute_skill(&mdp, &reference, &s, &[0.3, -0.1, 0.2], 0.9).unwrap();
    assert_eq!(out.len(), 4);
    assert_eq!(out.states.len(), 5);
    assert_eq!(out.states[0], s.kinematics());
    assert_eq!(out.next_state.steps, 4);
    assert_eq!(out.reward, 0.0);
    assert!(!out.done && !out.reached_goal);
    assert!(out.actions.iter().all(|a| a.iter().all(|v| v.abs() <= 1.0)));
    assert!(execute_skill(&mdp, &reference, &s, &[0.0; 2], 0.9).is_err());
}

#[test]
fn training_is_deterministic_and_logs_simplex_weights() {
    let (reference, priors) = models(3, 1);
    let omega = predictor(3);
    let set = PriorSet {
        decoder: &reference,
        priors: &priors,
        omega: Some(&omega),
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = |name: &str| RunOptions {
        debug_weights: Some(dir.path().join(name)),
        ..Default::default()
    };
    let a = train_mpr_rl(&target(), set, WeightingMode::Adaptive, &small_config(7), &opts("a.csv")).unwrap();
    let b = train_mpr_rl(&target(), set, WeightingMode::Adaptive, &small_config(7), &opts("b.csv")).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.updates, b.updates);
    assert_eq!(a.nets, b.nets);
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );
    assert!(a.env_steps >= 500 && a.env_steps < 500 + 4);
    assert!(!a.updates.is_empty());
    let audit = audit_weight_log(&dir.path().join("a.csv")).unwrap();
    assert_eq!(audit.rows, a.updates.len() * 16);
    assert!(audit.max_sum_error < 1e-9, "{audit:?}");
    assert!(audit.min_entry >= 0.0);
    assert!(a.metrics.iter().all(|m| m.weight_entropy > 0.0));

    let path = dir.path().join("metrics.csv");
    a.write_metrics_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(text.lines().count(), a.metrics.len() + 1);
}

#[test]
fn hard_max_logs_only_vertices() {
    let (reference, priors) = models(3, 2);
    let omega = predictor(3);
    let set = PriorSet {
        decoder: &reference,
        priors: &priors,
        omega: Some(&omega),
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        debug_weights: Some(dir.path().join("w.csv")),
        ..Default::default()
    };
    let r = train_mpr_rl(&target(), set, WeightingMode::HardMax, &small_config(3), &opts).unwrap();
    let audit = audit_weight_log(&dir.path().join("w.csv")).unwrap();
    assert_eq!(audit.vertex_rows, audit.rows);
    assert!(r.metrics.iter().all(|m| m.weight_entropy == 0.0));
}

#[test]
fn adaptive_with_one_prior_reduces_to_single_prior() {
    let (reference, priors) = models(1, 3);
    let set = PriorSet {
        decoder: &reference,
        priors: &priors,
        omega: None,
    };
    let cfg = small_config(11);
    let a = train_mpr_rl(&target(), set, WeightingMode::Adaptive, &cfg, &RunOptions::default()).unwrap();
    let s = train_mpr_rl(
        &target(),
        set,
        WeightingMode::SinglePrior { prior: 0 },
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(a.updates, s.updates);
    assert_eq!(a.nets, s.nets);
}

#[test]
fn mismatched_inputs_are_config_errors() {
    let (reference, mut priors) = models(2, 4);
    let omega = predictor(3);
    let cfg = small_config(0);
    let run = |priors: &[SkillModel], omega: Option<&PriorPredictor>, mode| {
        let set = PriorSet {
            decoder: &reference,
            priors,
            omega,
        };
        train_mpr_rl(&target(), set, mode, &cfg, &RunOptions::default())
    };
    assert!(matches!(run(&priors, Some(&omega), WeightingMode::Adaptive), Err(Error::Config(_))));
    assert!(matches!(run(&priors, None, WeightingMode::HardMax), Err(Error::Config(_))));
    assert!(matches!(run(&[], None, WeightingMode::Uniform), Err(Error::Config(_))));
    assert!(matches!(
        run(&priors, None, WeightingMode::SinglePrior { prior: 2 }),
        Err(Error::Config(_))
    ));
    priors[1].decoder_id = "elsewhere".into();
    assert!(matches!(run(&priors, None, WeightingMode::Uniform), Err(Error::Config(_))));
    assert!(run(&[], None, WeightingMode::StandardNormal).is_ok());
}

#[test]
fn agent_checkpoint_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut nets = AgentNets::new(3, 6, 0.1, &mut rng).unwrap();
    nets.alpha = 0.123_456_789_012_345_6;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.ckpt");
    nets.save(WeightingMode::SinglePrior { prior: 2 }, &path).unwrap();
    let (back, mode) = AgentNets::load(&path).unwrap();
    assert_eq!(back, nets);
    assert_eq!(mode, WeightingMode::SinglePrior { prior: 2 });
}

#[test]
fn mode_names_parse_back() {
    for m in [
        WeightingMode::Adaptive,
        WeightingMode::HardMax,
        WeightingMode::Uniform,
        WeightingMode::SinglePrior { prior: 1 },
        WeightingMode::StandardNormal,
        WeightingMode::BcInit,
    ] {
        assert_eq!(m.name().parse::<WeightingMode>().unwrap(), m);
    }
    assert!("softmax".parse::<WeightingMode>().is_err());
}

#[test]
fn behaviour_cloning_reduces_validation_nll() {
    let (reference, _) = models(1, 5);
    let ds = generate_dataset(&target(), 12, &ExpertConfig::default(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nets = AgentNets::new(3, 8, 0.1, &mut rng).unwrap();
    let cfg = BcConfig {
        max_steps: 300,
        eval_every: 50,
        batch_size: 32,
        ..Default::default()
    };
    let (policy, report) = behavior_clone(&ds, &reference, nets.policy.clone(), &cfg).unwrap();
    assert!(report.best_validation_nll < report.log[0].1 || report.best_step == report.log[0].0);
    assert!(report.best_validation_nll.is_finite());
    assert_ne!(policy, nets.policy);

    let set = PriorSet {
        decoder: &reference,
        priors: &[],
        omega: None,
    };
    let opts = RunOptions {
        init_policy: Some(policy),
        ..Default::default()
    };
    let r = train_mpr_rl(&target(), set, WeightingMode::BcInit, &small_config(1), &opts).unwrap();
    assert!(r.metrics.iter().all(|m| m.weight_entropy == 0.0));
    let bad = RunOptions {
        init_policy: Some(Mlp::new(&[OBS_WIDTH, 4, 2], &mut rng).unwrap()),
        ..Default::default()
    };
    assert!(train_mpr_rl(&target(), set, WeightingMode::BcInit, &small_config(1), &bad).is_err());
}
