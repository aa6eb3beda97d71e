use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::demo::{generate_dataset, ExpertConfig};
use crate::maze::{DynamicsParams, MazeLayout, MdpSpec, PhysicsConfig};
use crate::nn::{finite_difference_check, Dense};

fn member(id: &str, p: (f64, f64, f64)) -> MdpSpec {
    MdpSpec::new(
        id,
        Arc::new(MazeLayout::default_maze()),
        DynamicsParams::new(p.0, p.1, p.2).unwrap(),
        PhysicsConfig::default(),
    )
    .unwrap()
}

fn family_datasets(n: usize, params: &[(f64, f64, f64)], seed: u64) -> Vec<Dataset> {
    params
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            generate_dataset(&member(&format!("m{i}"), p), n, &ExpertConfig::default(), seed + i as u64)
                .unwrap()
        })
        .collect()
}

const SEPARATED: [(f64, f64, f64); 3] = [(0.2, 0.1, 0.1), (1.0, 0.5, 0.1), (3.0, 0.1, 0.5)];

fn zero_predictor(m: usize) -> PriorPredictor {
    let ids = (0..m).map(|i| format!("m{i}")).collect();
    let mut p = PriorPredictor::new(ids, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for l in p.net.layers_mut() {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }
    p
}

fn random_rows(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, TRANSITION_WIDTH), || rng.gen_range(-scale..scale))
}

#[test]
fn zero_network_predicts_uniform_weights() {
    let p = zero_predictor(3);
    let mdp = member("a", SEPARATED[0]);
    let s = mdp.observe(&mdp.reset(0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
    let w = p.predict_weights(&s, [0.3, -0.2], &s).unwrap();
    assert_eq!(w, vec![1.0 / 3.0; 3]);
    assert!(p.predict_batch(Array2::zeros((1, 7)).view()).is_err());
}

proptest! {
    #[test]
    fn outputs_stay_on_the_simplex(seed in 0u64..200, scale in prop_oneof![Just(1.0), Just(1e3), Just(1e6)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PriorPredictor::new(vec!["a".into(), "b".into(), "c".into()], 8, &mut rng).unwrap();
        p.net.scale_output_layer(50.0);
        let w = p.predict_batch(random_rows(4, scale, &mut rng).view()).unwrap();
        for r in w.rows() {
            prop_assert!((r.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn aggregation_ignores_trace_order(seed in 0u64..200, len in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PriorPredictor::new(vec!["a".into(), "b".into(), "c".into()], 8, &mut rng).unwrap();
        let rows = random_rows(len, 2.0, &mut rng);
        let mut order: Vec<usize> = (0..len).collect();
        order.reverse();
        order.rotate_left(seed as usize % len);
        let shuffled = rows.select(ndarray::Axis(0), &order);
        prop_assert_eq!(p.aggregate_weights(rows.view()).unwrap(), p.aggregate_weights(shuffled.view()).unwrap());
    }
}

#[test]
fn single_step_aggregate_equals_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = PriorPredictor::new(vec!["a".into(), "b".into(), "c".into()], 8, &mut rng).unwrap();
    let mdp = member("a", SEPARATED[1]);
    let s = mdp.reset(2, &mut rng).unwrap();
    let a = [0.7, -0.4];
    let next = mdp.step(&s, a).unwrap().state;
    let (o1, o2) = (mdp.observe(&s), mdp.observe(&next));
    let row = Array2::from_shape_vec((1, TRANSITION_WIDTH), transition_vector(&o1, a, &o2)).unwrap();
    assert_eq!(p.aggregate_weights(row.view()).unwrap(), p.predict_weights(&o1, a, &o2).unwrap());
    assert!(p.aggregate_weights(Array2::zeros((0, TRANSITION_WIDTH)).view()).is_err());
}

#[test]
fn aggregation_matches_hand_arithmetic() {
    let rows = ndarray::arr2(&[[0.5, 0.25, 0.25], [0.1, 0.6, 0.3], [0.0, 0.0, 1.0], [0.9, 0.05, 0.05]]);
    let w = mean_simplex(rows.view());
    let expected = [1.5 / 4.0, 0.9 / 4.0, 1.6 / 4.0];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    let same = ndarray::arr2(&[[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]]);
    for (a, b) in mean_simplex(same.view()).iter().zip([0.2, 0.3, 0.5]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = PriorPredictor::new(vec!["a".into(), "b".into(), "c".into()], 6, &mut rng).unwrap();
    p.input_mean = (0..TRANSITION_WIDTH).map(|_| rng.gen_range(-0.1..0.1)).collect();
    p.input_std = (0..TRANSITION_WIDTH).map(|_| rng.gen_range(0.5..2.0)).collect();
    let rows = random_rows(7, 1.0, &mut rng);
    let labels = [0, 1, 2, 2, 1, 0, 1];
    let (loss, g) = p.cross_entropy_grad(rows.view(), &labels).unwrap();
    assert!((loss - p.cross_entropy(rows.view(), &labels).unwrap()).abs() < 1e-12);
    let flat = g.flat();
    let mut probe = p.clone();
    let r = finite_difference_check(
        |theta| {
            probe.net.set_flat_params(theta)?;
            Ok((probe.cross_entropy(rows.view(), &labels)?, flat.clone()))
        },
        &p.net.flat_params(),
        1e-5,
        150,
        &mut rng,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert_eq!(r.probed, 150);
}

fn threshold_predictor() -> PriorPredictor {
    // logits (x0, -x0): sign of the first input decides the class
    let mut layer = Dense::zeros(TRANSITION_WIDTH, 2);
    layer.weight[[0, 0]] = 100.0;
    layer.weight[[0, 1]] = -100.0;
    PriorPredictor {
        net: Mlp::from_layers(vec![layer]).unwrap(),
        member_ids: vec!["a".into(), "b".into()],
        input_mean: vec![0.0; TRANSITION_WIDTH],
        input_std: vec![1.0; TRANSITION_WIDTH],
    }
}

#[test]
fn confusion_matrix_of_perfect_and_chance_classifiers() {
    let p = threshold_predictor();
    let mut a = Array2::zeros((120, TRANSITION_WIDTH));
    a.column_mut(0).fill(1.0);
    let mut b = Array2::zeros((150, TRANSITION_WIDTH));
    b.column_mut(0).fill(-1.0);
    let cm = confusion_matrix(&p, &[a.clone(), b]).unwrap();
    assert_eq!(cm, ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]));
    assert!(confusion_matrix(&p, &[a.clone(), a.slice(ndarray::s![..99, ..]).to_owned()]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut c = PriorPredictor::new(vec!["a".into(), "b".into(), "c".into()], 8, &mut rng).unwrap();
    c.net.scale_output_layer(20.0);
    let sets: Vec<Array2<f64>> = (0..3).map(|_| random_rows(3000, 3.0, &mut rng)).collect();
    let cm = confusion_matrix(&c, &sets).unwrap();
    for r in cm.rows() {
        assert!((r.sum() - 1.0).abs() <= 1e-12);
    }
    // every member's rows come from the same distribution
    for j in 0..3 {
        let col = cm.column(j);
        assert!(col.iter().all(|v| (v - col[0]).abs() < 0.05), "{cm:?}");
    }
}

#[test]
fn argmax_prefers_the_lowest_index() {
    assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.25]), 1);
    assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = PriorPredictor::new(vec!["x".into(), "y".into()], 4, &mut rng).unwrap();
    p.input_mean = (0..TRANSITION_WIDTH).map(|i| i as f64 * 0.01).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("omega.ckpt");
    p.save(&path).unwrap();
    assert_eq!(PriorPredictor::load(&path).unwrap(), p);
}

#[test]
fn invalid_training_inputs() {
    let ds = family_datasets(5, &SEPARATED[..1], 0);
    let refs: Vec<&Dataset> = ds.iter().collect();
    assert!(train_predictor(&refs, &PredictorConfig::default()).is_err());
    let mut empty = ds[0].clone();
    empty.trajectories.clear();
    assert!(train_predictor(&[&ds[0], &empty], &PredictorConfig::default()).is_err());
}

fn quick() -> PredictorConfig {
    PredictorConfig {
        hidden: 32,
        batch_size: 128,
        max_steps: 1200,
        eval_every: 200,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn separated_family_is_discriminated() {
    let ds = family_datasets(60, &SEPARATED, 10);
    let refs: Vec<&Dataset> = ds.iter().collect();
    let (omega, report) = train_predictor(&refs, &quick()).unwrap();
    assert!(report.heldout_accuracy >= 0.85, "{report:?}");
    for r in report.confusion.rows() {
        assert!((r.sum() - 1.0).abs() <= 1e-12);
    }
    assert_eq!(omega.member_ids, vec!["m0", "m1", "m2"]);
    let (again, _) = train_predictor(&refs, &quick()).unwrap();
    assert_eq!(again.to_bundle().to_bytes(), omega.to_bundle().to_bytes());

    // permuting the member order permutes the output coordinates
    let perm = [2usize, 0, 1];
    let permuted: Vec<&Dataset> = perm.iter().map(|&i| &ds[i]).collect();
    let (omega_p, _) = train_predictor(&permuted, &quick()).unwrap();
    let picks: Vec<LabeledTransition> = (0..3)
        .flat_map(|member| (0..40).map(move |k| LabeledTransition { member, trajectory: k % 5, step: 4 + k }))
        .collect();
    let rows = transition_rows(&refs, &picks).unwrap();
    let w = omega.predict_batch(rows.view()).unwrap();
    let wp = omega_p.predict_batch(rows.view()).unwrap();
    // the permuted predictor names member `perm[j]` in coordinate j
    let hits = |w: &ndarray::Array2<f64>, map: &dyn Fn(usize) -> usize| {
        w.rows()
            .into_iter()
            .zip(&picks)
            .filter(|(r, p)| map(argmax(r.as_slice().unwrap())) == p.member)
            .count() as f64
            / picks.len() as f64
    };
    let (a, b, c) = (hits(&w, &|j| j), hits(&wp, &|j| perm[j]), hits(&wp, &|j| j));
    assert!(a >= 0.6 && b >= 0.6, "{a} {b}");
    assert!(c <= 0.4, "{c}");
}

#[test]
fn duplicate_members_are_indistinguishable() {
    let ds = family_datasets(40, &SEPARATED[..1], 3);
    let (_, report) = train_predictor(&[&ds[0], &ds[0]], &quick()).unwrap();
    assert!((report.heldout_accuracy - 0.5).abs() < 0.1, "{}", report.heldout_accuracy);
    let _ = Array1::<f64>::zeros(1);
}

