use super::*;
use crate::envs::{rollout, GridNavConfig, LaneWorldConfig};
use crate::feedback::{IntentSpec, Mode, ScoredSet};
use crate::seed::rng_from_seed;
use proptest::prelude::*;
use rand::Rng as _;

fn grid() -> EnvConfig {
    EnvConfig::GridNav(GridNavConfig::default())
}

fn random_walk(env: &EnvConfig, seed: u64, len: usize) -> Trajectory {
    let mut rng = rng_from_seed(seed);
    let n = env.action_count();
    let mut t = rollout(env, seed, |_, _| Ok(rng.gen_range(0..n))).unwrap();
    t.steps.truncate(len);
    t
}

fn scored(trajectory: Trajectory, score: i64) -> ScoredTrajectory {
    ScoredTrajectory { trajectory, score }
}

/// Straight-line restatement of the three losses.
fn oracle_losses(q: &[f64], beta: &[f64], l: f64, delta: usize) -> [f64; 4] {
    let h = q.len() - 1;
    let lm = (l - q[h]) * (l - q[h]);
    let mut lc = 0.0;
    for t in 0..=h {
        lc += (l - q[t]) * (l - q[t]);
    }
    lc /= (h + 1) as f64;
    let mut le = 0.0;
    if h >= delta {
        for t in 0..=(h - delta) {
            le += (q[t + delta] - beta[t]) * (q[t + delta] - beta[t]);
        }
        le /= (h - delta + 1) as f64;
    }
    [lm, lc, le, lm + 0.1 * (lc + le)]
}

#[test]
fn grid_encoding_is_two_hot() {
    let enc = InputEncoding::for_env(&grid());
    let v = enc.encode_step(&Observation::Cell(0), 2).unwrap();
    assert_eq!(v.len(), 104);
    assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 2);
    assert_eq!((v[0], v[102]), (1.0, 1.0));
    assert_eq!(v, enc.encode_step(&Observation::Cell(0), 2).unwrap());
    assert!(matches!(enc.encode_step(&Observation::Cell(0), 4), Err(Error::Argument(_))));
    assert!(enc.encode_step(&Observation::Cell(100), 0).is_err());
}

#[test]
fn lane_encoding_appends_action() {
    let env = EnvConfig::LaneWorld(LaneWorldConfig::default());
    let enc = InputEncoding::for_env(&env);
    let (_, obs) = env.reset(1).unwrap();
    let v = enc.encode_step(&obs, 4).unwrap();
    assert_eq!(v.len(), 6 + 5);
    assert_eq!(&v[..6], obs.features().unwrap());
    assert_eq!(&v[6..], &[0.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn zero_model_outputs_its_bias() {
    let mut m = IntentModel::zeros(InputEncoding::for_env(&grid()), 8, 3);
    m.lstm.params.b_q = 0.7;
    m.lstm.params.b_beta = -0.2;
    let out = m.forward(&random_walk(&grid(), 1, 20)).unwrap();
    assert!(out.q_tilde.iter().all(|&q| q == 0.7));
    assert!(out.beta.iter().all(|&b| b == -0.2));
    let one = m.forward(&random_walk(&grid(), 1, 1)).unwrap();
    assert_eq!((one.q_tilde.len(), one.beta.len()), (1, 1));
    assert!(matches!(m.forward(&random_walk(&grid(), 1, 0)), Err(Error::Argument(_))));
}

#[test]
fn cell_state_accumulates_with_open_gates() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 6, 3, &mut rng_from_seed(4));
    let x = m.encoding.encode_sparse(&Observation::Cell(5), 1).unwrap();
    let s0 = m.lstm.initial_state();
    let (s1, _, _) = m.lstm.step(&s0, &x);
    let (s2, _, _) = m.lstm.step(&s1, &x);
    for j in 0..6 {
        assert_eq!(s2.h[j], s2.c[j].tanh());
        // Forget gate is 1: the previous cell state carries over unscaled.
        let p = &m.lstm.params;
        let az: f64 = p.w_z[5 * 6 + j] + p.w_z[101 * 6 + j] + p.b_z[j] + (0..6).map(|k| s1.h[k] * p.r_z[k * 6 + j]).sum::<f64>();
        let ai: f64 = p.w_i[5 * 6 + j] + p.w_i[101 * 6 + j] + p.b_i[j] + (0..6).map(|k| s1.h[k] * p.r_i[k * 6 + j]).sum::<f64>();
        let expect = s1.c[j] + crate::math::sigmoid(ai) * az.tanh();
        assert!((s2.c[j] - expect).abs() < 1e-14);
    }
}

#[test]
fn loss_examples() {
    let l = loss_terms(&[1.5, 1.5, 1.5, 1.5, 1.5], &[1.5; 5], 1.5, 3);
    assert_eq!((l.l_m, l.l_c, l.l_e, l.total), (0.0, 0.0, 0.0, 0.0));
    let l = loss_terms(&[0.0, 0.0], &[0.0, 0.0], 2.0, 3);
    assert_eq!((l.l_m, l.l_c, l.l_e), (4.0, 4.0, 0.0));
    assert!((l.total - 4.4).abs() < 1e-15);
}

#[test]
fn redistribution_examples() {
    let r = redistribute(&[0.1, 0.4, 0.9]);
    for (a, b) in r.iter().zip([0.1, 0.3, 0.5]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(redistribute(&[2.5, 2.5, 2.5]), vec![2.5, 0.0, 0.0]);
}

#[test]
fn per_action_q_matches_forward() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 16, 3, &mut rng_from_seed(2));
    let traj = random_walk(&grid(), 9, 7);
    let history: Vec<(Observation, usize)> = traj.steps[..6].iter().map(|s| (s.obs.clone(), s.action)).collect();
    let obs = traj.steps[6].obs.clone();
    let q = m.per_action_q(&history, &obs).unwrap();
    for (a, qa) in q.iter().enumerate() {
        let mut t = traj.clone();
        t.steps[6].action = a;
        let full = m.forward(&t).unwrap().q_tilde;
        assert_eq!(*qa, full[6]);
    }
}

#[test]
fn zero_model_is_indifferent_between_actions() {
    let m = IntentModel::zeros(InputEncoding::for_env(&grid()), 8, 3);
    let q = m.per_action_q(&[(Observation::Cell(3), 1)], &Observation::Cell(4)).unwrap();
    assert!(q.iter().all(|&v| v == q[0]));
}

#[test]
fn gradient_check_on_full_size_model() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 64, 3, &mut rng_from_seed(11));
    let item = scored(random_walk(&grid(), 3, 5), 2);
    assert!(gradient_check(&m, &item, 1e-5).unwrap() < 1e-4);
}

#[test]
fn gradient_check_degenerate_length_one() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 8, 3, &mut rng_from_seed(1));
    let item = scored(random_walk(&grid(), 5, 1), -1);
    assert!(gradient_check(&m, &item, 1e-5).unwrap() < 1e-4);
}

#[test]
fn gradient_check_flags_corrupted_gradient() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 8, 3, &mut rng_from_seed(1));
    let item = scored(random_walk(&grid(), 5, 4), 3);
    let mut g = analytic_gradient(&m, &item).unwrap();
    g.r_i[3] += 0.05;
    assert!(gradient_check_against(&m, &item, 1e-5, &g).unwrap() > 1e-2);
}

fn tiny_corpus() -> ScoredSet {
    let env = grid();
    let oracle = IntentSpec::from_env(&env, Mode::Mixed).unwrap().bind(&env).unwrap();
    let trajs: Vec<Trajectory> = (0..40).map(|s| random_walk(&env, s, 20)).collect();
    let mut set = oracle.label(&trajs).unwrap();
    // Random walks rarely touch the flagged cells; make the labels vary.
    for (k, item) in set.items.iter_mut().enumerate() {
        item.score += (k % 3) as i64;
    }
    set
}

#[test]
fn training_rejects_constant_labels() {
    let mut set = tiny_corpus();
    set.items.iter_mut().for_each(|s| s.score = 0);
    let enc = InputEncoding::for_env(&grid());
    assert!(matches!(train_intent(&set, enc, &IntentTrainConfig::default(), 0), Err(Error::Data(_))));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let set = tiny_corpus();
    let enc = InputEncoding::for_env(&grid());
    let cfg = IntentTrainConfig { max_epochs: 15, hidden: 16, learning_rate: 3e-3, ..Default::default() };
    let (a, curve) = train_intent(&set, enc, &cfg, 7).unwrap();
    let (b, _) = train_intent(&set, enc, &cfg, 7).unwrap();
    assert_eq!(a, b);
    assert!(curve.last().unwrap().total < curve.0[0].total);
    let mut csv = Vec::new();
    curve.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,L_m,L_c,L_e,L_total\n"));
    assert_eq!(text.lines().count(), curve.0.len() + 1);
}

#[test]
fn model_json_roundtrip_and_shape_check() {
    let m = IntentModel::random(InputEncoding::for_env(&grid()), 4, 3, &mut rng_from_seed(0));
    let text = m.to_json().unwrap();
    assert_eq!(IntentModel::from_json(&text).unwrap(), m);
    let mut broken = m.clone();
    broken.lstm.params.w_q.pop();
    assert!(matches!(IntentModel::from_json(&broken.to_json().unwrap()), Err(Error::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_match_oracle_and_are_nonnegative(
        seed in any::<u64>(),
        len in 1usize..12,
        label in -6i64..6,
        delta in 1usize..5,
    ) {
        let mut m = IntentModel::random(InputEncoding::for_env(&grid()), 8, delta, &mut rng_from_seed(seed));
        m.lookahead = delta;
        let item = scored(random_walk(&grid(), seed, len), label);
        let got = m.loss(&item).unwrap();
        let out = m.forward(&item.trajectory).unwrap();
        let want = oracle_losses(&out.q_tilde, &out.beta, label as f64, delta);
        for (g, w) in [got.l_m, got.l_c, got.l_e, got.total].iter().zip(want) {
            prop_assert!(*g >= 0.0);
            prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn redistribution_telescopes(seed in any::<u64>(), len in 1usize..20) {
        let m = IntentModel::random(InputEncoding::for_env(&grid()), 8, 3, &mut rng_from_seed(seed));
        let traj = random_walk(&grid(), seed ^ 1, len);
        let r = m.redistribute(&traj).unwrap();
        let q = m.forward(&traj).unwrap().q_tilde;
        prop_assert!((r.iter().sum::<f64>() - q[q.len() - 1]).abs() < 1e-9);
    }

    #[test]
    fn small_gradient_checks_pass(seed in any::<u64>(), len in 1usize..6, hidden in 2usize..10) {
        let env = EnvConfig::LaneWorld(LaneWorldConfig::default());
        let m = IntentModel::random(InputEncoding::for_env(&env), hidden, 3, &mut rng_from_seed(seed));
        let item = scored(random_walk(&env, seed, len), (seed % 7) as i64 - 3);
        prop_assert!(gradient_check(&m, &item, 1e-5).unwrap() < 1e-4);
    }
}
