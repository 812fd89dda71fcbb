use odectrl::envs::{rollout_true, EnvSpec};
use odectrl::math::{Matrix, Tape};
use odectrl::ode::{field_fn, integrate, SolverConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn all() -> [EnvSpec; 3] {
    [EnvSpec::pendulum(), EnvSpec::cartpole(), EnvSpec::acrobot()]
}

/// Integrates the physical state together with the accumulated work of the
/// action, so `E(x(T)) - E(x(0))` can be checked against the work done.
fn energy_and_work(env: &EnvSpec, x0: &[f64], action: &[f64], t_end: f64) -> (f64, f64) {
    let n = env.phys_dim;
    let aug = field_fn(n + 1, |_, s, ds| {
        env.derivative(&s[..n], action, &mut ds[..n]);
        ds[n] = env.action_power(&s[..n], action);
    });
    let mut s0 = x0.to_vec();
    s0.push(0.0);
    let traj = integrate(&aug, &s0, &[0.0, t_end], &SolverConfig::reference()).unwrap();
    let end = traj.final_state();
    (env.energy(&end[..n]) - env.energy(x0), end[n])
}

#[test]
fn pendulum_energy_change_equals_work_under_max_torque() {
    let env = EnvSpec::pendulum();
    let (de, work) = energy_and_work(&env, &env.hanging_state(), &[env.a_max], 1.0);
    assert!(work.abs() > 0.1);
    assert!((de - work).abs() < 1e-8 * work.abs().max(1.0), "dE {de} work {work}");
}

#[test]
fn forced_energy_balance_holds_for_every_env() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for env in all() {
        let x0: Vec<f64> = env.sample_initial_state(&mut rng).iter().map(|x| x + 0.3).collect();
        let action = vec![0.7 * env.a_max; env.act_dim];
        let (de, work) = energy_and_work(&env, &x0, &action, 2.0);
        assert!((de - work).abs() < 1e-7 * work.abs().max(1.0), "{}: dE {de} work {work}", env.kind);
    }
}

#[test]
fn unforced_energy_is_conserved_over_ten_seconds() {
    for env in all() {
        let x0: Vec<f64> = env.upright_state().iter().map(|x| x + 0.9).collect();
        let zero = vec![0.0; env.act_dim];
        let field = field_fn(env.phys_dim, |_, x, dx| env.derivative(x, &zero, dx));
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let traj = integrate(&field, &x0, &times, &SolverConfig::reference()).unwrap();
        let e0 = env.energy(&x0);
        for x in &traj.states {
            let drift = (env.energy(x) - e0).abs() / e0.abs();
            assert!(drift < 1e-6, "{}: drift {drift}", env.kind);
        }
    }
}

#[test]
fn cartpole_hanging_rest_has_zero_accelerations() {
    let env = EnvSpec::cartpole();
    let mut dx = [1.0; 4];
    env.derivative(&env.hanging_state(), &[0.0], &mut dx);
    assert!(dx[2].abs() < 1e-15 && dx[3].abs() < 1e-14, "{dx:?}");
}

#[test]
fn initial_states_stay_in_their_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for env in all() {
        let rest = env.hanging_state();
        for _ in 0..1000 {
            let x = env.sample_initial_state(&mut rng);
            for ((xi, ri), b) in x.iter().zip(&rest).zip(&env.s_box) {
                assert!((xi - ri).abs() <= *b);
            }
        }
    }
    let mut zero_box = EnvSpec::cartpole();
    zero_box.s_box = vec![0.0; 4];
    assert_eq!(zero_box.sample_initial_state(&mut rng), zero_box.hanging_state());
}

#[test]
fn initial_state_means_sit_at_the_box_centre() {
    let env = EnvSpec::pendulum();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| env.sample_initial_state(&mut rng)).collect();
    for (k, (centre, b)) in env.hanging_state().iter().zip(&env.s_box).enumerate() {
        let mean = draws.iter().map(|x| x[k]).sum::<f64>() / n as f64;
        let std_err = b / 3f64.sqrt() / (n as f64).sqrt();
        assert!((mean - centre).abs() < 3.0 * std_err, "coordinate {k}: mean {mean}");
    }
}

fn reward_oracle(env: &EnvSpec, obs: &[f64], a: &[f64]) -> f64 {
    let mut dq = 0.0;
    for (k, g) in env.goal.iter().enumerate() {
        dq += (obs[env.goal_offset + k] - g) * (obs[env.goal_offset + k] - g);
    }
    let mut dp = 0.0;
    for v in &obs[env.q_dim..] {
        dp += v * v;
    }
    let mut da = 0.0;
    for v in a {
        da += v * v;
    }
    (-(dq) - env.c_p * dp).exp() - env.c_a * da
}

proptest! {
    #[test]
    fn reward_matches_formula_and_is_bounded(which in 0usize..3, seed in 0u64..1_000_000) {
        let env = &all()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f64> = (0..env.obs_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a: Vec<f64> = (0..env.act_dim).map(|_| rng.random_range(-env.a_max..env.a_max)).collect();
        let r = env.reward(&obs, &a);
        prop_assert!((r - reward_oracle(env, &obs, &a)).abs() < 1e-14);
        prop_assert!(r <= 1.0);
        prop_assert!(r < 1.0);

        let mut tape = Tape::new();
        let ov = tape.constant(Matrix::row_vector(&obs));
        let av = tape.constant(Matrix::row_vector(&a));
        let rv = env.reward_taped(&mut tape, ov, av);
        prop_assert!((tape.value(rv).item() - r).abs() < 1e-14);
    }
}

#[test]
fn taped_reward_gradient_matches_finite_differences() {
    let env = EnvSpec::cartpole();
    let obs = [0.2, 0.1, 0.8, -0.4, 0.9];
    let a = [1.3];
    let mut tape = Tape::new();
    let ov = tape.leaf(Matrix::row_vector(&obs));
    let av = tape.leaf(Matrix::row_vector(&a));
    let rv = env.reward_taped(&mut tape, ov, av);
    let g = tape.backward(rv).unwrap();
    let eps = 1e-6;
    for k in 0..obs.len() {
        let (mut p, mut m) = (obs, obs);
        p[k] += eps;
        m[k] -= eps;
        let num = (env.reward(&p, &a) - env.reward(&m, &a)) / (2.0 * eps);
        assert!((g.get(ov).unwrap()[(0, k)] - num).abs() < 1e-8);
    }
    let num = (env.reward(&obs, &[a[0] + eps]) - env.reward(&obs, &[a[0] - eps])) / (2.0 * eps);
    assert!((g.get(av).unwrap().item() - num).abs() < 1e-8);
}

#[test]
fn zero_torque_from_hanging_rest_stays_put() {
    let env = EnvSpec::pendulum();
    let times: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
    let zero = |_: f64, _: &[f64], a: &mut [f64]| a.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = rollout_true(&env, &zero, &env.hanging_state(), &times, 0.0, &mut rng).unwrap();
    assert!(r.failure.is_none());
    let first = r.trajectory.states[0].clone();
    for s in &r.trajectory.states {
        for (a, b) in s.iter().zip(&first) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn observation_noise_has_the_requested_std() {
    let env = EnvSpec::cartpole();
    let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let push = |t: f64, _: &[f64], a: &mut [f64]| a[0] = (2.0 * t).sin();
    let x0 = env.hanging_state();
    let clean = rollout_true(&env, &push, &x0, &times, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let noisy = rollout_true(&env, &push, &x0, &times, 0.025, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let diffs: Vec<f64> = clean
        .trajectory
        .states
        .iter()
        .zip(&noisy.trajectory.states)
        .flat_map(|(c, n)| c.iter().zip(n).map(|(a, b)| b - a).collect::<Vec<_>>())
        .collect();
    assert!(diffs.len() >= 1000);
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    assert!((std - 0.025).abs() < 0.0025, "std {std}");
    assert_eq!(clean.trajectory.actions, noisy.trajectory.actions);
}

#[test]
fn irregular_times_are_recorded_exactly() {
    let env = EnvSpec::acrobot();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gaps = Exp::new(10.0).unwrap();
    let mut times = vec![0.0];
    for _ in 0..49 {
        let g: f64 = gaps.sample(&mut rng);
        times.push(times.last().unwrap() + g.max(1e-6));
    }
    let push = |t: f64, _: &[f64], a: &mut [f64]| {
        a[0] = t.cos();
        a[1] = -t.sin();
    };
    let x0 = env.sample_initial_state(&mut rng);
    let r = rollout_true(&env, &push, &x0, &times, 0.0, &mut rng).unwrap();
    assert_eq!(r.trajectory.times, times);
    assert_eq!(r.trajectory.actions[0].len(), 2);
}

#[test]
fn recorded_actions_respect_the_bound() {
    let env = EnvSpec::pendulum();
    let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
    let wild = |t: f64, _: &[f64], a: &mut [f64]| a[0] = 40.0 * (3.0 * t).sin();
    let r = rollout_true(&env, &wild, &env.hanging_state(), &times, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(r.trajectory.actions.iter().all(|a| a[0].abs() <= env.a_max));
}
