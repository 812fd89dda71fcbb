use odectrl::dynamics::clip_for_report;
use odectrl::envs::{EnvKind, EnvSpec};
use odectrl::experiment::{
    bootstrap_dataset, emit_reports, load_checkpoint, mixed_policies, rounds_csv, run_experiment, run_round,
    sample_observation_times, save_checkpoint, solver_benchmark, BenchSolver, Provenance, RoundRecord, RunConfig,
    RunState, Spacing,
};
use odectrl::ode::Method;
use odectrl::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(env: EnvKind) -> RunConfig {
    let mut cfg = RunConfig::desk(env);
    cfg.dynamics.hidden = vec![8];
    cfg.dynamics.n_ens = 2;
    cfg.dyn_train.iters = 5;
    cfg.dyn_train.warmup_iters = 2;
    cfg.dyn_train.grad_match_steps = 5;
    cfg.ac.iters = 3;
    cfg.ac.n_p = 8;
    cfg.ac.policy_hidden = vec![8];
    cfg.ac.critic_hidden = vec![8];
    cfg.eval.duration = 6.0;
    cfg.test_trajs = 1;
    cfg.mse_stride = 10;
    cfg.rounds = 2;
    cfg
}

fn gaps(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

#[test]
fn fixed_spacing_gives_an_even_grid() {
    let t = sample_observation_times(Spacing::Fixed, 0.1, 50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(t.len(), 50);
    for (k, tk) in t.iter().enumerate() {
        assert!((tk - 0.1 * k as f64).abs() < 1e-12);
    }
    assert!((t[49] - 4.9).abs() < 1e-12);
}

#[test]
fn random_spacings_have_the_requested_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let uniform = gaps(&sample_observation_times(Spacing::Uniform, 0.1, 10_001, &mut rng).unwrap());
    assert!(uniform.iter().all(|g| *g > 0.0 && *g <= 0.2 + 1e-12));
    let mean = uniform.iter().sum::<f64>() / uniform.len() as f64;
    assert!((mean - 0.1).abs() < 0.005, "uniform mean {mean}");

    let exp = gaps(&sample_observation_times(Spacing::Exp, 0.1, 10_001, &mut rng).unwrap());
    assert!(exp.iter().all(|g| *g > 0.0));
    let mean = exp.iter().sum::<f64>() / exp.len() as f64;
    assert!((mean - 0.1).abs() < 0.005, "exponential mean {mean}");
}

#[test]
fn observation_times_reject_bad_arguments() {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    assert!(sample_observation_times(Spacing::Fixed, 0.1, 1, rng).is_err());
    assert!(sample_observation_times(Spacing::Exp, 0.0, 10, rng).is_err());
    assert_eq!("exp".parse::<Spacing>().unwrap(), Spacing::Exp);
    assert!("gamma".parse::<Spacing>().is_err());
}

#[test]
fn config_validation_rejects_bad_runs() {
    let mut cfg = RunConfig::desk(EnvKind::Pendulum);
    assert!(cfg.validate().is_ok());
    cfg.rounds = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::full(EnvKind::CartPole);
    assert_eq!(cfg.rounds, 25);
    cfg.noise = -0.1;
    assert!(cfg.validate().is_err());
}

#[test]
fn bootstrap_sizes_follow_the_environment() {
    for (kind, n) in [(EnvKind::Pendulum, 3), (EnvKind::CartPole, 5), (EnvKind::Acrobot, 7)] {
        let env = EnvSpec::new(kind);
        let cfg = RunConfig::desk(kind);
        let store = bootstrap_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(store.len(), n);
        for e in &store.entries {
            assert_eq!(e.provenance, Provenance::Initial);
            assert_eq!(e.round, 0);
            assert_eq!(e.trajectory.len(), 50);
            assert!(e.trajectory.actions.iter().flatten().all(|a| a.abs() <= env.a_max));
        }
    }
}

#[test]
fn a_round_appends_one_record_and_the_collected_data() {
    for (kind, grow) in [(EnvKind::Pendulum, 1), (EnvKind::CartPole, 3)] {
        let mut state = RunState::new(tiny(kind)).unwrap();
        let before = state.store.len();
        let record = run_round(&mut state).unwrap();
        assert_eq!(state.records, vec![record.clone()]);
        assert_eq!(record.round, 1);
        assert_eq!(state.store.len(), before + grow);
        assert_eq!(record.dataset_size, before + grow);
        assert_eq!(state.store.count(Provenance::Policy), 1);
        assert_eq!(state.store.count(Provenance::Exploration), grow - 1);
        assert_eq!(record.success.len(), 10);
        assert_eq!(record.solved, record.success_count() == 10);
        assert!(record.dyn_mse_2s <= 100.0);
    }
}

#[test]
fn a_failing_round_leaves_the_state_untouched() {
    let mut state = RunState::new(tiny(EnvKind::Pendulum)).unwrap();
    state.cfg.ac.n_p = 0;
    let (dynamics, store) = (state.dynamics.clone(), state.store.clone());
    assert!(run_round(&mut state).is_err());
    assert!(state.records.is_empty());
    assert_eq!(state.dynamics, dynamics);
    assert_eq!(state.store, store);
}

#[test]
fn rounds_csv_has_the_contract_header_and_clipped_errors() {
    let record = RoundRecord {
        round: 3,
        dataset_size: 6,
        dyn_loss: 1.5,
        dyn_mse_2s: clip_for_report(f64::INFINITY),
        mean_value: 0.25,
        success: vec![true, false, true],
        solved: false,
        dyn_skipped_updates: 0,
        imagination_excluded: 0,
        wall_clock_s: None,
    };
    let text = String::from_utf8(rounds_csv(&[record]).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,mean_value,success_count,dyn_mse_2s,wall_clock_s");
    assert_eq!(lines[1], "3,0.25,2,100,");
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn runs_persist_reproducibly() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let state = run_experiment(tiny(EnvKind::Pendulum), Some(a.path())).unwrap();
    run_experiment(tiny(EnvKind::Pendulum), Some(b.path())).unwrap();
    let rounds = std::fs::read(a.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds, std::fs::read(b.path().join("rounds.csv")).unwrap());
    assert_eq!(String::from_utf8(rounds).unwrap().lines().count(), 1 + state.records.len());

    let sizes: Vec<usize> = state.records.iter().map(|r| r.dataset_size).collect();
    assert!(sizes.windows(2).all(|w| w[1] > w[0]));

    let first = read_dir_bytes(a.path());
    emit_reports(a.path(), &state).unwrap();
    assert_eq!(read_dir_bytes(a.path()), first);

    for (i, e) in state.store.entries.iter().enumerate() {
        let name = format!("{i:04}_{}_round{}.jsonl", e.provenance, e.round);
        let back = Trajectory::read_jsonl(&a.path().join("trajectories").join(name)).unwrap();
        assert_eq!(back, e.trajectory);
    }
    assert!(a.path().join("config.json").exists());

    let ckpt = load_checkpoint(&save_checkpoint(a.path(), &state).unwrap()).unwrap();
    assert_eq!(ckpt.ac, state.ac);
    assert_eq!(ckpt.dynamics, state.dynamics);
    assert_eq!(ckpt.meta.env, EnvKind::Pendulum);
    assert_eq!(ckpt.meta.round, state.records.len());
}

#[test]
fn solver_names_parse_and_print() {
    let s: BenchSolver = "rk4:0.05".parse().unwrap();
    assert_eq!(s, BenchSolver::Fixed { method: Method::Rk4, step: 0.05 });
    assert_eq!("dopri5".parse::<BenchSolver>().unwrap(), BenchSolver::Adaptive { method: Method::Dopri5, tol: 1e-7 });
    assert_eq!("discrete".parse::<BenchSolver>().unwrap(), BenchSolver::Discrete { step: 0.1 });
    for s in ["euler:0.1", "rk78:1e-10", "discrete:0.2"] {
        let parsed: BenchSolver = s.parse().unwrap();
        assert_eq!(parsed.to_string().parse::<BenchSolver>().unwrap(), parsed);
    }
    assert!("rk5".parse::<BenchSolver>().is_err());
    assert!("rk4:-1".parse::<BenchSolver>().is_err());
}

#[test]
fn benchmark_orders_solvers_by_accuracy() {
    let env = EnvSpec::pendulum();
    let (policies, x0s) = mixed_policies(&env, 6, 5.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let refs: Vec<&dyn odectrl::envs::Controller> = policies.iter().map(|p| p.as_ref()).collect();
    let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
    let solvers: Vec<BenchSolver> = ["rk78:1e-10", "dopri5", "rk4:0.1", "discrete:0.1"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let table = solver_benchmark(&env, &refs, &x0s, &solvers, &times).unwrap();
    assert_eq!(table.rows[0].max_error(), 0.0);
    let at_end = |i: usize| *table.rows[i].median_curve().last().unwrap();
    assert!(at_end(1) < at_end(2) && at_end(2) < at_end(3));
    assert!(table.rows[1].max_error() < 1e-2);

    let discrete = table.rows[3].median_curve();
    assert_eq!(discrete[0], 0.0);
    assert!(discrete[1] < discrete[10] && discrete[10] < discrete[50], "{discrete:?}");

    let csv = String::from_utf8(table.to_csv().unwrap()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "solver,time,median_error,max_error");
    assert_eq!(csv.lines().count(), 1 + 4 * times.len());
}
