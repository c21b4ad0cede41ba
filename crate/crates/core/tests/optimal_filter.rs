use nalgebra::{DMatrix, DVector};
use poissonkf::linalg::{max_asymmetry, min_eigenvalue};
use poissonkf::optimal::{run_mean_field, run_optimal, update, FilterState};
use poissonkf::sde::{sample_clock, simulate_state, ObservationEvent};
use poissonkf::theory::{expected_cov_odes, ScalarModel};
use poissonkf::{harness, LinearGaussianModel, RngStream, RoleTag};
use proptest::prelude::*;

fn benchmark_model() -> LinearGaussianModel {
    LinearGaussianModel::scalar(-1.0, 1.0, 1.0, 0.5, 0.0, 1.0).unwrap()
}

fn spd(entries: &[f64], n: usize, ridge: f64) -> DMatrix<f64> {
    let b = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    &b * b.transpose() + DMatrix::identity(n, n) * ridge
}

proptest! {
    #[test]
    fn update_contracts_covariance(
        n in 1usize..=3,
        p in 1usize..=2,
        pe in proptest::collection::vec(-2.0f64..2.0, 9),
        ce in proptest::collection::vec(-3.0f64..3.0, 6),
        ve in proptest::collection::vec(-1.0f64..1.0, 4),
        ye in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        let cov = spd(&pe, n, 1e-6);
        let c = DMatrix::from_row_slice(p, n, &ce[..p * n]);
        let v = spd(&ve, p, 1e-2);
        let model = LinearGaussianModel::new(DMatrix::zeros(n, n), DMatrix::identity(n, n), c, v, DVector::zeros(n), cov.clone()).unwrap();
        let state = FilterState { t: 0.3, mean: DVector::zeros(n), cov: cov.clone() };
        let ev = ObservationEvent { time: 0.3, y: DVector::from_row_slice(&ye[..p]), measurement_noise: DVector::zeros(p) };
        let post = update(&model, &state, &ev).unwrap();
        let scale = cov.amax().max(1.0);
        prop_assert!(max_asymmetry(&post.cov) < 1e-12 * scale);
        prop_assert!(post.cov.trace() <= cov.trace() + 1e-12 * scale);
        // Loewner order: cov - cov+ is PSD
        prop_assert!(min_eigenvalue(&(&cov - &post.cov)) > -1e-10 * scale);
        prop_assert!(min_eigenvalue(&post.cov) > -1e-10 * scale);
    }
}

#[test]
fn uninformative_and_confident_updates_are_identities() {
    let ev = ObservationEvent { time: 0.0, y: DVector::from_element(1, 3.0), measurement_noise: DVector::zeros(1) };
    let blind = LinearGaussianModel::scalar(0.0, 1.0, 0.0, 1.0, 0.0, 1.0).unwrap();
    let s = FilterState { t: 0.0, mean: DVector::from_element(1, 0.4), cov: DMatrix::from_element(1, 1, 2.0) };
    assert_eq!(update(&blind, &s, &ev).unwrap(), s);
    let sure = FilterState { cov: DMatrix::zeros(1, 1), ..s.clone() };
    assert_eq!(update(&benchmark_model(), &sure, &ev).unwrap(), sure);
}

#[test]
fn three_state_model_covariance_jumps_down_and_stays_symmetric() {
    let model = harness::preset(harness::PAPER_PRESET).unwrap().model;
    let mut rng = RngStream::new(4, 0, RoleTag::StateNoise);
    let clock = sample_clock(10.0, 2.0, &mut rng.sibling(RoleTag::Clock)).unwrap();
    let traj = simulate_state(&model, &clock, 1e-3, &mut rng).unwrap();
    let states = run_optimal(&model, &clock, &traj.events, 1e-3).unwrap();
    let cache = poissonkf::sde::StepCache::new(&model, traj.grid.spacing()).unwrap();
    for (i, p) in traj.grid.points().iter().enumerate() {
        assert!(max_asymmetry(&states[i].cov) < 1e-12);
        if i > 0 && p.event.is_some() {
            let dt = p.t - traj.grid.points()[i - 1].t;
            let prior = cache.partial(&model, dt).unwrap().propagate_cov(&states[i - 1].cov);
            assert!(states[i].cov.trace() < prior.trace(), "no downward jump at t={}", p.t);
        }
    }
}

fn first_jump_innovation(model: &LinearGaussianModel, r: u32) -> Option<f64> {
    let mut rng = RngStream::new(6, r, RoleTag::StateNoise);
    let clock = sample_clock(5.0, 5.0, &mut rng.sibling(RoleTag::Clock)).unwrap();
    let tau = *clock.jump_times().first()?;
    let traj = simulate_state(model, &clock, 0.05, &mut rng).unwrap();
    let states = run_optimal(model, &clock, &traj.events, 0.05).unwrap();
    let i = traj.grid.points().iter().position(|p| p.t == tau)?;
    // the prior at the jump is the state before the update
    let prev = &states[i - 1];
    let dt = tau - prev.t;
    let pred = poissonkf::optimal::predict(model, prev, dt).unwrap();
    let s = pred.cov[(0, 0)] * model.c()[(0, 0)].powi(2) + model.v()[(0, 0)];
    Some((traj.events[0].y[0] - model.c()[(0, 0)] * pred.mean[0]) / s.sqrt())
}

#[test]
fn first_innovation_is_standard_normal() {
    let model = benchmark_model();
    let z: Vec<f64> = (0..10_000).filter_map(|r| first_jump_innovation(&model, r)).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let skew = z.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / m2.powf(1.5);
    let kurt = z.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n / (m2 * m2);
    assert!(skew.abs() < 0.1 && (kurt - 3.0).abs() < 0.2, "skew {skew}, kurtosis {kurt}");
    assert!((m2 - 1.0).abs() < 0.05, "variance {m2}");
}

#[test]
fn mean_field_spread_matches_expected_covariance() {
    // E[(S_T - X_hat_T)^2] = E[P_T]
    let model = benchmark_model();
    let horizon = 5.0;
    let n = 5000u32;
    let sq: Vec<f64> = (0..n)
        .map(|r| {
            let mut rng = RngStream::new(12, r, RoleTag::StateNoise);
            let clock = sample_clock(5.0, horizon, &mut rng.sibling(RoleTag::Clock)).unwrap();
            let traj = simulate_state(&model, &clock, 0.01, &mut rng).unwrap();
            let opt = run_optimal(&model, &clock, &traj.events, 0.01).unwrap();
            let mut mf_rng = RngStream::new(12, r, RoleTag::MeanField);
            let mf = run_mean_field(&model, &clock, &traj.events, &opt, 0.01, &mut mf_rng).unwrap();
            let last = mf.last().unwrap();
            assert_eq!(last.q, opt.last().unwrap().cov);
            (last.s[0] - last.s_hat[0]).powi(2)
        })
        .collect();
    let nf = n as f64;
    let mean = sq.iter().sum::<f64>() / nf;
    let se = (sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
    let sm = ScalarModel::new(-1.0, 1.0, 1.0, 0.5, 5.0, 10, 1.0, None).unwrap();
    let p_t = *expected_cov_odes(&sm, horizon, 1e-3).unwrap().p_cal.last().unwrap();
    assert!((mean - p_t).abs() < 3.0 * se, "{mean} +- {se} vs {p_t}");
}
