use mmf_core::meanflow::suite::{random_pair, random_triple};
use mmf_core::meanflow::{
    average_velocity_closed_form, average_velocity_oracle, consistency_residual, identity_residual,
    instantaneous_velocity, limit_gap, loglog_slope, norm, rk4_solve, trajectory, AnalyticFlow,
    AverageVelocity, AverageVelocityOracle, TrajectoryMethod, ZeroField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const E: f64 = std::f64::consts::E;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Test-local classical RK4 for `dx/dt = −x`, scalar.
fn rk4_decay(x: f64, t0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let f = |x: f64| -x;
    let mut x = x;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn instantaneous_velocities() {
    let c = AnalyticFlow::constant(vec![2.0, 0.0]);
    assert_eq!(instantaneous_velocity(&c, &[5.0, -1.0], 0.7), vec![2.0, 0.0]);
    let h = AnalyticFlow::harmonic(1);
    assert_eq!(instantaneous_velocity(&h, &[0.5], 0.3), vec![-0.5]);
    assert_eq!(instantaneous_velocity(&h, &[0.0], 0.9), vec![0.0]);
}

#[test]
fn harmonic_trajectory_matches_rk4_oracle() {
    let h = AnalyticFlow::harmonic(1);
    let got = trajectory(&h, &[1.0], 0.0, 1.0)[0];
    assert!((got - rk4_decay(1.0, 0.0, 1.0, 1000)).abs() <= 1e-8);
    assert!((got - 0.3678794).abs() <= 1e-7);
    assert_eq!(trajectory(&h, &[0.8], 0.4, 0.4), vec![0.8]);
    let c = AnalyticFlow::constant(vec![1.0, 1.0]);
    assert_eq!(trajectory(&c, &[0.0, 0.0], 0.25, 0.75), vec![0.5, 0.5]);
}

#[test]
fn rk4_solver_endpoint_and_order() {
    let v = |x: &[f64], _t: f64| x.iter().map(|a| -a).collect::<Vec<f64>>();
    let path = rk4_solve(v, &[1.3], 0.0, 1.0, 1000).unwrap();
    assert_eq!(path.len(), 1001);
    assert_eq!(path.times()[0], 0.0);
    assert_eq!(path.times()[1000], 1.0);
    let end = path.states().row(1000)[0];
    assert!((end - 1.3 * (-1.0f64).exp()).abs() <= 1e-10);

    let err = |n: usize| {
        let p = rk4_solve(v, &[1.0], 0.0, 1.0, n).unwrap();
        (p.states().row(n)[0] - (-1.0f64).exp()).abs()
    };
    let ratio = err(10) / err(20);
    assert!((14.0..18.0).contains(&ratio), "halving ratio {ratio}");

    let still = rk4_solve(|x: &[f64], _| vec![0.0; x.len()], &[2.0, -1.0], 0.0, 1.0, 7).unwrap();
    for i in 0..still.len() {
        assert_eq!(still.states().row(i), &[2.0, -1.0]);
    }
}

#[test]
fn harmonic_oracle_unit_interval_both_methods() {
    let h = AnalyticFlow::harmonic(1);
    for method in [TrajectoryMethod::ClosedForm, TrajectoryMethod::Rk4] {
        let oracle = AverageVelocityOracle::new(h.clone()).with_method(method);
        let u = oracle.eval(&[1.0], 0.0, 1.0).unwrap()[0];
        assert!((u - (1.0 - E)).abs() <= 1e-6, "{method:?}: {u}");
    }
    let u = average_velocity_oracle(&h, &[1.0], 0.0, 1.0).unwrap()[0];
    assert!((u + 1.7182818).abs() <= 1e-6);
}

#[test]
fn harmonic_oracle_tiny_interval_recovers_velocity() {
    let h = AnalyticFlow::harmonic(1);
    let u = average_velocity_oracle(&h, &[0.5], 0.3, 0.3 + 1e-6).unwrap()[0];
    assert!((u + 0.5).abs() <= 1e-5);
}

#[test]
fn closed_forms_agree_with_quadrature() {
    let mut g = rng(1);
    let c = AnalyticFlow::constant(vec![0.7, -2.0, 1.5]);
    let h = AnalyticFlow::harmonic(3);
    for _ in 0..200 {
        let x = point(&mut g, 3);
        let (r, t) = random_pair(&mut g, 1e-3);
        let qc = average_velocity_oracle(&c, &x, r, t).unwrap();
        let cc = average_velocity_closed_form(&c, &x, r, t).unwrap();
        assert!(norm(&diff(&qc, &cc)) <= 1e-8);
        let qh = average_velocity_oracle(&h, &x, r, t).unwrap();
        let ch = average_velocity_closed_form(&h, &x, r, t).unwrap();
        assert!(norm(&diff(&qh, &ch)) <= 1e-6, "r {r}, t {t}");
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn harmonic_identity_residual_is_small() {
    let h = AnalyticFlow::harmonic(2);
    let oracle = AverageVelocityOracle::new(h.clone());
    let mut g = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = point(&mut g, 2);
        let (r, t) = random_pair(&mut g, 1e-3);
        worst = worst.max(norm(&identity_residual(&oracle, &h, &x, r, t).unwrap()));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn identity_residual_shrinks_with_refinement() {
    let h = AnalyticFlow::harmonic(1);
    let coarse = AverageVelocityOracle::with_intervals(h.clone(), 200);
    let fine = AverageVelocityOracle::with_intervals(h.clone(), 2000);
    let mut g = rng(3);
    let (mut wc, mut wf): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let x = point(&mut g, 1);
        let (r, t) = random_pair(&mut g, 0.1);
        wc = wc.max(norm(&identity_residual(&coarse, &h, &x, r, t).unwrap()));
        wf = wf.max(norm(&identity_residual(&fine, &h, &x, r, t).unwrap()));
    }
    assert!(wf <= wc, "{wf} > {wc}");
}

#[test]
fn trivial_identity_residuals() {
    let c = AnalyticFlow::constant(vec![1.5, -0.5]);
    let oracle = AverageVelocityOracle::new(c.clone());
    let res = identity_residual(&oracle, &c, &[0.3, 0.2], 0.1, 0.8).unwrap();
    assert_eq!(res, vec![0.0, 0.0]);

    let h = AnalyticFlow::harmonic(2);
    let x = [0.4, -1.2];
    let res = identity_residual(&ZeroField { dim: 2 }, &h, &x, 0.2, 0.9).unwrap();
    assert_eq!(res, instantaneous_velocity(&h, &x, 0.9));
}

#[test]
fn harmonic_consistency_over_random_triples() {
    let h = AnalyticFlow::harmonic(2);
    let oracle = AverageVelocityOracle::new(h);
    let mut g = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = point(&mut g, 2);
        let (r, s, t) = random_triple(&mut g, 0.01);
        assert!(s - r >= 0.01 && t - s >= 0.01);
        worst = worst.max(norm(&consistency_residual(&oracle, &x, r, s, t).unwrap()));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn constant_consistency_is_exact() {
    let c = AnalyticFlow::constant(vec![0.5, 2.0]);
    let oracle = AverageVelocityOracle::new(c);
    let res = consistency_residual(&oracle, &[1.0, -1.0], 0.125, 0.5, 0.75).unwrap();
    assert_eq!(res, vec![0.0, 0.0]);
}

#[test]
fn consistency_degenerate_middle_point() {
    let h = AnalyticFlow::harmonic(1);
    let oracle = AverageVelocityOracle::new(h);
    let (r, t) = (0.2, 0.9);
    let res = consistency_residual(&oracle, &[1.1], r, t - 1e-9, t).unwrap();
    assert!(norm(&res) <= 1e-6, "{res:?}");
}

#[test]
fn limit_is_linear_in_epsilon() {
    let h = AnalyticFlow::harmonic(2);
    let oracle = AverageVelocityOracle::new(h.clone());
    let eps = [1e-2, 1e-3, 1e-4];
    let mut g = rng(5);
    for _ in 0..20 {
        let x = point(&mut g, 2);
        let r = g.random_range(0.0..0.9);
        let gaps: Vec<f64> = eps.iter().map(|&e| limit_gap(&oracle, &h, &x, r, e).unwrap()).collect();
        let slope = loglog_slope(&eps, &gaps);
        assert!((slope - 1.0).abs() <= 0.1, "slope {slope}");
        // For v = −x the gap is ‖x‖·|(1−e^ε)/ε + 1| ≈ ‖x‖·ε/2.
        let k = norm(&x) * 0.51;
        for (&e, &gap) in eps.iter().zip(&gaps) {
            assert!(gap <= k * e, "ε {e}: {gap}");
        }
    }
}
