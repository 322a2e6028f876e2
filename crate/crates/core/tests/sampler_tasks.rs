use mmf_core::autodiff::Tensor;
use mmf_core::meanflow::{AnalyticFlow, AverageVelocityOracle, InstantaneousField, ZeroField};
use mmf_core::sampler::{
    energy_distance, evaluate, few_step_sample, one_step_mse, one_step_mse_on, one_step_sample,
    path_deviation, smoothness, CountingField, EvalConfig, SamplePath,
};
use mmf_core::tasks::{stack_pairs, TaskKind, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const E: f64 = std::f64::consts::E;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn harmonic_oracle(d: usize) -> AverageVelocityOracle {
    AverageVelocityOracle::new(AnalyticFlow::harmonic(d))
}

/// Test-local RK4 for `dx/dt = −x` from `t0` to `t1`.
fn rk4_decay(x: f64, t0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut x = x;
    for _ in 0..steps {
        let k1 = -x;
        let k2 = -(x + 0.5 * h * k1);
        let k3 = -(x + 0.5 * h * k2);
        let k4 = -(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn one_step_inverts_the_harmonic_flow() {
    let x1 = Tensor::matrix(1, 1, vec![0.5]).unwrap();
    let x0 = one_step_sample(&harmonic_oracle(1), &x1).unwrap().item();
    assert!((x0 - 0.5 * E).abs() <= 1e-8);
    assert!((x0 - rk4_decay(0.5, 1.0, 0.0, 1000)).abs() <= 1e-8);
    assert!((x0 - 1.3591409).abs() <= 1e-7);
}

#[test]
fn few_step_endpoints_are_exact_for_the_oracle() {
    let mut g = rng(1);
    let x1: Vec<f64> = (0..6).map(|_| g.sample(StandardNormal)).collect();
    let x1 = Tensor::matrix(3, 2, x1).unwrap();
    for n in [1, 2, 4, 8] {
        let end = few_step_sample(&harmonic_oracle(2), &x1, n).unwrap();
        for (a, b) in end.endpoint().data().iter().zip(x1.data()) {
            assert!((a - b * E).abs() <= 1e-6, "n {n}: {a} vs {}", b * E);
        }
    }
    let one = one_step_sample(&harmonic_oracle(2), &x1).unwrap();
    assert_eq!(few_step_sample(&harmonic_oracle(2), &x1, 1).unwrap().endpoint(), &one);
}

#[test]
fn eight_step_oracle_path_follows_rk4_reference() {
    let x1 = 0.8;
    let path = few_step_sample(&harmonic_oracle(1), &Tensor::matrix(1, 1, vec![x1]).unwrap(), 8)
        .unwrap()
        .path(0);
    // Ground truth from x0 = x1·e forward to τ = 1 on a grid that contains k/8.
    let reference = mmf_core::meanflow::rk4_solve(
        |x: &[f64], _| x.iter().map(|v| -v).collect(),
        &[x1 * E],
        0.0,
        1.0,
        800,
    )
    .unwrap();
    let dev = path_deviation(&path, &reference).unwrap();
    assert!(dev <= 1e-10, "{dev}");
}

#[test]
fn euler_sampling_converges_monotonically() {
    let field = InstantaneousField {
        flow: AnalyticFlow::harmonic(1),
    };
    let x1 = Tensor::matrix(1, 1, vec![1.2]).unwrap();
    let truth = rk4_decay(1.2, 1.0, 0.0, 2000);
    let errors: Vec<f64> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&n| (few_step_sample(&field, &x1, n).unwrap().endpoint().item() - truth).abs())
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn evaluation_counts() {
    let x1 = Tensor::zeros(&[4, 2]);
    let counter = CountingField::new(ZeroField { dim: 2 });
    one_step_sample(&counter, &x1).unwrap();
    assert_eq!(counter.evaluations(), 1);
    for n in [1, 3, 8] {
        let counter = CountingField::new(ZeroField { dim: 2 });
        few_step_sample(&counter, &x1, n).unwrap();
        assert_eq!(counter.evaluations(), n);
    }
}

#[test]
fn path_against_itself_is_zero() {
    let mut g = rng(2);
    let data: Vec<f64> = (0..10).map(|_| g.random_range(-1.0..1.0)).collect();
    let path = SamplePath::new(vec![1.0, 0.75, 0.5, 0.25, 0.0], Tensor::matrix(5, 2, data).unwrap()).unwrap();
    assert_eq!(path_deviation(&path, &path.to_reference().unwrap()).unwrap(), 0.0);
}

#[test]
fn smoothness_of_decay_shrinks_with_refinement() {
    let decay_path = |n: usize| {
        let times: Vec<f64> = (0..=n).rev().map(|k| k as f64 / n as f64).collect();
        let states = times.iter().map(|t| (-t).exp()).collect();
        SamplePath::new(times, Tensor::matrix(n + 1, 1, states).unwrap()).unwrap()
    };
    let values: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| smoothness(&decay_path(n)).unwrap()).collect();
    assert!(values.iter().all(|&v| v > 0.0));
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn smoothness_scales_quadratically() {
    let zig = |h: f64| {
        SamplePath::new(vec![1.0, 0.5, 0.0], Tensor::matrix(3, 1, vec![0.0, h, 0.0]).unwrap()).unwrap()
    };
    let base = smoothness(&zig(1.0)).unwrap();
    assert!(base > 0.0);
    assert_eq!(smoothness(&zig(2.0)).unwrap(), 4.0 * base);
    assert_eq!(smoothness(&zig(4.0)).unwrap(), 16.0 * base);
}

#[test]
fn energy_distance_basic_properties() {
    let a = Tensor::matrix(3, 1, vec![0.0, 1.0, 5.0]).unwrap();
    let shuffled = Tensor::matrix(3, 1, vec![5.0, 0.0, 1.0]).unwrap();
    let b = Tensor::matrix(3, 1, vec![0.0, 1.0, 4.0]).unwrap();
    assert_eq!(energy_distance(&a, &shuffled).unwrap(), 0.0);
    let ab = energy_distance(&a, &b).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, energy_distance(&b, &a).unwrap());

    let p = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    let q = Tensor::matrix(2, 2, vec![3.0, 4.0, 3.0, 4.0]).unwrap();
    assert!((energy_distance(&p, &q).unwrap() - 10.0).abs() <= 1e-12);
}

#[test]
fn energy_distance_of_shifted_normals_matches_monte_carlo() {
    let mut g = rng(3);
    let draw = |g: &mut ChaCha8Rng, mu: f64, n: usize| -> Vec<f64> {
        (0..n).map(|_| mu + g.sample::<f64, _>(StandardNormal)).collect()
    };
    let a = Tensor::matrix(2000, 1, draw(&mut g, 0.0, 2000)).unwrap();
    let b = Tensor::matrix(2000, 1, draw(&mut g, 3.0, 2000)).unwrap();
    let got = energy_distance(&a, &b).unwrap();

    // Brute-force estimate of 2E|X−Y| − E|X−X'| − E|Y−Y'| from independent draws.
    let m = 1_000_000;
    let mut mc = 0.0;
    for _ in 0..m {
        let x: f64 = g.sample(StandardNormal);
        let x2: f64 = g.sample(StandardNormal);
        let y = 3.0 + g.sample::<f64, _>(StandardNormal);
        let y2 = 3.0 + g.sample::<f64, _>(StandardNormal);
        mc += 2.0 * (x - y).abs() - (x - x2).abs() - (y - y2).abs();
    }
    let mc = mc / m as f64;
    assert!((got - mc).abs() <= 0.05 * mc, "{got} vs {mc}");
}

#[test]
fn oracle_one_step_mse_on_noiseless_task() {
    let task = TaskSpec::ode_harmonic(2, 0.0, 4);
    let (x0, x1) = stack_pairs(&task.eval_set(500)).unwrap();
    let mse = one_step_mse_on(&harmonic_oracle(2), &x0, &x1).unwrap();
    assert!(mse <= 1e-10, "{mse}");
}

#[test]
fn zero_field_one_step_mse_is_pair_distance() {
    let task = TaskSpec::ode_harmonic(1, 0.01, 5);
    let mut a = rng(6);
    let mut b = rng(6);
    let got = one_step_mse(&ZeroField { dim: 1 }, &task, 1000, &mut a).unwrap();
    let (x0, x1) = task.sample_batch(&mut b, 1000);
    let expect = x0.data().iter().zip(x1.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 1000.0;
    assert_eq!(got, expect);
}

#[test]
fn doubling_samples_stays_within_monte_carlo_error() {
    let task = TaskSpec::ode_harmonic(1, 0.01, 7);
    let field = ZeroField { dim: 1 };
    let n = 2000;
    let small = one_step_mse(&field, &task, n, &mut rng(8)).unwrap();
    let large = one_step_mse(&field, &task, 2 * n, &mut rng(9)).unwrap();
    // Per-sample spread from an independent draw.
    let (x0, x1) = task.sample_batch(&mut rng(10), 20_000);
    let errs: Vec<f64> = x0.data().iter().zip(x1.data()).map(|(p, q)| (p - q) * (p - q)).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (errs.len() - 1) as f64;
    let se = (var / n as f64 + var / (2 * n) as f64).sqrt();
    assert!((small - large).abs() <= 3.0 * se, "{small} vs {large} (se {se})");
}

#[test]
fn harmonic_pairs_lie_on_the_flow() {
    let task = TaskSpec::ode_harmonic(3, 0.0, 11);
    for p in task.eval_set(50) {
        for (a, b) in p.x0.iter().zip(&p.x1) {
            assert!((b / a - (-1.0f64).exp()).abs() <= 1e-15);
            // (x1 − x0)/1 against the closed-form average velocity x1·(1 − e).
            assert!(((b - a) - b * (1.0 - E)).abs() <= 1e-12);
        }
    }
}

#[test]
fn point_mass_mean_within_three_sigma() {
    let task = TaskSpec::new(
        TaskKind::PointMass {
            target_mean: vec![3.0, -1.0],
            target_std: 0.5,
        },
        12,
    );
    let n = 100_000;
    let (x0, _) = task.sample_batch(&mut rng(13), n);
    for (j, m) in [3.0, -1.0].iter().enumerate() {
        let mean = (0..n).map(|i| x0.row(i)[j]).sum::<f64>() / n as f64;
        assert!((mean - m).abs() <= 3.0 * 0.5 / (n as f64).sqrt(), "coord {j}: {mean}");
    }
}

#[test]
fn mixture_occupancy_passes_chi_square() {
    let task = TaskSpec::gmm2d_default(14);
    let k = 8;
    let n = 100_000;
    let mut counts = vec![0usize; k];
    let mut g = rng(15);
    for _ in 0..n {
        let (_, label) = task.sample_pair_labeled(&mut g);
        counts[label.unwrap()] += 1;
    }
    let expect = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // Upper 1% point of the chi-square distribution with 7 degrees of freedom.
    assert!(chi2 < 18.475306906582357, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn draws_depend_only_on_seed_and_index() {
    let task = TaskSpec::gmm2d_default(16);
    let set = task.eval_set(20);
    for (i, p) in set.iter().enumerate() {
        assert_eq!(*p, task.pair_at(i as u64));
    }
    assert_eq!(set, TaskSpec::gmm2d_default(16).eval_set(20));
    assert_ne!(set, TaskSpec::gmm2d_default(17).eval_set(20));
}

#[test]
fn reference_path_shapes() {
    let harmonic = TaskSpec::ode_harmonic(2, 0.0, 18);
    let pair = harmonic.pair_at(0);
    let path = harmonic.reference_path(&pair, 11).unwrap();
    let end = path.states().row(10);
    for (e, x0) in end.iter().zip(&pair.x0) {
        assert_eq!(*e, x0 * (-1.0f64).exp());
    }

    let pm = TaskSpec::new(
        TaskKind::PointMass {
            target_mean: vec![3.0, 3.0],
            target_std: 0.5,
        },
        19,
    );
    let pair = pm.pair_at(3);
    let path = pm.reference_path(&pair, 3).unwrap();
    for j in 0..2 {
        assert_eq!(path.states().row(1)[j], 0.5 * (pair.x0[j] + pair.x1[j]));
    }
    let fine = pm.reference_path(&pair, 9).unwrap();
    let n = fine.len();
    let times: Vec<f64> = fine.times().iter().rev().copied().collect();
    let data: Vec<f64> = (0..n).rev().flat_map(|i| fine.states().row(i).to_vec()).collect();
    let as_sample = SamplePath::new(times, Tensor::matrix(n, 2, data).unwrap()).unwrap();
    assert!(smoothness(&as_sample).unwrap() <= 1e-24);

    assert!(TaskSpec::gmm2d_default(0).reference_path(&pair, 5).is_err());
}

#[test]
fn evaluate_reports_nfe_and_absent_path_metric() {
    let cfg = EvalConfig {
        n_samples: 50,
        few_step_ns: vec![1, 2],
        path_steps: 4,
    };
    let metrics = evaluate(&ZeroField { dim: 2 }, &TaskSpec::gmm2d_default(20), &cfg).unwrap();
    assert_eq!(metrics.nfe, 1);
    assert!(metrics.d_path.is_none());
    assert_eq!(metrics.smoothness, 0.0);

    let oracle = evaluate(&harmonic_oracle(1), &TaskSpec::ode_harmonic(1, 0.0, 21), &cfg).unwrap();
    assert!(oracle.one_step_mse <= 1e-10);
    assert!(oracle.d_path.unwrap() <= 1e-10);
}
