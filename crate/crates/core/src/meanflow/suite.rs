//! Residual checks of the analytic oracles, as run by `mmf diagnose`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    consistency_residual, identity_residual_with_sign, limit_gap, loglog_slope, norm, AnalyticFlow,
    AverageVelocityOracle,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSuiteConfig {
    pub samples: usize,
    pub dim: usize,
    pub min_gap: f64,
    pub seed: u64,
    pub identity_tol: f64,
    pub consistency_tol: f64,
    pub limit_slope_tol: f64,
    /// Flips the sign of the identity bracket; the identity check must fail.
    pub inject_bracket_sign_error: bool,
}

impl Default for OracleSuiteConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            dim: 2,
            min_gap: 1e-3,
            seed: 0,
            identity_tol: 1e-5,
            consistency_tol: 1e-5,
            limit_slope_tol: 0.1,
            inject_bracket_sign_error: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Worst observed residual (or slope deviation for the limit check).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            passed: value.is_finite() && value <= tolerance,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `(r, t)` with `0 ≤ r`, `t ≤ 1`, `t − r ≥ gap`.
pub fn random_pair(rng: &mut ChaCha8Rng, gap: f64) -> (f64, f64) {
    let r = rng.random_range(0.0..=1.0 - gap);
    let t = rng.random_range(r + gap..=1.0);
    (r, t)
}

/// `r < s < t` in `[0, 1]` with both gaps at least `gap`.
pub fn random_triple(rng: &mut ChaCha8Rng, gap: f64) -> (f64, f64, f64) {
    let r = rng.random_range(0.0..=1.0 - 2.0 * gap);
    let s = rng.random_range(r + gap..=1.0 - gap);
    let t = rng.random_range(s + gap..=1.0);
    (r, s, t)
}

/// Worst identity residual of the harmonic oracle over random points.
pub fn harmonic_identity_check(cfg: &OracleSuiteConfig) -> Result<f64> {
    let flow = AnalyticFlow::harmonic(cfg.dim);
    let oracle = AverageVelocityOracle::new(flow.clone());
    let sign = if cfg.inject_bracket_sign_error { -1.0 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.samples {
        let x = normal_vec(&mut rng, cfg.dim);
        let (r, t) = random_pair(&mut rng, cfg.min_gap);
        let res = identity_residual_with_sign(&oracle, &flow, &x, r, t, sign)?;
        worst = worst.max(norm(&res));
    }
    Ok(worst)
}

/// Worst identity residual of a constant-flow oracle.
pub fn constant_identity_check(cfg: &OracleSuiteConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let flow = AnalyticFlow::constant(normal_vec(&mut rng, cfg.dim));
    let oracle = AverageVelocityOracle::new(flow.clone());
    let sign = if cfg.inject_bracket_sign_error { -1.0 } else { 1.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.samples.min(100) {
        let x = normal_vec(&mut rng, cfg.dim);
        let (r, t) = random_pair(&mut rng, cfg.min_gap);
        let res = identity_residual_with_sign(&oracle, &flow, &x, r, t, sign)?;
        worst = worst.max(norm(&res));
    }
    Ok(worst)
}

/// Worst consistency residual of the harmonic oracle over random triples.
pub fn harmonic_consistency_check(cfg: &OracleSuiteConfig) -> Result<f64> {
    let oracle = AverageVelocityOracle::new(AnalyticFlow::harmonic(cfg.dim));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.samples {
        let x = normal_vec(&mut rng, cfg.dim);
        let (r, s, t) = random_triple(&mut rng, cfg.min_gap);
        let res = consistency_residual(&oracle, &x, r, s, t)?;
        worst = worst.max(norm(&res));
    }
    Ok(worst)
}

pub const LIMIT_EPSILONS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Log-log slope of `‖u(x,r,r+ε) − v(x,r)‖` against ε for the harmonic
/// oracle, at one random `(x, r)`.
pub fn harmonic_limit_slope(cfg: &OracleSuiteConfig) -> Result<f64> {
    let flow = AnalyticFlow::harmonic(cfg.dim);
    let oracle = AverageVelocityOracle::new(flow.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let x = normal_vec(&mut rng, cfg.dim);
    let r = rng.random_range(0.0..0.9);
    let gaps = LIMIT_EPSILONS
        .iter()
        .map(|&e| limit_gap(&oracle, &flow, &x, r, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(loglog_slope(&LIMIT_EPSILONS, &gaps))
}

/// The full identity / consistency / limit suite.
pub fn run_oracle_suite(cfg: &OracleSuiteConfig) -> Result<Vec<CheckOutcome>> {
    let slope = harmonic_limit_slope(cfg)?;
    Ok(alloc::vec![
        CheckOutcome::new("identity_harmonic", harmonic_identity_check(cfg)?, cfg.identity_tol),
        CheckOutcome::new("identity_constant", constant_identity_check(cfg)?, cfg.identity_tol),
        CheckOutcome::new(
            "consistency_harmonic",
            harmonic_consistency_check(cfg)?,
            cfg.consistency_tol
        ),
        CheckOutcome::new("limit_slope", (slope - 1.0).abs(), cfg.limit_slope_tol),
    ])
}
