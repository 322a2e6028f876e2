//! Desk-scale data generators: 2D Gaussian-mixture transport, harmonic ODE
//! endpoint fitting, and 2D point-mass control.
//!
//! Every generator draws `x0` (data endpoint, τ = 0) and `x1` (prior
//! endpoint, τ = 1).

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // needed when built without std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::meanflow::ReferencePath;

fn default_components() -> usize {
    8
}
fn default_ring_radius() -> f64 {
    4.0
}
fn default_component_std() -> f64 {
    0.3
}
fn default_ode_dim() -> usize {
    1
}
fn default_endpoint_noise() -> f64 {
    0.01
}
fn default_target_mean() -> Vec<f64> {
    alloc::vec![3.0, 3.0]
}
fn default_target_std() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskKind {
    /// Independent coupling: `x1 ~ N(0, I)`, `x0` from an evenly spaced ring mixture.
    Gmm2d {
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "default_ring_radius")]
        ring_radius: f64,
        #[serde(default = "default_component_std")]
        component_std: f64,
    },
    /// Paired coupling along `dx/dτ = −x`: `x1 = x0·e^{−1} + noise`.
    OdeHarmonic {
        #[serde(default = "default_ode_dim")]
        dim: usize,
        #[serde(default = "default_endpoint_noise")]
        endpoint_noise_std: f64,
    },
    /// Independent coupling: `x1 ~ N(0, I)`, `x0 ~ N(target_mean, target_std²·I)`.
    PointMass {
        #[serde(default = "default_target_mean")]
        target_mean: Vec<f64>,
        #[serde(default = "default_target_std")]
        target_std: f64,
    },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gmm2d { .. } => "gmm2d",
            Self::OdeHarmonic { .. } => "ode_harmonic",
            Self::PointMass { .. } => "point_mass",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub seed: u64,
}

/// One `(x0, x1)` draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

fn normal_vec<G: Rng + ?Sized>(rng: &mut G, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

impl TaskSpec {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn gmm2d_default(seed: u64) -> Self {
        Self::new(
            TaskKind::Gmm2d {
                components: default_components(),
                ring_radius: default_ring_radius(),
                component_std: default_component_std(),
            },
            seed,
        )
    }

    pub fn ode_harmonic(dim: usize, endpoint_noise_std: f64, seed: u64) -> Self {
        Self::new(
            TaskKind::OdeHarmonic {
                dim,
                endpoint_noise_std,
            },
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        match &self.kind {
            TaskKind::Gmm2d {
                components,
                ring_radius,
                component_std,
            } => {
                if *components == 0 {
                    return bad("kind.components: must be at least 1");
                }
                if !(*ring_radius >= 0.0 && ring_radius.is_finite()) {
                    return bad("kind.ring_radius: must be finite and non-negative");
                }
                if !(*component_std >= 0.0 && component_std.is_finite()) {
                    return bad("kind.component_std: must be finite and non-negative");
                }
            }
            TaskKind::OdeHarmonic {
                dim,
                endpoint_noise_std,
            } => {
                if *dim == 0 {
                    return bad("kind.dim: must be positive");
                }
                if !(*endpoint_noise_std >= 0.0 && endpoint_noise_std.is_finite()) {
                    return bad("kind.endpoint_noise_std: must be finite and non-negative");
                }
            }
            TaskKind::PointMass {
                target_mean,
                target_std,
            } => {
                if target_mean.len() != 2 {
                    return bad("kind.target_mean: must have two entries");
                }
                if target_mean.iter().any(|v| !v.is_finite()) {
                    return bad("kind.target_mean: must be finite");
                }
                if !(*target_std >= 0.0 && target_std.is_finite()) {
                    return bad("kind.target_std: must be finite and non-negative");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TaskKind::Gmm2d { .. } | TaskKind::PointMass { .. } => 2,
            TaskKind::OdeHarmonic { dim, .. } => *dim,
        }
    }

    /// Whether `x0` and `x1` lie on one trajectory (as opposed to being
    /// independent draws from the two marginals).
    pub fn is_paired(&self) -> bool {
        matches!(self.kind, TaskKind::OdeHarmonic { .. })
    }

    pub fn has_reference_path(&self) -> bool {
        !matches!(self.kind, TaskKind::Gmm2d { .. })
    }

    /// Mean of mixture component `k` (gmm2d only).
    pub fn component_mean(&self, k: usize) -> Option<[f64; 2]> {
        match self.kind {
            TaskKind::Gmm2d {
                components,
                ring_radius,
                ..
            } if k < components => {
                let a = 2.0 * PI * k as f64 / components as f64;
                Some([ring_radius * a.cos(), ring_radius * a.sin()])
            }
            _ => None,
        }
    }

    /// Draws a pair; for gmm2d also reports the chosen component.
    pub fn sample_pair_labeled<G: Rng + ?Sized>(&self, rng: &mut G) -> (SamplePair, Option<usize>) {
        match &self.kind {
            TaskKind::Gmm2d {
                components,
                component_std,
                ..
            } => {
                let k = rng.random_range(0..*components);
                let m = self.component_mean(k).expect("component in range");
                let e = normal_vec(rng, 2);
                let x0 = alloc::vec![m[0] + component_std * e[0], m[1] + component_std * e[1]];
                let x1 = normal_vec(rng, 2);
                (SamplePair { x0, x1 }, Some(k))
            }
            TaskKind::OdeHarmonic {
                dim,
                endpoint_noise_std,
            } => {
                let x0 = normal_vec(rng, *dim);
                let decay = (-1.0f64).exp();
                let x1 = x0
                    .iter()
                    .map(|&v| {
                        let eta: f64 = rng.sample(StandardNormal);
                        v * decay + endpoint_noise_std * eta
                    })
                    .collect();
                (SamplePair { x0, x1 }, None)
            }
            TaskKind::PointMass {
                target_mean,
                target_std,
            } => {
                let e = normal_vec(rng, 2);
                let x0 = target_mean.iter().zip(&e).map(|(m, z)| m + target_std * z).collect();
                let x1 = normal_vec(rng, 2);
                (SamplePair { x0, x1 }, None)
            }
        }
    }

    pub fn sample_pair<G: Rng + ?Sized>(&self, rng: &mut G) -> SamplePair {
        self.sample_pair_labeled(rng).0
    }

    /// `b` pairs stacked as `(x0, x1)`, each `[b×d]`.
    pub fn sample_batch<G: Rng + ?Sized>(&self, rng: &mut G, b: usize) -> (Tensor, Tensor) {
        let d = self.dim();
        let mut x0 = Vec::with_capacity(b * d);
        let mut x1 = Vec::with_capacity(b * d);
        for _ in 0..b {
            let p = self.sample_pair(rng);
            x0.extend(p.x0);
            x1.extend(p.x1);
        }
        (
            Tensor::matrix(b, d, x0).expect("batch shape"),
            Tensor::matrix(b, d, x1).expect("batch shape"),
        )
    }

    /// The pair with draw index `index`, a pure function of `(seed, index)`.
    pub fn pair_at(&self, index: u64) -> SamplePair {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        self.sample_pair(&mut rng)
    }

    /// Held-out evaluation pairs: draw indices `0..n`.
    pub fn eval_set(&self, n: usize) -> Vec<SamplePair> {
        (0..n as u64).map(|i| self.pair_at(i)).collect()
    }

    /// Ground-truth path for `pair` on a uniform grid of `grid_len` nodes over `[0, 1]`.
    pub fn reference_path(&self, pair: &SamplePair, grid_len: usize) -> Result<ReferencePath> {
        if grid_len < 2 {
            return Err(Error::Invalid("reference path needs grid_len ≥ 2".into()));
        }
        let d = self.dim();
        let times: Vec<f64> = (0..grid_len)
            .map(|i| i as f64 / (grid_len - 1) as f64)
            .collect();
        let mut data = Vec::with_capacity(grid_len * d);
        match &self.kind {
            TaskKind::Gmm2d { .. } => return Err(Error::NoReferencePath("gmm2d")),
            TaskKind::OdeHarmonic { .. } => {
                for &tau in &times {
                    let f = (-tau).exp();
                    data.extend(pair.x0.iter().map(|v| v * f));
                }
            }
            TaskKind::PointMass { .. } => {
                for &tau in &times {
                    data.extend(pair.x0.iter().zip(&pair.x1).map(|(a, b)| a + tau * (b - a)));
                }
            }
        }
        ReferencePath::new(times, Tensor::matrix(grid_len, d, data)?)
    }
}

/// Stacks pairs into `(x0, x1)` matrices.
pub fn stack_pairs(pairs: &[SamplePair]) -> Result<(Tensor, Tensor)> {
    let b = pairs.len();
    let d = pairs.first().map_or(0, |p| p.x0.len());
    let x0 = pairs.iter().flat_map(|p| p.x0.iter().copied()).collect();
    let x1 = pairs.iter().flat_map(|p| p.x1.iter().copied()).collect();
    Ok((Tensor::matrix(b, d, x0)?, Tensor::matrix(b, d, x1)?))
}
