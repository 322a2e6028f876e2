//! Analytic reference flows, average-velocity oracles, and residuals of the
//! average/instantaneous velocity relations.
//!
//! The average velocity of a flow `dx/dt = v(x, t)` over `[r, t]` is
//! `u(x_t, r, t) = (1/(t−r)) ∫_r^t v(x_τ, τ) dτ`. It satisfies
//! `v(x_t, t) = u + (t−r)·du/dt` (with `du/dt = ∂_t u + ∇_x u · v`) and the
//! interval-additivity relation checked by [`consistency_residual`].

mod path;
mod scalar;
pub mod suite;

#[allow(unused_imports)] // needed when built without std
use num_traits::Float;
use alloc::vec::Vec;


pub use path::{rk4_solve, ReferencePath};
pub use scalar::{DualScalar, Real};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Anything that can be evaluated as an average velocity `u(x, r, t)` and
/// differentiated along a direction in `(x, r, t)`.
pub trait AverageVelocity {
    fn dim(&self) -> usize;

    /// Rows of `x: [b×d]` evaluated at the shared times `(r, t)`.
    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor>;

    /// `(u, ∂u·(dx, dr, dt))` at a single point.
    #[allow(clippy::too_many_arguments)]
    fn jvp(
        &self,
        x: &[f64],
        r: f64,
        t: f64,
        dx: &[f64],
        dr: f64,
        dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    fn eval(&self, x: &[f64], r: f64, t: f64) -> Result<Vec<f64>> {
        let row = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.eval_batch(&row, r, t)?.into_data())
    }
}

impl<T: AverageVelocity + ?Sized> AverageVelocity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        (**self).eval_batch(x, r, t)
    }

    fn jvp(
        &self,
        x: &[f64],
        r: f64,
        t: f64,
        dx: &[f64],
        dr: f64,
        dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).jvp(x, r, t, dx, dr, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowKind {
    /// `v(x, t) = c`
    Constant(Vec<f64>),
    /// `v(x, t) = −x`, gradient flow of `½‖x‖²`.
    Harmonic,
}

/// Closed-form reference dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticFlow {
    kind: FlowKind,
    dim: usize,
}

impl AnalyticFlow {
    pub fn constant(c: Vec<f64>) -> Self {
        let dim = c.len();
        Self {
            kind: FlowKind::Constant(c),
            dim,
        }
    }

    pub fn harmonic(dim: usize) -> Self {
        Self {
            kind: FlowKind::Harmonic,
            dim,
        }
    }

    pub fn kind(&self) -> &FlowKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn velocity<R: Real>(&self, x: &[R], _t: R) -> Vec<R> {
        match &self.kind {
            FlowKind::Constant(c) => c.iter().map(|&ci| R::from_f64(ci)).collect(),
            FlowKind::Harmonic => x.iter().map(|&xi| -xi).collect(),
        }
    }

    /// State at `t` of the trajectory through `x_r` at time `r`.
    pub fn trajectory_generic<R: Real>(&self, x_r: &[R], r: R, t: R) -> Vec<R> {
        match &self.kind {
            FlowKind::Constant(c) => x_r
                .iter()
                .zip(c)
                .map(|(&x, &ci)| x + (t - r) * R::from_f64(ci))
                .collect(),
            FlowKind::Harmonic => {
                let decay = (r - t).exp();
                x_r.iter().map(|&x| x * decay).collect()
            }
        }
    }
}

pub fn instantaneous_velocity(flow: &AnalyticFlow, x: &[f64], t: f64) -> Vec<f64> {
    flow.velocity(x, t)
}

/// Exact solution of the flow from `(x_r, r)` to time `t`; `t < r` solves backward.
pub fn trajectory(flow: &AnalyticFlow, x_r: &[f64], r: f64, t: f64) -> Vec<f64> {
    if r == t {
        return x_r.to_vec();
    }
    flow.trajectory_generic(x_r, r, t)
}

/// How the oracle reconstructs the states it integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMethod {
    ClosedForm,
    /// Backward RK4 from `t` to `r` on the quadrature grid.
    Rk4,
}

pub const DEFAULT_QUADRATURE_INTERVALS: usize = 200;

/// True average velocity of an [`AnalyticFlow`] by composite Simpson
/// quadrature along the trajectory ending at `(x_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageVelocityOracle {
    flow: AnalyticFlow,
    intervals: usize,
    method: TrajectoryMethod,
}

impl AverageVelocityOracle {
    pub fn new(flow: AnalyticFlow) -> Self {
        Self::with_intervals(flow, DEFAULT_QUADRATURE_INTERVALS)
    }

    /// `intervals` is rounded up to the next even number (Simpson pairs).
    pub fn with_intervals(flow: AnalyticFlow, intervals: usize) -> Self {
        let intervals = intervals.max(2);
        Self {
            flow,
            intervals: intervals + intervals % 2,
            method: TrajectoryMethod::ClosedForm,
        }
    }

    pub fn with_method(mut self, method: TrajectoryMethod) -> Self {
        self.method = method;
        self
    }

    pub fn flow(&self) -> &AnalyticFlow {
        &self.flow
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn average<R: Real>(&self, x_t: &[R], r: R, t: R) -> Vec<R> {
        let n = self.intervals;
        let h = (t - r) / R::from_f64(n as f64);
        let states: Vec<Vec<R>> = match self.method {
            TrajectoryMethod::ClosedForm => (0..=n)
                .map(|j| {
                    let tau = r + h * R::from_f64(j as f64);
                    self.flow.trajectory_generic(x_t, t, tau)
                })
                .collect(),
            TrajectoryMethod::Rk4 => {
                let v = |x: &[R], tau: R| self.flow.velocity(x, tau);
                let mut nodes = path::rk4_nodes(&v, x_t, t, r, n);
                nodes.reverse();
                nodes
            }
        };
        let d = x_t.len();
        let mut acc = alloc::vec![R::from_f64(0.0); d];
        for (j, x) in states.iter().enumerate() {
            let tau = r + h * R::from_f64(j as f64);
            let w = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let w = R::from_f64(w);
            for (a, vi) in acc.iter_mut().zip(self.flow.velocity(x, tau)) {
                *a = *a + w * vi;
            }
        }
        // (h/3)·S / (t−r) = S / (3n)
        let norm = R::from_f64(1.0 / (3 * n) as f64);
        acc.into_iter().map(|a| a * norm).collect()
    }
}

fn check_interval(r: f64, t: f64) -> Result<()> {
    if t > r {
        Ok(())
    } else {
        Err(Error::TimeOrder(alloc::format!(
            "need r < t, got r={r}, t={t}"
        )))
    }
}

impl AverageVelocity for AverageVelocityOracle {
    fn dim(&self) -> usize {
        self.flow.dim
    }

    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        check_interval(r, t)?;
        let d = x.cols();
        let mut out = Vec::with_capacity(x.numel());
        for i in 0..x.rows() {
            out.extend(self.average(x.row(i), r, t));
        }
        Tensor::matrix(x.rows(), d, out)
    }

    fn jvp(
        &self,
        x: &[f64],
        r: f64,
        t: f64,
        dx: &[f64],
        dr: f64,
        dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_interval(r, t)?;
        let xs: Vec<DualScalar> = x.iter().zip(dx).map(|(&a, &b)| DualScalar::new(a, b)).collect();
        let out = self.average(&xs, DualScalar::new(r, dr), DualScalar::new(t, dt));
        Ok((out.iter().map(|d| d.re).collect(), out.iter().map(|d| d.du).collect()))
    }
}

/// Average velocity with the default quadrature.
pub fn average_velocity_oracle(flow: &AnalyticFlow, x_t: &[f64], r: f64, t: f64) -> Result<Vec<f64>> {
    check_interval(r, t)?;
    Ok(AverageVelocityOracle::new(flow.clone()).average(x_t, r, t))
}

/// Closed forms: `c` for constant flows, `x_t·(1 − e^{t−r})/(t−r)` for harmonic.
pub fn average_velocity_closed_form(flow: &AnalyticFlow, x_t: &[f64], r: f64, t: f64) -> Result<Vec<f64>> {
    check_interval(r, t)?;
    Ok(match &flow.kind {
        FlowKind::Constant(c) => c.clone(),
        FlowKind::Harmonic => {
            let h = t - r;
            let k = -(h.exp_m1()) / h;
            x_t.iter().map(|x| x * k).collect()
        }
    })
}

/// The instantaneous velocity used as an average-velocity field
/// (`u(x, r, t) := v(x, t)`); few-step sampling with it is Euler integration.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantaneousField {
    pub flow: AnalyticFlow,
}

impl AverageVelocity for InstantaneousField {
    fn dim(&self) -> usize {
        self.flow.dim
    }

    fn eval_batch(&self, x: &Tensor, _r: f64, t: f64) -> Result<Tensor> {
        let mut out = Vec::with_capacity(x.numel());
        for i in 0..x.rows() {
            out.extend(self.flow.velocity(x.row(i), t));
        }
        Tensor::matrix(x.rows(), x.cols(), out)
    }

    fn jvp(
        &self,
        x: &[f64],
        _r: f64,
        t: f64,
        dx: &[f64],
        _dr: f64,
        dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let xs: Vec<DualScalar> = x.iter().zip(dx).map(|(&a, &b)| DualScalar::new(a, b)).collect();
        let out = self.flow.velocity(&xs, DualScalar::new(t, dt));
        Ok((out.iter().map(|d| d.re).collect(), out.iter().map(|d| d.du).collect()))
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroField {
    pub dim: usize,
}

impl AverageVelocity for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, x: &Tensor, _r: f64, _t: f64) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }

    fn jvp(
        &self,
        x: &[f64],
        _r: f64,
        _t: f64,
        _dx: &[f64],
        _dr: f64,
        _dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((alloc::vec![0.0; x.len()], alloc::vec![0.0; x.len()]))
    }
}

/// `v(x_t, t) − [u + (t−r)·(∂_t u + ∇_x u · v)]`.
///
/// The bracket comes from one JVP with tangent `(v, 0, 1)` on `(x, r, t)`.
pub fn identity_residual<U: AverageVelocity + ?Sized>(
    u: &U,
    flow: &AnalyticFlow,
    x_t: &[f64],
    r: f64,
    t: f64,
) -> Result<Vec<f64>> {
    identity_residual_with_sign(u, flow, x_t, r, t, 1.0)
}

/// [`identity_residual`] with the bracket multiplied by `bracket_sign`.
/// Only `1.0` gives the true identity; other values exist to check that the
/// residual suite notices a broken bracket.
pub fn identity_residual_with_sign<U: AverageVelocity + ?Sized>(
    u: &U,
    flow: &AnalyticFlow,
    x_t: &[f64],
    r: f64,
    t: f64,
    bracket_sign: f64,
) -> Result<Vec<f64>> {
    check_interval(r, t)?;
    let v = flow.velocity(x_t, t);
    let (uv, du) = u.jvp(x_t, r, t, &v, 0.0, 1.0)?;
    let h = t - r;
    Ok(v.iter()
        .zip(uv.iter().zip(&du))
        .map(|(vi, (ui, di))| vi - (ui + h * bracket_sign * di))
        .collect())
}

/// `(t−r)·u(x_t,r,t) − (s−r)·u(x_s,r,s) − (t−s)·u(x_t,s,t)` with
/// `x_s = x_t − (t−s)·u(x_t,s,t)` taken from the field itself.
pub fn consistency_residual<U: AverageVelocity + ?Sized>(
    u: &U,
    x_t: &[f64],
    r: f64,
    s: f64,
    t: f64,
) -> Result<Vec<f64>> {
    if !(r < s && s < t) {
        return Err(Error::TimeOrder(alloc::format!(
            "need r < s < t, got r={r}, s={s}, t={t}"
        )));
    }
    let u_st = u.eval(x_t, s, t)?;
    let x_s: Vec<f64> = x_t
        .iter()
        .zip(&u_st)
        .map(|(x, v)| x - (t - s) * v)
        .collect();
    let u_rt = u.eval(x_t, r, t)?;
    let u_rs = u.eval(&x_s, r, s)?;
    Ok((0..x_t.len())
        .map(|i| (t - r) * u_rt[i] - (s - r) * u_rs[i] - (t - s) * u_st[i])
        .collect())
}

/// `‖u(x, r, r+ε) − v(x, r)‖`.
pub fn limit_gap<U: AverageVelocity + ?Sized>(
    u: &U,
    flow: &AnalyticFlow,
    x: &[f64],
    r: f64,
    eps: f64,
) -> Result<f64> {
    let uv = u.eval(x, r, r + eps)?;
    let v = flow.velocity(x, r);
    Ok(norm(&uv.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
