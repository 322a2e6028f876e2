use alloc::vec::Vec;

use super::scalar::Real;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Time-indexed states on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    times: Vec<f64>,
    states: Tensor,
}

impl ReferencePath {
    pub fn new(times: Vec<f64>, states: Tensor) -> Result<Self> {
        if states.shape().len() != 2 || states.rows() != times.len() {
            return Err(Error::ShapeMismatch {
                op: "reference_path",
                left: alloc::vec![times.len()],
                right: states.shape().to_vec(),
            });
        }
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(
                "reference path times must be strictly increasing with at least two nodes".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// State at `tau`, linearly interpolated between grid nodes.
    pub fn state_at(&self, tau: f64) -> Result<Vec<f64>> {
        if tau < self.start() || tau > self.end() {
            return Err(Error::Invalid(alloc::format!(
                "time {tau} outside reference span [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let hi = self.times.partition_point(|&s| s < tau);
        if hi < self.times.len() && self.times[hi] == tau {
            return Ok(self.states.row(hi).to_vec());
        }
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let w = (tau - t0) / (t1 - t0);
        Ok(self
            .states
            .row(lo)
            .iter()
            .zip(self.states.row(hi))
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }
}

/// Classical fourth-order Runge-Kutta with `steps` uniform steps, every node
/// returned (both endpoints included). `t_end < t_start` integrates backward.
pub(crate) fn rk4_nodes<R, V>(v: &V, x_start: &[R], t_start: R, t_end: R, steps: usize) -> Vec<Vec<R>>
where
    R: Real,
    V: Fn(&[R], R) -> Vec<R>,
{
    let h = (t_end - t_start) / R::from_f64(steps as f64);
    let half = R::from_f64(0.5);
    let two = R::from_f64(2.0);
    let sixth = R::from_f64(1.0 / 6.0);
    let axpy = |x: &[R], k: &[R], a: R| -> Vec<R> {
        x.iter().zip(k).map(|(&xi, &ki)| xi + a * ki).collect()
    };
    let mut nodes = Vec::with_capacity(steps + 1);
    let mut x = x_start.to_vec();
    nodes.push(x.clone());
    for i in 0..steps {
        let t = t_start + h * R::from_f64(i as f64);
        let k1 = v(&x, t);
        let k2 = v(&axpy(&x, &k1, half * h), t + half * h);
        let k3 = v(&axpy(&x, &k2, half * h), t + half * h);
        let k4 = v(&axpy(&x, &k3, h), t + h);
        x = (0..x.len())
            .map(|j| x[j] + h * sixth * (k1[j] + two * k2[j] + two * k3[j] + k4[j]))
            .collect();
        nodes.push(x.clone());
    }
    nodes
}

/// Integrates `dx/dt = v(x, t)` from `t_start` to `t_end`.
///
/// The returned path is always stored on an ascending time grid, so a
/// backward solve comes back reversed.
pub fn rk4_solve<V>(v: V, x_start: &[f64], t_start: f64, t_end: f64, steps: usize) -> Result<ReferencePath>
where
    V: Fn(&[f64], f64) -> Vec<f64>,
{
    if steps == 0 {
        return Err(Error::Invalid("rk4_solve needs at least one step".into()));
    }
    if t_start == t_end {
        return Err(Error::Invalid("rk4_solve needs a non-empty interval".into()));
    }
    let mut nodes = rk4_nodes(&v, x_start, t_start, t_end, steps);
    let h = (t_end - t_start) / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|i| t_start + h * i as f64).collect();
    times[steps] = t_end;
    if t_end < t_start {
        times.reverse();
        nodes.reverse();
    }
    let d = x_start.len();
    let data = nodes.into_iter().flatten().collect();
    ReferencePath::new(times, Tensor::matrix(steps + 1, d, data)?)
}
