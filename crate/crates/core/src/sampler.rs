//! One-step and few-step sampling through the inverse update
//! `x_r = x_t − (t − r)·u(x_t, r, t)`, and the path / sample quality metrics.

use alloc::vec::Vec;
use core::cell::Cell;

#[allow(unused_imports)] // needed when built without std
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::meanflow::{AverageVelocity, ReferencePath};
use crate::tasks::{stack_pairs, SamplePair, TaskSpec};

/// Counts `eval_batch` calls on the wrapped field.
#[derive(Debug)]
pub struct CountingField<U> {
    inner: U,
    evals: Cell<usize>,
}

impl<U: AverageVelocity> CountingField<U> {
    pub fn new(inner: U) -> Self {
        Self {
            inner,
            evals: Cell::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evals.get()
    }

    pub fn into_inner(self) -> U {
        self.inner
    }
}

impl<U: AverageVelocity> AverageVelocity for CountingField<U> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        self.evals.set(self.evals.get() + 1);
        self.inner.eval_batch(x, r, t)
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
        self.inner.jvp(x, r, t, dx, dr, dt)
    }
}

fn inverse_step<U: AverageVelocity + ?Sized>(field: &U, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
    let u = field.eval_batch(x, r, t)?;
    let h = t - r;
    Ok(x.zip_map(&u, |xi, ui| xi - h * ui))
}

/// `x0 = x1 − u(x1, 0, 1)`; one field evaluation.
pub fn one_step_sample<U: AverageVelocity + ?Sized>(field: &U, x1: &Tensor) -> Result<Tensor> {
    inverse_step(field, x1, 0.0, 1.0)
}

/// States of a batch at every node of a descending time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FewStepSamples {
    /// `1 = times[0] > … > times[n] = 0`
    pub times: Vec<f64>,
    /// One `[b×d]` state per time node.
    pub nodes: Vec<Tensor>,
}

impl FewStepSamples {
    pub fn endpoint(&self) -> &Tensor {
        self.nodes.last().expect("at least two nodes")
    }

    /// The trajectory of batch row `i`.
    pub fn path(&self, i: usize) -> SamplePath {
        let d = self.nodes[0].cols();
        let data = self.nodes.iter().flat_map(|n| n.row(i).iter().copied()).collect();
        SamplePath {
            times: self.times.clone(),
            states: Tensor::matrix(self.nodes.len(), d, data).expect("path shape"),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.nodes[0].rows()
    }
}

/// Uniform grid `t_k = k/n`, applied from `k = n` down to `0`.
pub fn few_step_sample<U: AverageVelocity + ?Sized>(
    field: &U,
    x1: &Tensor,
    n_steps: usize,
) -> Result<FewStepSamples> {
    if n_steps == 0 {
        return Err(Error::Invalid("few_step_sample needs n_steps ≥ 1".into()));
    }
    let times: Vec<f64> = (0..=n_steps)
        .rev()
        .map(|k| k as f64 / n_steps as f64)
        .collect();
    let mut nodes = Vec::with_capacity(n_steps + 1);
    nodes.push(x1.clone());
    for w in times.windows(2) {
        let next = inverse_step(field, nodes.last().expect("non-empty"), w[1], w[0])?;
        nodes.push(next);
    }
    Ok(FewStepSamples { times, nodes })
}

/// A single generated trajectory from τ = 1 down to τ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Tensor,
}

impl SamplePath {
    pub fn new(times: Vec<f64>, states: Tensor) -> Result<Self> {
        if states.shape().len() != 2 || states.rows() != times.len() {
            return Err(Error::ShapeMismatch {
                op: "sample_path",
                left: alloc::vec![times.len()],
                right: states.shape().to_vec(),
            });
        }
        if times.len() < 2
            || times[0] != 1.0
            || times[times.len() - 1] != 0.0
            || times.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Invalid(
                "sample path times must fall strictly from 1 to 0".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The same nodes as an ascending [`ReferencePath`].
    pub fn to_reference(&self) -> Result<ReferencePath> {
        let n = self.len();
        let d = self.states.cols();
        let times = self.times.iter().rev().copied().collect();
        let data = (0..n)
            .rev()
            .flat_map(|i| self.states.row(i).iter().copied())
            .collect();
        ReferencePath::new(times, Tensor::matrix(n, d, data)?)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over path nodes of the squared distance to the reference at the same time.
pub fn path_deviation(path: &SamplePath, reference: &ReferencePath) -> Result<f64> {
    if reference.dim() != path.states.cols() {
        return Err(Error::ShapeMismatch {
            op: "path_deviation",
            left: path.states.shape().to_vec(),
            right: reference.states().shape().to_vec(),
        });
    }
    let mut total = 0.0;
    for (i, &tau) in path.times.iter().enumerate() {
        let r = reference.state_at(tau)?;
        total += sq_dist(path.states.row(i), &r);
    }
    Ok(total / path.len() as f64)
}

/// Mean squared second difference of the states divided by the squared mean
/// time step.
pub fn smoothness(path: &SamplePath) -> Result<f64> {
    let n = path.len();
    if n < 3 {
        return Err(Error::Invalid("smoothness needs at least three nodes".into()));
    }
    let s = &path.states;
    let mut total = 0.0;
    for i in 1..n - 1 {
        total += s
            .row(i + 1)
            .iter()
            .zip(s.row(i))
            .zip(s.row(i - 1))
            .map(|((a, b), c)| {
                let dd = a - 2.0 * b + c;
                dd * dd
            })
            .sum::<f64>();
    }
    let mean_dt = (path.times[0] - path.times[n - 1]).abs() / (n - 1) as f64;
    Ok(total / (n - 2) as f64 / (mean_dt * mean_dt))
}

/// Mean of `‖one_step_sample(x1) − x0‖²` over rows.
pub fn one_step_mse_on<U: AverageVelocity + ?Sized>(field: &U, x0: &Tensor, x1: &Tensor) -> Result<f64> {
    let est = one_step_sample(field, x1)?;
    let b = x0.rows();
    Ok((0..b).map(|i| sq_dist(est.row(i), x0.row(i))).sum::<f64>() / b as f64)
}

/// [`one_step_mse_on`] over `n_samples` fresh pairs drawn from `task`.
pub fn one_step_mse<U: AverageVelocity + ?Sized, G: Rng + ?Sized>(
    field: &U,
    task: &TaskSpec,
    n_samples: usize,
    rng: &mut G,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Invalid("one_step_mse needs at least one sample".into()));
    }
    let (x0, x1) = task.sample_batch(rng, n_samples);
    one_step_mse_on(field, &x0, &x1)
}

fn mean_pairwise(a: &Tensor, b: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let ai = a.row(i);
        let mut row = 0.0;
        for j in 0..b.rows() {
            row += sq_dist(ai, b.row(j)).sqrt();
        }
        total += row;
    }
    total / (a.rows() * b.rows()) as f64
}

/// `2·E‖A−B‖ − E‖A−A'‖ − E‖B−B'‖` over all pairs (V-statistic, so identical
/// multisets give exactly zero).
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (n, d) = a.require_matrix("energy_distance")?;
    let (m, e) = b.require_matrix("energy_distance")?;
    if d != e {
        return Err(Error::ShapeMismatch {
            op: "energy_distance",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if n < 2 || m < 2 {
        return Err(Error::Invalid("energy_distance needs at least two points per set".into()));
    }
    let v = 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
    Ok(v.max(0.0))
}

fn default_eval_samples() -> usize {
    1000
}
fn default_few_step_ns() -> Vec<usize> {
    alloc::vec![1, 2, 4, 8]
}
fn default_path_steps() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out pairs (draw indices `0..n_samples` of the task).
    #[serde(default = "default_eval_samples")]
    pub n_samples: usize,
    /// Step counts for which sample paths are exported.
    #[serde(default = "default_few_step_ns")]
    pub few_step_ns: Vec<usize>,
    /// Step count of the paths scored by `d_path` and `smoothness`.
    #[serde(default = "default_path_steps")]
    pub path_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: default_eval_samples(),
            few_step_ns: default_few_step_ns(),
            path_steps: default_path_steps(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples: must be at least 2".into()));
        }
        if self.few_step_ns.contains(&0) {
            return Err(Error::Config("few_step_ns: entries must be positive".into()));
        }
        if self.path_steps < 2 {
            return Err(Error::Config("path_steps: must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// Absent for tasks without a ground-truth path.
    pub d_path: Option<f64>,
    pub smoothness: f64,
    pub one_step_mse: f64,
    pub energy_distance: f64,
    /// Field evaluations per generated sample for the scored samples.
    pub nfe: usize,
}

/// Scores `field` on the task's held-out pairs.
pub fn evaluate<U: AverageVelocity + ?Sized>(
    field: &U,
    task: &TaskSpec,
    cfg: &EvalConfig,
) -> Result<PathMetrics> {
    cfg.validate()?;
    let pairs = task.eval_set(cfg.n_samples);
    evaluate_pairs(field, task, &pairs, cfg.path_steps)
}

pub fn evaluate_pairs<U: AverageVelocity + ?Sized>(
    field: &U,
    task: &TaskSpec,
    pairs: &[SamplePair],
    path_steps: usize,
) -> Result<PathMetrics> {
    let (x0, x1) = stack_pairs(pairs)?;
    let counter = CountingField::new(field);
    let generated = one_step_sample(&counter, &x1)?;
    let nfe = counter.evaluations();
    let b = x0.rows();
    let one_step_mse = (0..b).map(|i| sq_dist(generated.row(i), x0.row(i))).sum::<f64>() / b as f64;
    let energy = energy_distance(&generated, &x0)?;

    let paths = few_step_sample(field, &x1, path_steps)?;
    let mut smooth = 0.0;
    for i in 0..b {
        smooth += smoothness(&paths.path(i))?;
    }
    let d_path = if task.has_reference_path() {
        let mut total = 0.0;
        for (i, pair) in pairs.iter().enumerate() {
            let reference = task.reference_path(pair, path_steps + 1)?;
            total += path_deviation(&paths.path(i), &reference)?;
        }
        Some(total / b as f64)
    } else {
        None
    };
    Ok(PathMetrics {
        d_path,
        smoothness: smooth / b as f64,
        one_step_mse,
        energy_distance: energy,
        nfe,
    })
}
