//! Training batches and the gradient-modulated MeanFlow objectives.
//!
//! For a batch with target velocity `V = (x1 − x0)/(t − r)` the residual is
//!
//! ```text
//! u(x_t, r, t) + (t − r) · SG_λ[∂_t u + ∇_x u · V] − V
//! ```
//!
//! and the loss is its mean squared norm over rows. The bracket is one JVP of
//! the field with tangent `(V, 0, 1)` on `(x, r, t)`; its primal output is the
//! `u` used in the residual, so the field is evaluated once.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jvp, Dual, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{register_params, FieldModel};

/// Smallest admissible `t − r` and `1 − r`.
pub const MIN_GAP: f64 = 1e-3;

fn default_min_gap() -> f64 {
    MIN_GAP
}

fn default_r_zero_prob() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimePairConfig {
    #[serde(default = "default_min_gap")]
    pub min_gap: f64,
    /// Probability of pinning `r = 0` for a row.
    #[serde(default = "default_r_zero_prob")]
    pub r_zero_prob: f64,
}

impl Default for TimePairConfig {
    fn default() -> Self {
        Self {
            min_gap: MIN_GAP,
            r_zero_prob: default_r_zero_prob(),
        }
    }
}

impl TimePairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_gap >= MIN_GAP && self.min_gap < 0.5) {
            return Err(Error::Config(alloc::format!(
                "min_gap: must lie in [{MIN_GAP}, 0.5), got {}",
                self.min_gap
            )));
        }
        if !(0.0..=1.0).contains(&self.r_zero_prob) {
            return Err(Error::Config(alloc::format!(
                "r_zero_prob: must lie in [0, 1], got {}",
                self.r_zero_prob
            )));
        }
        Ok(())
    }
}

/// Draws `(r, t)` per row with `0 ≤ r < t ≤ 1`, `t − r ≥ min_gap`, `1 − r ≥ min_gap`.
///
/// A row is pinned to `r = 0` with probability `r_zero_prob`, in which case
/// `t` is uniform on `[min_gap, 1]`. Otherwise `(r, t)` is the sorted pair of
/// two uniforms, redrawn until both gaps hold.
pub fn sample_time_pairs<G: Rng + ?Sized>(
    rng: &mut G,
    batch_size: usize,
    cfg: &TimePairConfig,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let g = cfg.min_gap;
    let mut rs = Vec::with_capacity(batch_size);
    let mut ts = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let pin = cfg.r_zero_prob > 0.0 && rng.random::<f64>() < cfg.r_zero_prob;
        let (r, t) = if pin {
            loop {
                let t: f64 = rng.random();
                if t >= g {
                    break (0.0, t);
                }
            }
        } else {
            loop {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                let (r, t) = if a <= b { (a, b) } else { (b, a) };
                if t - r >= g && 1.0 - r >= g {
                    break (r, t);
                }
            }
        };
        rs.push(r);
        ts.push(t);
    }
    Ok((Tensor::vector(rs), Tensor::vector(ts)))
}

/// Mixing weight of the interpolant `x_t = (1−α)·x0 + α·x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `α = (t − r)/(1 − r)`
    #[default]
    IntervalFraction,
    /// `α = t`
    Time,
}

impl Interpolation {
    pub fn alpha(self, r: f64, t: f64) -> Result<f64> {
        match self {
            Self::IntervalFraction => {
                if 1.0 - r < MIN_GAP {
                    return Err(Error::TimeOrder(alloc::format!(
                        "1 − r = {} is below the minimum gap",
                        1.0 - r
                    )));
                }
                Ok((t - r) / (1.0 - r))
            }
            Self::Time => Ok(t),
        }
    }
}

fn check_batch(x0: &Tensor, x1: &Tensor, r: &Tensor, t: &Tensor) -> Result<(usize, usize)> {
    let (b, d) = x0.require_matrix("batch")?;
    if x1.shape() != x0.shape() {
        return Err(Error::ShapeMismatch {
            op: "batch",
            left: x0.shape().to_vec(),
            right: x1.shape().to_vec(),
        });
    }
    for v in [r, t] {
        if v.shape() != [b] {
            return Err(Error::ShapeMismatch {
                op: "batch",
                left: vec![b],
                right: v.shape().to_vec(),
            });
        }
    }
    Ok((b, d))
}

/// `x_t = (1−α)·x0 + α·x1` rowwise with `α = (t−r)/(1−r)`.
pub fn interpolate(x0: &Tensor, x1: &Tensor, r: &Tensor, t: &Tensor) -> Result<Tensor> {
    interpolate_with(x0, x1, r, t, Interpolation::IntervalFraction)
}

pub fn interpolate_with(
    x0: &Tensor,
    x1: &Tensor,
    r: &Tensor,
    t: &Tensor,
    convention: Interpolation,
) -> Result<Tensor> {
    let (b, d) = check_batch(x0, x1, r, t)?;
    let mut out = Vec::with_capacity(b * d);
    for i in 0..b {
        let a = convention.alpha(r.data()[i], t.data()[i])?;
        out.extend(
            x0.row(i)
                .iter()
                .zip(x1.row(i))
                .map(|(p, q)| (1.0 - a) * p + a * q),
        );
    }
    Tensor::matrix(b, d, out)
}

/// `(x1 − x0)/(t − r)` rowwise. Plain data: never part of a graph.
pub fn target_velocity(x0: &Tensor, x1: &Tensor, r: &Tensor, t: &Tensor) -> Result<Tensor> {
    let (b, d) = check_batch(x0, x1, r, t)?;
    let mut out = Vec::with_capacity(b * d);
    for i in 0..b {
        let h = t.data()[i] - r.data()[i];
        if !(h >= MIN_GAP) {
            return Err(Error::TimeOrder(alloc::format!(
                "t − r = {h} is below the minimum gap {MIN_GAP}"
            )));
        }
        out.extend(x0.row(i).iter().zip(x1.row(i)).map(|(p, q)| (q - p) / h));
    }
    Tensor::matrix(b, d, out)
}

/// One batch of `(x0, x1, r, t, x_t)` plus its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub r: Tensor,
    pub t: Tensor,
    pub x_t: Tensor,
    target: Tensor,
}

impl TrainingBatch {
    pub fn new(x0: Tensor, x1: Tensor, r: Tensor, t: Tensor) -> Result<Self> {
        Self::with_interpolation(x0, x1, r, t, Interpolation::default())
    }

    pub fn with_interpolation(
        x0: Tensor,
        x1: Tensor,
        r: Tensor,
        t: Tensor,
        convention: Interpolation,
    ) -> Result<Self> {
        let x_t = interpolate_with(&x0, &x1, &r, &t, convention)?;
        let target = target_velocity(&x0, &x1, &r, &t)?;
        Ok(Self {
            x0,
            x1,
            r,
            t,
            x_t,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }

    /// `t − r` per row.
    pub fn gaps(&self) -> Tensor {
        self.t.zip_map(&self.r, |t, r| t - r)
    }
}

/// λ as a function of the training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulationSchedule {
    Constant { lambda: f64 },
    /// `min(1, step / warmup_steps)`
    Warmup { warmup_steps: u64 },
}

impl ModulationSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant { lambda } if !(0.0..=1.0).contains(&lambda) => Err(Error::Config(
                alloc::format!("lambda: must lie in [0, 1], got {lambda}"),
            )),
            Self::Warmup { warmup_steps: 0 } => {
                Err(Error::Config("warmup_steps: must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn lambda_at(schedule: &ModulationSchedule, step: u64) -> f64 {
    match *schedule {
        ModulationSchedule::Constant { lambda } => lambda,
        ModulationSchedule::Warmup { warmup_steps } => {
            if step >= warmup_steps {
                1.0
            } else {
                step as f64 / warmup_steps as f64
            }
        }
    }
}

/// What the bracket's `∇_x u` is contracted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketDirection {
    /// The regression target `(x1 − x0)/(t − r)`.
    Target,
    /// The field's own output `u_θ`, graph-attached.
    Field,
}

/// Records the modulated residual loss on `tape` and returns the scalar node.
pub fn modulated_loss<M: FieldModel + ?Sized>(
    tape: &mut Tape,
    params: &[Var],
    model: &M,
    batch: &TrainingBatch,
    direction: BracketDirection,
    lambda: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    let b = batch.len();
    let x = tape.constant(batch.x_t.clone());
    let r = tape.constant(batch.r.clone());
    let t = tape.constant(batch.t.clone());
    let target = tape.constant(batch.target.clone());
    let ones = tape.constant(Tensor::full(&[b], 1.0));

    let x_tangent = match direction {
        BracketDirection::Target => target,
        BracketDirection::Field => {
            if !tape.supports_second_order() {
                return Err(Error::SecondOrderDisabled);
            }
            model
                .forward_dual(
                    tape,
                    params,
                    Dual::constant(x),
                    Dual::constant(r),
                    Dual::constant(t),
                )?
                .primal
        }
    };
    let attach = lambda > 0.0;
    let (u, bracket) = jvp(
        tape,
        &[x, r, t],
        &[Some(x_tangent), None, Some(ones)],
        attach,
        |tape, a| model.forward_dual(tape, params, a[0], a[1], a[2]),
    )?;
    let bracket = tape.sg_lambda(bracket, lambda)?;
    let gap = tape.constant(batch.gaps());
    let scaled = tape.mul_rows(bracket, gap)?;
    let pred = tape.add(u, scaled)?;
    let res = tape.sub(pred, target)?;
    let sq = tape.square(res);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// `L_λ`: bracket along the target, mixed through `SG_λ`.
pub fn loss_lambda<M: FieldModel + ?Sized>(
    tape: &mut Tape,
    params: &[Var],
    model: &M,
    batch: &TrainingBatch,
    lambda: f64,
) -> Result<Var> {
    modulated_loss(tape, params, model, batch, BracketDirection::Target, lambda)
}

/// `L_full`: bracket along `u_θ` itself, everything attached.
pub fn loss_full<M: FieldModel + ?Sized>(
    tape: &mut Tape,
    params: &[Var],
    model: &M,
    batch: &TrainingBatch,
) -> Result<Var> {
    modulated_loss(tape, params, model, batch, BracketDirection::Field, 1.0)
}

/// Loss value and parameter gradients from one record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

pub fn evaluate_loss<M: FieldModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    direction: BracketDirection,
    lambda: f64,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let params = register_params(&mut tape, model);
    let loss = modulated_loss(&mut tape, &params, model, batch, direction, lambda)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok(LossEval {
        loss: value,
        grads: params
            .iter()
            .map(|&p| grads.get(p).cloned().expect("parameters are leaves"))
            .collect(),
    })
}

pub fn loss_lambda_grad<M: FieldModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    lambda: f64,
) -> Result<LossEval> {
    evaluate_loss(model, batch, BracketDirection::Target, lambda)
}

pub fn loss_full_grad<M: FieldModel + ?Sized>(model: &M, batch: &TrainingBatch) -> Result<LossEval> {
    evaluate_loss(model, batch, BracketDirection::Field, 1.0)
}

/// Loss value only; no gradients are formed.
pub fn loss_lambda_value<M: FieldModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    lambda: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model
        .params()
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let loss = loss_lambda(&mut tape, &params, model, batch, lambda)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let x0 = col(&[0.0, 0.0, 0.0]);
        let x1 = col(&[2.0, 2.0, 2.0]);
        let r = Tensor::vector(vec![0.3, 0.0, 0.0]);
        let t = Tensor::vector(vec![0.3, 1.0, 0.5]);
        let xt = interpolate(&x0, &x1, &r, &t).unwrap();
        assert_eq!(xt.data(), &[0.0, 2.0, 1.0]);
    }

    #[test]
    fn interpolation_rejects_r_near_one() {
        let x = col(&[1.0]);
        let r = Tensor::vector(vec![0.9995]);
        let t = Tensor::vector(vec![1.0]);
        assert!(interpolate(&x, &x, &r, &t).is_err());
    }

    #[test]
    fn time_convention() {
        let xt = interpolate_with(
            &col(&[0.0]),
            &col(&[4.0]),
            &Tensor::vector(vec![0.5]),
            &Tensor::vector(vec![0.75]),
            Interpolation::Time,
        )
        .unwrap();
        assert_eq!(xt.data(), &[3.0]);
    }

    #[test]
    fn targets() {
        let x0 = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let x1 = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let r = Tensor::vector(vec![0.1, 0.25]);
        let t = Tensor::vector(vec![0.9, 0.75]);
        let v = target_velocity(&x0, &x1, &r, &t).unwrap();
        assert_eq!(v.data(), &[0.0, 0.0, 2.0, 0.0]);

        // homogeneity: doubling displacement and gap
        let a = target_velocity(&col(&[0.0]), &col(&[0.3]), &Tensor::vector(vec![0.0]), &Tensor::vector(vec![0.2])).unwrap();
        let b = target_velocity(&col(&[0.0]), &col(&[0.6]), &Tensor::vector(vec![0.0]), &Tensor::vector(vec![0.4])).unwrap();
        assert!((a.item() - b.item()).abs() < 1e-15);
    }

    #[test]
    fn target_gap_checked() {
        let x = col(&[1.0]);
        let r = Tensor::vector(vec![0.5]);
        let t = Tensor::vector(vec![0.5005]);
        assert!(matches!(target_velocity(&x, &x, &r, &t), Err(Error::TimeOrder(_))));
    }

    #[test]
    fn schedule_values() {
        let w = ModulationSchedule::Warmup {
            warmup_steps: 100_000,
        };
        assert_eq!(lambda_at(&w, 50_000), 0.5);
        assert_eq!(lambda_at(&w, 0), 0.0);
        assert_eq!(lambda_at(&w, 200_000), 1.0);
        assert_eq!(lambda_at(&w, 100_000), 1.0);
        let c = ModulationSchedule::Constant { lambda: 0.3 };
        assert_eq!(lambda_at(&c, 12345), 0.3);
        assert!(ModulationSchedule::Constant { lambda: 1.1 }.validate().is_err());
        assert!(ModulationSchedule::Warmup { warmup_steps: 0 }.validate().is_err());
    }

    #[test]
    fn pinned_r_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TimePairConfig {
            min_gap: 1e-3,
            r_zero_prob: 1.0,
        };
        let (r, t) = sample_time_pairs(&mut rng, 1000, &cfg).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert!(t.data().iter().all(|&v| (1e-3..=1.0).contains(&v)));
        // uniform on [g, 1]: mean ≈ 0.5
        let mean = t.sum() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn bad_time_config_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TimePairConfig {
            min_gap: 1e-4,
            r_zero_prob: 0.0,
        };
        assert!(sample_time_pairs(&mut rng, 4, &cfg).is_err());
    }
}
