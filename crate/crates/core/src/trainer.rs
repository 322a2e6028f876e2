//! Adam with cosine learning-rate decay, λ schedules, telemetry, and
//! checkpoint snapshots.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // needed when built without std
use num_traits::Float;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::objectives::{
    lambda_at, loss_lambda_grad, sample_time_pairs, Interpolation, ModulationSchedule,
    TimePairConfig, TrainingBatch,
};
use crate::tasks::TaskSpec;

/// RNG stream of the `(r, t)` draws.
pub const TIME_STREAM: u64 = 1;
/// RNG stream of the `(x0, x1)` draws.
pub const DATA_STREAM: u64 = 2;

/// `lr0 · ½ · (1 + cos(π·step/total))`
pub fn cosine_lr(lr0: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (PI * frac).cos())
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name}: must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps: must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v2: Vec<Tensor>,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v2: zeros,
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// state and `params` untouched and returns [`Error::NonFinite`].
pub fn adam_step(state: &mut OptimizerState, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: alloc::vec![params.len()],
            right: alloc::vec![grads.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    if grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!(
            "gradient at optimizer step {}",
            state.step
        )));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let k = state.step as f64;
    let c1 = 1.0 - beta1.powf(k);
    let c2 = 1.0 - beta2.powf(k);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v2.iter_mut()))
    {
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// 2-norm over all gradient entries.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn default_log_every() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: ModulationSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot period in steps; 0 keeps only the final snapshot.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub time_pairs: TimePairConfig,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Rescale gradients whose 2-norm exceeds this value.
    #[serde(default)]
    pub clip_grad_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(total_steps: u64, batch_size: usize, lr0: f64, schedule: ModulationSchedule) -> Self {
        Self {
            total_steps,
            batch_size,
            lr0,
            schedule,
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            adam: AdamConfig::default(),
            time_pairs: TimePairConfig::default(),
            interpolation: Interpolation::default(),
            clip_grad_norm: None,
        }
    }

    /// Errors name the offending field (`lr0: ...`).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size: must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0: must be positive, got {}", self.lr0));
        }
        if self.log_every == 0 {
            return bad("log_every: must be positive".into());
        }
        if self.total_steps > 0 && self.log_every > self.total_steps {
            return bad(format!(
                "log_every: {} exceeds total_steps {}",
                self.log_every, self.total_steps
            ));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_grad_norm: must be positive, got {c}"));
            }
        }
        self.schedule.validate().map_err(|e| e.nested("schedule"))?;
        self.adam.validate().map_err(|e| e.nested("adam"))?;
        self.time_pairs.validate().map_err(|e| e.nested("time_pairs"))?;
        Ok(())
    }
}

/// A supplier of `(x0, x1)` training batches.
pub trait PairSource {
    fn dim(&self) -> usize;
    fn sample_batch(&self, rng: &mut dyn RngCore, batch_size: usize) -> (Tensor, Tensor);
}

impl PairSource for TaskSpec {
    fn dim(&self) -> usize {
        TaskSpec::dim(self)
    }

    fn sample_batch(&self, rng: &mut dyn RngCore, batch_size: usize) -> (Tensor, Tensor) {
        TaskSpec::sample_batch(self, rng, batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub step: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub events: Vec<TrainEvent>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

/// Sample variance (denominator `window − 1`) of the last `window` logged losses.
pub fn loss_variance(log: &TrainLog, window: usize) -> Result<f64> {
    if window < 2 {
        return Err(Error::Invalid("loss_variance needs window ≥ 2".into()));
    }
    let n = log.rows.len();
    if window > n {
        return Err(Error::Invalid(format!(
            "loss_variance window {window} exceeds the {n} logged rows"
        )));
    }
    let tail = &log.rows[n - window..];
    let mean = tail.iter().map(|r| r.loss).sum::<f64>() / window as f64;
    Ok(tail.iter().map(|r| (r.loss - mean) * (r.loss - mean)).sum::<f64>() / (window - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    NonFiniteLoss,
    NonFiniteGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHalt {
    pub step: u64,
    pub reason: HaltReason,
    pub loss: f64,
}

/// Parameters after `step` completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub field: M,
    pub log: TrainLog,
    pub checkpoints: Vec<Checkpoint>,
    pub halt: Option<TrainHalt>,
}

/// Test hooks for fault injection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHooks {
    /// Replace the first gradient entry with NaN at this step.
    pub nan_gradient_at: Option<u64>,
}

pub fn train<M: FieldModel, S: PairSource + ?Sized>(
    field: M,
    source: &S,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    train_with_hooks(field, source, cfg, &TrainHooks::default())
}

/// Runs `cfg.total_steps` updates of `L_λ` with `λ = lambda_at(schedule, step)`.
///
/// Row `step` of the log holds the pre-update loss and gradient norm of that
/// step. A non-finite loss or gradient stops training with the log so far
/// and a [`TrainHalt`] record; `Err` is reserved for invalid input.
pub fn train_with_hooks<M: FieldModel, S: PairSource + ?Sized>(
    mut field: M,
    source: &S,
    cfg: &TrainConfig,
    hooks: &TrainHooks,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if source.dim() != field.dim() {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: alloc::vec![field.dim()],
            right: alloc::vec![source.dim()],
        });
    }
    let mut time_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    time_rng.set_stream(TIME_STREAM);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(DATA_STREAM);

    let mut opt = OptimizerState::new(field.params(), cfg.adam);
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let mut halt = None;

    for step in 0..cfg.total_steps {
        let lambda = lambda_at(&cfg.schedule, step);
        let lr = cosine_lr(cfg.lr0, step, cfg.total_steps);
        let (x0, x1) = source.sample_batch(&mut data_rng, cfg.batch_size);
        let (r, t) = sample_time_pairs(&mut time_rng, cfg.batch_size, &cfg.time_pairs)?;
        let batch = TrainingBatch::with_interpolation(x0, x1, r, t, cfg.interpolation)?;
        let mut eval = loss_lambda_grad(&field, &batch, lambda)?;

        if !eval.loss.is_finite() {
            log.events.push(TrainEvent {
                step,
                message: format!("non-finite loss {}", eval.loss),
            });
            halt = Some(TrainHalt {
                step,
                reason: HaltReason::NonFiniteLoss,
                loss: eval.loss,
            });
            break;
        }
        if hooks.nan_gradient_at == Some(step) {
            if let Some(v) = eval.grads.iter_mut().find_map(|g| g.data_mut().first_mut()) {
                *v = f64::NAN;
            }
        }
        let norm = grad_norm(&eval.grads);
        if let Some(c) = cfg.clip_grad_norm {
            if norm > c {
                let s = c / norm;
                for g in &mut eval.grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        if let Err(e) = adam_step(&mut opt, field.params_mut(), &eval.grads, lr) {
            log.events.push(TrainEvent {
                step,
                message: format!("update rejected: {e}"),
            });
            halt = Some(TrainHalt {
                step,
                reason: HaltReason::NonFiniteGradient,
                loss: eval.loss,
            });
            break;
        }
        if step % cfg.log_every == 0 {
            log.rows.push(LogRow {
                step,
                loss: eval.loss,
                grad_norm: norm,
                lambda,
                lr,
            });
        }
        let done = step + 1;
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if periodic || done == cfg.total_steps {
            checkpoints.push(Checkpoint {
                step: done,
                params: field.params().to_vec(),
            });
        }
    }
    Ok(TrainOutcome {
        field,
        log,
        checkpoints,
        halt,
    })
}
