//! The λ-ablation: four gradient regimes trained from paired seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use mmf_core::field::VelocityField;
use mmf_core::objectives::ModulationSchedule;
use mmf_core::sampler::{evaluate, PathMetrics};
use mmf_core::trainer::{loss_variance, train, TrainHalt, TrainLog};

use crate::config::ExperimentConfig;
use crate::formats::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    #[serde(rename = "lambda_0")]
    Lambda0,
    #[serde(rename = "lambda_0.5")]
    LambdaHalf,
    #[serde(rename = "lambda_1")]
    Lambda1,
    #[serde(rename = "curriculum")]
    Curriculum,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lambda0,
        Variant::LambdaHalf,
        Variant::Lambda1,
        Variant::Curriculum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda0 => "lambda_0",
            Self::LambdaHalf => "lambda_0.5",
            Self::Lambda1 => "lambda_1",
            Self::Curriculum => "curriculum",
        }
    }

    pub fn schedule(self, warmup_steps: u64) -> ModulationSchedule {
        match self {
            Self::Lambda0 => ModulationSchedule::Constant { lambda: 0.0 },
            Self::LambdaHalf => ModulationSchedule::Constant { lambda: 0.5 },
            Self::Lambda1 => ModulationSchedule::Constant { lambda: 1.0 },
            Self::Curriculum => ModulationSchedule::Warmup { warmup_steps },
        }
    }
}

/// Warmup length used by the curriculum variant.
pub fn curriculum_warmup(cfg: &ExperimentConfig) -> u64 {
    if let Some(w) = cfg.ablation.warmup_steps {
        return w;
    }
    match cfg.train.schedule {
        ModulationSchedule::Warmup { warmup_steps } => warmup_steps,
        ModulationSchedule::Constant { .. } => (cfg.train.total_steps / 8).max(1),
    }
}

/// The experiment config of one sub-run.
pub fn variant_config(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> ExperimentConfig {
    let mut sub = cfg.clone().with_seed(seed);
    sub.train.schedule = variant.schedule(curriculum_warmup(cfg));
    sub
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub log: TrainLog,
    pub halt: Option<TrainHalt>,
    pub metrics: Option<PathMetrics>,
    pub final_loss: f64,
    pub loss_variance: f64,
    pub field: Option<VelocityField>,
    pub error: Option<String>,
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.halt.is_none() && self.metrics.is_some()
    }
}

pub fn run_variant(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> RunResult {
    let sub = variant_config(cfg, variant, seed);
    let mut result = RunResult {
        variant,
        seed,
        log: TrainLog::default(),
        halt: None,
        metrics: None,
        final_loss: f64::NAN,
        loss_variance: f64::NAN,
        field: None,
        error: None,
    };
    let field = match VelocityField::init(sub.field.clone()) {
        Ok(f) => f,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    let outcome = match train(field, &sub.task, &sub.train) {
        Ok(o) => o,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.final_loss = outcome.log.rows.last().map_or(f64::NAN, |r| r.loss);
    let window = cfg.ablation.variance_window.min(outcome.log.rows.len());
    result.loss_variance = loss_variance(&outcome.log, window).unwrap_or(f64::NAN);
    result.halt = outcome.halt;
    result.log = outcome.log;
    if result.halt.is_none() {
        match evaluate(&outcome.field, &sub.task, &sub.eval) {
            Ok(m) => result.metrics = Some(m),
            Err(e) => result.error = Some(e.to_string()),
        }
    }
    result.field = Some(outcome.field);
    result
}

/// Worker count: available parallelism, capped by `MMF_THREADS` when set.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("MMF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap > 0 => avail.min(cap),
        _ => avail,
    }
}

/// Median of the finite entries; NaN if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub final_loss: f64,
    pub loss_variance: f64,
    pub one_step_mse: f64,
    pub d_path: Option<f64>,
    pub energy_distance: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    /// Ordered by variant, then seed.
    pub runs: Vec<RunResult>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn failures(&self) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| !r.succeeded()).collect()
    }

    pub fn row(&self, variant: Variant) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("every variant has a row")
    }
}

/// Runs every (variant, seed) pair on up to `threads` workers. Results do not
/// depend on the worker count.
pub fn run_ablation(cfg: &ExperimentConfig, threads: usize) -> AblationReport {
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| cfg.ablation.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(variant, seed)) = jobs.get(i) else {
                    break;
                };
                let result = run_variant(cfg, variant, seed);
                slots.lock().expect("no poisoned workers")[i] = Some(result);
            });
        }
    });
    let runs: Vec<RunResult> = slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    let rows = Variant::ALL
        .iter()
        .map(|&variant| {
            let mine: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.variant == variant && r.succeeded())
                .collect();
            let metric = |f: &dyn Fn(&PathMetrics) -> f64| {
                median(&mine.iter().filter_map(|r| r.metrics.as_ref().map(f)).collect::<Vec<_>>())
            };
            let d_path = metric(&|m: &PathMetrics| m.d_path.unwrap_or(f64::NAN));
            AblationRow {
                variant,
                final_loss: median(&mine.iter().map(|r| r.final_loss).collect::<Vec<_>>()),
                loss_variance: median(&mine.iter().map(|r| r.loss_variance).collect::<Vec<_>>()),
                one_step_mse: metric(&|m: &PathMetrics| m.one_step_mse),
                d_path: d_path.is_finite().then_some(d_path),
                energy_distance: metric(&|m: &PathMetrics| m.energy_distance),
            }
        })
        .collect();
    AblationReport { runs, rows }
}

/// `variant,final_loss,loss_variance,one_step_mse,d_path,energy_distance`;
/// an absent `d_path` is an empty cell.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,final_loss,loss_variance,one_step_mse,d_path,energy_distance\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant.name(),
            fmt_f64(r.final_loss),
            fmt_f64(r.loss_variance),
            fmt_f64(r.one_step_mse),
            r.d_path.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.energy_distance)
        ));
    }
    out
}
