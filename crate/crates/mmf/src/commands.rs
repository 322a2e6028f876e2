//! The `mmf` subcommands.

use std::path::PathBuf;

use serde::Serialize;

use mmf_core::autodiff::Tensor;
use mmf_core::field::{FieldConfig, VelocityField};
use mmf_core::meanflow::suite::{run_oracle_suite, CheckOutcome, OracleSuiteConfig};
use mmf_core::sampler::{evaluate, few_step_sample};
use mmf_core::tasks::stack_pairs;
use mmf_core::trainer::train;

use crate::ablation::{ablation_csv, run_ablation, worker_threads};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{pairs_csv, path_csv, read_checkpoint, train_log_csv, CheckpointFile};
use crate::manifest::RunDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Sample,
    Diagnose,
    Ablation,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Eval => "eval",
            Self::Sample => "sample",
            Self::Diagnose => "diagnose",
            Self::Ablation => "ablation",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandArgs {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Number of nodes of the exported ground-truth path.
const REFERENCE_EXPORT_NODES: usize = 101;

fn load_config(args: &CommandArgs) -> CliResult<ExperimentConfig> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    Ok(match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn output_root(args: &CommandArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step}.json")
}

pub fn cmd_train(args: &CommandArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let mut dir = RunDir::create(&output_root(args, &cfg), "train", cfg.hash(), cfg.train.seed)?;
    dir.write("config.json", cfg.canonical_json())?;
    let field = VelocityField::init(cfg.field.clone())?;
    let outcome = train(field, &cfg.task, &cfg.train)?;
    dir.write("train_log.csv", train_log_csv(&outcome.log.rows))?;
    for ck in &outcome.checkpoints {
        let file = CheckpointFile::new(cfg.field.clone(), ck.params.clone(), ck.step);
        dir.write(&checkpoint_name(ck.step), file.to_json())?;
    }
    if !outcome.log.events.is_empty() || outcome.halt.is_some() {
        #[derive(Serialize)]
        struct Events<'a> {
            events: &'a [mmf_core::trainer::TrainEvent],
            halt: &'a Option<mmf_core::trainer::TrainHalt>,
        }
        dir.write_json(
            "events.json",
            &Events {
                events: &outcome.log.events,
                halt: &outcome.halt,
            },
        )?;
    }
    match outcome.halt {
        Some(h) => {
            dir.finish("halted")?;
            Err(CliError::Halt(format!(
                "{:?} at step {} (loss {})",
                h.reason, h.step, h.loss
            )))
        }
        None => {
            let last = outcome.log.rows.last();
            println!(
                "trained {} steps; final logged loss {}",
                cfg.train.total_steps,
                last.map_or("n/a".into(), |r| r.loss.to_string())
            );
            dir.finish("ok")?;
            Ok(())
        }
    }
}

/// Whether a checkpoint's architecture matches the configured field.
fn compatible(stored: &FieldConfig, wanted: &FieldConfig) -> bool {
    stored.layer_dims() == wanted.layer_dims()
        && stored.time_embed_dim == wanted.time_embed_dim
        && stored.base_frequency.to_bits() == wanted.base_frequency.to_bits()
}

fn load_field(args: &CommandArgs, cfg: &ExperimentConfig) -> CliResult<VelocityField> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("--checkpoint is required".into()))?;
    let file = read_checkpoint(path)?;
    if !compatible(&file.config, &cfg.field) {
        return Err(CliError::Config(format!(
            "checkpoint {}: layer shapes {:?} do not match the configured field {:?}",
            path.display(),
            file.config.layer_dims(),
            cfg.field.layer_dims()
        )));
    }
    file.into_field()
}

pub fn cmd_eval(args: &CommandArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let field = load_field(args, &cfg)?;
    let mut dir = RunDir::create(&output_root(args, &cfg), "eval", cfg.hash(), cfg.train.seed)?;
    let metrics = evaluate(&field, &cfg.task, &cfg.eval)?;
    dir.write_json("metrics.json", &metrics)?;

    let pair = cfg.task.pair_at(0);
    let x1 = Tensor::matrix(1, pair.x1.len(), pair.x1.clone())?;
    for &n in &cfg.eval.few_step_ns {
        let path = few_step_sample(&field, &x1, n)?.path(0);
        dir.write(&format!("path_n{n}.csv"), path_csv(&path.times, &path.states))?;
    }
    if cfg.task.has_reference_path() {
        let reference = cfg.task.reference_path(&pair, REFERENCE_EXPORT_NODES)?;
        dir.write("reference_path.csv", path_csv(reference.times(), reference.states()))?;
    }
    println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
    dir.finish("ok")?;
    Ok(())
}

pub fn cmd_sample(args: &CommandArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let field = load_field(args, &cfg)?;
    let mut dir = RunDir::create(&output_root(args, &cfg), "sample", cfg.hash(), cfg.train.seed)?;
    let (x0, x1) = stack_pairs(&cfg.task.eval_set(cfg.eval.n_samples))?;
    dir.write("eval_set.csv", pairs_csv(&x0, &x1))?;
    for &n in &cfg.eval.few_step_ns {
        let samples = few_step_sample(&field, &x1, n)?;
        dir.write(&format!("samples_n{n}.csv"), pairs_csv(samples.endpoint(), &x1))?;
    }
    dir.finish("ok")?;
    Ok(())
}

pub fn diagnose_table(cfg: &OracleSuiteConfig, outcomes: &[CheckOutcome]) -> String {
    let mut out = format!(
        "oracle suite: {} samples, dim {}, min_gap {:e}\n",
        cfg.samples, cfg.dim, cfg.min_gap
    );
    out.push_str(&format!(
        "{:<22} {:>12} {:>12}  result\n",
        "check", "value", "tolerance"
    ));
    for c in outcomes {
        out.push_str(&format!(
            "{:<22} {:>12.3e} {:>12.3e}  {}\n",
            c.name,
            c.value,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

pub fn cmd_diagnose(args: &CommandArgs) -> CliResult<()> {
    let (suite_cfg, hash, seed) = match &args.config {
        Some(_) => {
            let cfg = load_config(args)?;
            (cfg.diagnose.clone(), cfg.hash(), cfg.train.seed)
        }
        None => (OracleSuiteConfig::default(), String::new(), 0),
    };
    let suite_cfg = match args.seed {
        Some(s) => OracleSuiteConfig { seed: s, ..suite_cfg },
        None => suite_cfg,
    };
    let outcomes = run_oracle_suite(&suite_cfg)?;
    print!("{}", diagnose_table(&suite_cfg, &outcomes));
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Row<'a> {
            name: &'a str,
            value: f64,
            tolerance: f64,
            passed: bool,
        }
        let rows: Vec<Row> = outcomes
            .iter()
            .map(|c| Row {
                name: c.name,
                value: c.value,
                tolerance: c.tolerance,
                passed: c.passed,
            })
            .collect();
        let mut dir = RunDir::create(out, "diagnose", hash, seed)?;
        dir.write_json("diagnose.json", &rows)?;
        let status = if outcomes.iter().all(|c| c.passed) { "ok" } else { "failed" };
        dir.finish(status)?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

pub fn cmd_ablation(args: &CommandArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let mut dir = RunDir::create(&output_root(args, &cfg), "ablation", cfg.hash(), cfg.train.seed)?;
    dir.write("config.json", cfg.canonical_json())?;
    let report = run_ablation(&cfg, worker_threads());
    for run in &report.runs {
        let sub = format!("runs/{}_seed{}", run.variant.name(), run.seed);
        dir.write(&format!("{sub}/train_log.csv"), train_log_csv(&run.log.rows))?;
        if let Some(m) = &run.metrics {
            dir.write_json(&format!("{sub}/metrics.json"), m)?;
        }
    }
    let csv = ablation_csv(&report.rows);
    dir.write("ablation.csv", &csv)?;
    print!("{csv}");
    let failures = report.failures();
    if failures.is_empty() {
        dir.finish("ok")?;
        Ok(())
    } else {
        dir.finish("failed")?;
        let names: Vec<String> = failures
            .iter()
            .map(|r| {
                let why = r
                    .error
                    .clone()
                    .or_else(|| r.halt.as_ref().map(|h| format!("{:?} at step {}", h.reason, h.step)))
                    .unwrap_or_default();
                format!("{} seed {}: {why}", r.variant.name(), r.seed)
            })
            .collect();
        Err(CliError::Check(names.join("; ")))
    }
}

pub fn run(command: Command, args: &CommandArgs) -> CliResult<()> {
    match command {
        Command::Train => cmd_train(args),
        Command::Eval => cmd_eval(args),
        Command::Sample => cmd_sample(args),
        Command::Diagnose => cmd_diagnose(args),
        Command::Ablation => cmd_ablation(args),
    }
}

/// Runs `command` and maps the outcome to the process exit code, reporting
/// any error on stderr.
pub fn run_to_exit_code(command: Command, args: &CommandArgs) -> i32 {
    match run(command, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmf {}: {e}", command.name());
            e.exit_code()
        }
    }
}
