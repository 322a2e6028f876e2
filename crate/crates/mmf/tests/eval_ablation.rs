mod common;

use std::path::Path;

use common::{list_files, sha256_file, small_harmonic, write_config};
use mmf::ablation::{curriculum_warmup, Variant};
use mmf::commands::{run_to_exit_code, Command, CommandArgs};
use mmf::config::ExperimentConfig;
use mmf::formats::{parse_pairs_csv, parse_train_log_csv, CheckpointFile};
use mmf::manifest::{RunManifest, MANIFEST_NAME};
use mmf_core::autodiff::Tensor;
use mmf_core::field::FieldConfig;
use mmf_core::objectives::lambda_at;
use mmf_core::sampler::PathMetrics;

const E: f64 = std::f64::consts::E;

fn read_metrics(dir: &Path) -> PathMetrics {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

/// Parameters of the configured shape that compute `u ≈ (1 − e)·x`, the
/// harmonic average velocity over `[0, 1]`, through a near-linear tanh unit.
fn harmonic_unit_interval_params(cfg: &FieldConfig) -> Vec<Tensor> {
    let eps = 1e-4;
    let dims = cfg.layer_dims();
    let mut params = Vec::new();
    for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let mut w = Tensor::zeros(&[fan_in, fan_out]);
        w.data_mut()[0] = if i == 0 {
            eps
        } else if i + 1 == dims.len() {
            (1.0 - E) / eps
        } else {
            1.0
        };
        params.push(w);
        params.push(Tensor::zeros(&[fan_out]));
    }
    params
}

fn setup(noise: f64) -> (tempfile::TempDir, std::path::PathBuf, ExperimentConfig) {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_harmonic(10, &tmp.path().join("unused"))
        .replace("\"endpoint_noise_std\": 0.01", &format!("\"endpoint_noise_std\": {noise:?}"));
    let cfg_path = write_config(tmp.path(), &text);
    let cfg = ExperimentConfig::parse(&text).unwrap();
    (tmp, cfg_path, cfg)
}

fn eval_args(cfg: &Path, ckpt: &Path, out: &Path) -> CommandArgs {
    CommandArgs {
        config: Some(cfg.to_path_buf()),
        checkpoint: Some(ckpt.to_path_buf()),
        out: Some(out.to_path_buf()),
        seed: None,
    }
}

#[test]
fn oracle_equivalent_checkpoint_is_exact_in_one_step() {
    let (tmp, cfg_path, cfg) = setup(0.0);
    let ckpt = tmp.path().join("oracle.json");
    let file = CheckpointFile::new(cfg.field.clone(), harmonic_unit_interval_params(&cfg.field), 0);
    std::fs::write(&ckpt, file.to_json()).unwrap();
    let digest = sha256_file(&ckpt);

    let out = tmp.path().join("eval");
    assert_eq!(run_to_exit_code(Command::Eval, &eval_args(&cfg_path, &ckpt, &out)), 0);
    let metrics = read_metrics(&out);
    assert!(metrics.one_step_mse <= 1e-8, "{}", metrics.one_step_mse);
    assert_eq!(metrics.nfe, 1);
    assert_eq!(sha256_file(&ckpt), digest);

    for n in [1, 2, 4] {
        assert!(out.join(format!("path_n{n}.csv")).exists());
    }
    let mut listed = read_manifest(&out).artifacts;
    listed.sort();
    assert_eq!(listed, list_files(&out));
}

#[test]
fn zero_field_metrics_match_closed_form() {
    let (tmp, cfg_path, cfg) = setup(0.01);
    let zeros: Vec<Tensor> = cfg
        .field
        .layer_dims()
        .iter()
        .flat_map(|&(i, o)| [Tensor::zeros(&[i, o]), Tensor::zeros(&[o])])
        .collect();
    let ckpt = tmp.path().join("zero.json");
    std::fs::write(&ckpt, CheckpointFile::new(cfg.field.clone(), zeros, 0).to_json()).unwrap();
    let out = tmp.path().join("eval");
    assert_eq!(run_to_exit_code(Command::Eval, &eval_args(&cfg_path, &ckpt, &out)), 0);
    let metrics = read_metrics(&out);

    // The sampler never moves: every node sits at x1 while the true path is
    // x0·e^{−τ} on the grid τ = k/8.
    let pairs = cfg.task.eval_set(cfg.eval.n_samples);
    let n = pairs.len() as f64;
    let steps = cfg.eval.path_steps;
    let mse = pairs.iter().map(|p| (p.x1[0] - p.x0[0]).powi(2)).sum::<f64>() / n;
    let d_path = pairs
        .iter()
        .map(|p| {
            (0..=steps)
                .map(|k| (p.x0[0] * (-(k as f64) / steps as f64).exp() - p.x1[0]).powi(2))
                .sum::<f64>()
                / (steps + 1) as f64
        })
        .sum::<f64>()
        / n;
    assert!((metrics.one_step_mse - mse).abs() <= 1e-12 * mse);
    let got = metrics.d_path.unwrap();
    assert!((got - d_path).abs() <= 1e-12 * d_path, "{got} vs {d_path}");
    assert_eq!(metrics.smoothness, 0.0);

    let out = tmp.path().join("sample");
    assert_eq!(run_to_exit_code(Command::Sample, &eval_args(&cfg_path, &ckpt, &out)), 0);
    let (generated, x1) = parse_pairs_csv(&std::fs::read_to_string(out.join("samples_n4.csv")).unwrap()).unwrap();
    assert_eq!(generated, x1);
    let (_, eval_x1) = parse_pairs_csv(&std::fs::read_to_string(out.join("eval_set.csv")).unwrap()).unwrap();
    assert_eq!(eval_x1, x1);
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let (tmp, cfg_path, cfg) = setup(0.01);
    let mut other = cfg.field.clone();
    other.hidden_widths = vec![4];
    let field = mmf_core::field::VelocityField::init(other).unwrap();
    let ckpt = tmp.path().join("narrow.json");
    std::fs::write(&ckpt, CheckpointFile::from_field(&field, 0).to_json()).unwrap();
    let out = tmp.path().join("eval");
    assert_eq!(run_to_exit_code(Command::Eval, &eval_args(&cfg_path, &ckpt, &out)), 2);
    assert_eq!(
        run_to_exit_code(Command::Eval, &eval_args(&cfg_path, &tmp.path().join("missing.json"), &out)),
        1
    );
}

#[test]
fn trained_checkpoint_evaluates() {
    let (tmp, cfg_path, _) = setup(0.01);
    let run = tmp.path().join("train");
    let args = CommandArgs {
        config: Some(cfg_path.clone()),
        out: Some(run.clone()),
        ..CommandArgs::default()
    };
    assert_eq!(run_to_exit_code(Command::Train, &args), 0);
    let out = tmp.path().join("eval");
    assert_eq!(run_to_exit_code(Command::Eval, &eval_args(&cfg_path, &run.join("ckpt_10.json"), &out)), 0);
    let metrics = read_metrics(&out);
    assert!(metrics.one_step_mse.is_finite());
    assert!(metrics.d_path.unwrap().is_finite());
    assert!(out.join("reference_path.csv").exists());
}

#[test]
fn ablation_emits_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablation");
    let text = small_harmonic(12, &out);
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let cfg_path = write_config(tmp.path(), &text);
    let args = CommandArgs {
        config: Some(cfg_path),
        ..CommandArgs::default()
    };
    assert_eq!(run_to_exit_code(Command::Ablation, &args), 0);

    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,final_loss,loss_variance,one_step_mse,d_path,energy_distance");
    assert_eq!(lines.len(), 5);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["lambda_0", "lambda_0.5", "lambda_1", "curriculum"]);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6));

    let warmup = curriculum_warmup(&cfg);
    assert_eq!(warmup, 4);
    for variant in Variant::ALL {
        let schedule = variant.schedule(warmup);
        for seed in &cfg.ablation.seeds {
            let log = std::fs::read_to_string(out.join(format!("runs/{}_seed{seed}/train_log.csv", variant.name())))
                .unwrap();
            let rows = parse_train_log_csv(&log).unwrap();
            assert_eq!(rows.len(), 12);
            for row in rows {
                assert_eq!(row.lambda, lambda_at(&schedule, row.step), "{}", variant.name());
            }
        }
    }

    let mut listed = read_manifest(&out).artifacts;
    listed.sort();
    assert_eq!(listed, list_files(&out));
}

#[test]
fn ablation_pairs_seeds_across_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablation");
    let cfg = ExperimentConfig::parse(&small_harmonic(6, &out)).unwrap();
    let report = mmf::ablation::run_ablation(&cfg, 1);
    assert!(report.failures().is_empty());
    for seed in &cfg.ablation.seeds {
        let first: Vec<f64> = Variant::ALL
            .iter()
            .map(|&v| {
                let run = report.runs.iter().find(|r| r.variant == v && r.seed == *seed).unwrap();
                run.log.rows[0].loss
            })
            .collect();
        // Step 0 sees the same field, batch, and times in every variant, and
        // λ leaves the loss value unchanged.
        assert!(first.iter().all(|&l| l.to_bits() == first[0].to_bits()), "{first:?}");
    }
    let threaded = mmf::ablation::run_ablation(&cfg, 3);
    for (a, b) in report.runs.iter().zip(&threaded.runs) {
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    }
}
