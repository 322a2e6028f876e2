//! CSV and checkpoint file formats.
//!
//! Every CSV number is written with 17 significant digits, which round-trips
//! an `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mmf_core::autodiff::Tensor;
use mmf_core::field::{FieldConfig, VelocityField};
use mmf_core::trainer::LogRow;

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FORMAT: &str = "mmf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, what: &str) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{what}: cannot parse number {s:?}")))
}

pub fn train_log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,loss,grad_norm,lambda,lr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm),
            fmt_f64(r.lambda),
            fmt_f64(r.lr)
        );
    }
    out
}

pub fn parse_train_log_csv(text: &str) -> CliResult<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("step,loss,grad_norm,lambda,lr") {
        return Err(CliError::Config("train log: unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(CliError::Config(format!("train log: bad row {l:?}")));
            }
            Ok(LogRow {
                step: f[0]
                    .parse()
                    .map_err(|_| CliError::Config(format!("train log: bad step {:?}", f[0])))?,
                loss: parse_f64(f[1], "train log")?,
                grad_norm: parse_f64(f[2], "train log")?,
                lambda: parse_f64(f[3], "train log")?,
                lr: parse_f64(f[4], "train log")?,
            })
        })
        .collect()
}

/// Path CSV: header `t,x0,...,x{d-1}`, one row per node in the given order.
pub fn path_csv(times: &[f64], states: &Tensor) -> String {
    let d = states.cols();
    let mut out = String::from("t");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (i, &t) in times.iter().enumerate() {
        out.push_str(&fmt_f64(t));
        for &v in states.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_path_csv(text: &str) -> CliResult<(Vec<f64>, Tensor)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("path csv: empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.len() - 1;
    if cols[0] != "t" || (0..d).any(|j| cols[j + 1] != format!("x{j}")) {
        return Err(CliError::Config(format!("path csv: bad header {header:?}")));
    }
    let mut times = Vec::new();
    let mut data = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != d + 1 {
            return Err(CliError::Config(format!("path csv: bad row {l:?}")));
        }
        times.push(parse_f64(f[0], "path csv")?);
        for v in &f[1..] {
            data.push(parse_f64(v, "path csv")?);
        }
    }
    let n = times.len();
    Ok((times, Tensor::matrix(n, d, data)?))
}

/// Pair CSV: header `x0_0,...,x0_{d-1},x1_0,...,x1_{d-1}`.
pub fn pairs_csv(x0: &Tensor, x1: &Tensor) -> String {
    let d = x0.cols();
    let mut names: Vec<String> = (0..d).map(|j| format!("x0_{j}")).collect();
    names.extend((0..d).map(|j| format!("x1_{j}")));
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..x0.rows() {
        let row: Vec<String> = x0
            .row(i)
            .iter()
            .chain(x1.row(i))
            .map(|&v| fmt_f64(v))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_pairs_csv(text: &str) -> CliResult<(Tensor, Tensor)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("pairs csv: empty".into()))?;
    let cols = header.split(',').count();
    if cols % 2 != 0 || cols == 0 {
        return Err(CliError::Config(format!("pairs csv: bad header {header:?}")));
    }
    let d = cols / 2;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut n = 0;
    for l in lines.filter(|l| !l.is_empty()) {
        let vals = l
            .split(',')
            .map(|v| parse_f64(v, "pairs csv"))
            .collect::<CliResult<Vec<f64>>>()?;
        if vals.len() != cols {
            return Err(CliError::Config(format!("pairs csv: bad row {l:?}")));
        }
        a.extend_from_slice(&vals[..d]);
        b.extend_from_slice(&vals[d..]);
        n += 1;
    }
    Ok((Tensor::matrix(n, d, a)?, Tensor::matrix(n, d, b)?))
}

/// JSON checkpoint: field config plus every parameter with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub config: FieldConfig,
    pub params: Vec<Tensor>,
}

impl CheckpointFile {
    pub fn new(config: FieldConfig, params: Vec<Tensor>, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step,
            config,
            params,
        }
    }

    pub fn from_field(field: &VelocityField, step: u64) -> Self {
        use mmf_core::field::FieldModel;
        Self::new(field.config().clone(), field.params().to_vec(), step)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("checkpoint: {}: {}", e.path(), e.inner())))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint: unsupported format {} v{}",
                file.format, file.version
            )));
        }
        Ok(file)
    }

    pub fn into_field(self) -> CliResult<VelocityField> {
        VelocityField::from_params(self.config, self.params)
            .map_err(|e| CliError::Config(format!("checkpoint: {e}")))
    }
}

pub fn read_checkpoint(path: &Path) -> CliResult<CheckpointFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    CheckpointFile::from_json(&text)
}
