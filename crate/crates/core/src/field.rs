//! The parameterized average-velocity field `u_θ(x, r, t)`.
//!
//! An MLP with tanh hidden layers. Its input row is
//! `concat(x, embed(r), embed(t))`; the output has the width of `x`.

#[allow(unused_imports)] // needed when built without std
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward, jvp, Dual, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::meanflow::AverageVelocity;

/// Sinusoidal time features on a geometric frequency ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    dim: usize,
    base_frequency: f64,
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    /// Frequencies run geometrically from 1 to `base_frequency` across the
    /// `dim / 2` (sin, cos) pairs.
    pub fn new(dim: usize, base_frequency: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(alloc::format!(
                "time_embed_dim: must be even and positive, got {dim}"
            )));
        }
        if !(base_frequency > 0.0) || !base_frequency.is_finite() {
            return Err(Error::Config(alloc::format!(
                "base_frequency: must be positive, got {base_frequency}"
            )));
        }
        let pairs = dim / 2;
        let freqs = (0..pairs)
            .map(|k| {
                if pairs == 1 {
                    1.0
                } else {
                    base_frequency.powf(k as f64 / (pairs - 1) as f64)
                }
            })
            .collect();
        Ok(Self {
            dim,
            base_frequency,
            freqs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base_frequency(&self) -> f64 {
        self.base_frequency
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn max_frequency(&self) -> f64 {
        self.freqs.last().copied().unwrap_or(1.0)
    }

    /// `[sin ω_0 t, cos ω_0 t, sin ω_1 t, ...]`.
    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for &w in &self.freqs {
            let (s, c) = (w * t).sin_cos();
            out.push(s);
            out.push(c);
        }
        out
    }
}

fn default_widths() -> Vec<usize> {
    vec![128, 128, 128]
}

fn default_embed_dim() -> usize {
    32
}

fn default_base_frequency() -> f64 {
    1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub input_dim: usize,
    #[serde(default = "default_widths")]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub time_embed_dim: usize,
    #[serde(default = "default_base_frequency")]
    pub base_frequency: f64,
    #[serde(default)]
    pub seed: u64,
    /// Start the output layer at exactly zero.
    #[serde(default)]
    pub zero_final_layer: bool,
}

impl FieldConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: default_widths(),
            time_embed_dim: default_embed_dim(),
            base_frequency: default_base_frequency(),
            seed: 0,
            zero_final_layer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim: must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(
                "hidden_widths: must be non-empty with positive entries".into(),
            ));
        }
        TimeEmbedding::new(self.time_embed_dim, self.base_frequency)?;
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim + 2 * self.time_embed_dim;
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.input_dim));
        dims
    }
}

/// A differentiable model of the average velocity, evaluated on a tape.
pub trait FieldModel {
    /// Data dimension `d`.
    fn dim(&self) -> usize;

    fn params(&self) -> &[Tensor];

    fn params_mut(&mut self) -> &mut [Tensor];

    /// `u(x, r, t)` for `x: [b×d]`, `r, t: [b]`, with `params` registered on
    /// `tape` in the order of [`FieldModel::params`].
    fn forward_dual(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Dual,
        r: Dual,
        t: Dual,
    ) -> Result<Dual>;
}

/// Registers every parameter as a leaf and returns the handles.
pub fn register_params<M: FieldModel + ?Sized>(tape: &mut Tape, model: &M) -> Vec<Var> {
    model.params().iter().map(|p| tape.leaf(p.clone())).collect()
}

/// Plain evaluation on a private tape.
pub fn forward_tensor<M: FieldModel + ?Sized>(
    model: &M,
    x: &Tensor,
    r: &Tensor,
    t: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model
        .params()
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let xv = tape.constant(x.clone());
    let rv = tape.constant(r.clone());
    let tv = tape.constant(t.clone());
    let out = model.forward_dual(
        &mut tape,
        &params,
        Dual::constant(xv),
        Dual::constant(rv),
        Dual::constant(tv),
    )?;
    Ok(tape.value(out.primal).clone())
}

/// MLP average-velocity field.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    config: FieldConfig,
    embedding: TimeEmbedding,
    params: Vec<Tensor>,
}

impl VelocityField {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases, from `config.seed`.
    pub fn init(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let embedding = TimeEmbedding::new(config.time_embed_dim, config.base_frequency)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.layer_dims();
        let last = dims.len() - 1;
        let mut params = Vec::with_capacity(2 * dims.len());
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = if i == last && config.zero_final_layer {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect()
            };
            params.push(Tensor::matrix(fan_in, fan_out, w)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            config,
            embedding,
            params,
        })
    }

    /// Rebuilds a field from stored parameters, checking every shape.
    pub fn from_params(config: FieldConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let embedding = TimeEmbedding::new(config.time_embed_dim, config.base_frequency)?;
        let dims = config.layer_dims();
        if params.len() != 2 * dims.len() {
            return Err(Error::ShapeMismatch {
                op: "from_params",
                left: vec![2 * dims.len()],
                right: vec![params.len()],
            });
        }
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let expect = [vec![fan_in, fan_out], vec![fan_out]];
            for (j, shape) in expect.iter().enumerate() {
                let got = params[2 * i + j].shape();
                if got != shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "from_params",
                        left: shape.clone(),
                        right: got.to_vec(),
                    });
                }
            }
        }
        Ok(Self {
            config,
            embedding,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    /// Data dimension `d`.
    pub fn dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    /// Plain batched evaluation: `x: [b×d]`, `r, t: [b]`.
    pub fn forward(&self, x: &Tensor, r: &Tensor, t: &Tensor) -> Result<Tensor> {
        forward_tensor(self, x, r, t)
    }
}

impl FieldModel for VelocityField {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn forward_dual(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Dual,
        r: Dual,
        t: Dual,
    ) -> Result<Dual> {
        let (b, d) = tape.value(x.primal).require_matrix("field.forward")?;
        if d != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "field.forward",
                left: vec![b, self.config.input_dim],
                right: vec![b, d],
            });
        }
        for time in [r.primal, t.primal] {
            if tape.shape(time) != [b] {
                return Err(Error::ShapeMismatch {
                    op: "field.forward",
                    left: vec![b],
                    right: tape.shape(time).to_vec(),
                });
            }
        }
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "field.params",
                left: vec![self.params.len()],
                right: vec![params.len()],
            });
        }
        let freqs = self.embedding.frequencies();
        let er = forward::sinusoid(tape, r, freqs)?;
        let et = forward::sinusoid(tape, t, freqs)?;
        let mut h = forward::concat_cols(tape, &[x, er, et])?;
        let layers = params.len() / 2;
        for (i, wb) in params.chunks(2).enumerate() {
            let z = forward::matmul(tape, h, Dual::constant(wb[0]))?;
            let z = forward::add_bias(tape, z, Dual::constant(wb[1]))?;
            h = if i + 1 < layers {
                forward::tanh(tape, z)?
            } else {
                z
            };
        }
        Ok(h)
    }
}

pub(crate) fn row_tensor(x: &[f64]) -> Tensor {
    Tensor::matrix(1, x.len(), x.to_vec()).expect("row shape")
}

/// Adapts any [`FieldModel`] to the [`AverageVelocity`] interface.
#[derive(Debug, Clone, Copy)]
pub struct AsAverageVelocity<'a, M: ?Sized>(pub &'a M);

impl<M: FieldModel + ?Sized> AverageVelocity for AsAverageVelocity<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        let b = x.rows();
        forward_tensor(
            self.0,
            x,
            &Tensor::full(&[b], r),
            &Tensor::full(&[b], t),
        )
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
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .0
            .params()
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let xs = tape.constant(row_tensor(x));
        let rs = tape.constant(Tensor::vector(vec![r]));
        let ts = tape.constant(Tensor::vector(vec![t]));
        let dxs = tape.constant(row_tensor(dx));
        let drs = tape.constant(Tensor::vector(vec![dr]));
        let dts = tape.constant(Tensor::vector(vec![dt]));
        let (v, d) = jvp(
            &mut tape,
            &[xs, rs, ts],
            &[Some(dxs), Some(drs), Some(dts)],
            false,
            |tape, a| self.0.forward_dual(tape, &params, a[0], a[1], a[2]),
        )?;
        Ok((tape.value(v).data().to_vec(), tape.value(d).data().to_vec()))
    }
}

impl AverageVelocity for VelocityField {
    fn dim(&self) -> usize {
        FieldModel::dim(self)
    }

    fn eval_batch(&self, x: &Tensor, r: f64, t: f64) -> Result<Tensor> {
        AsAverageVelocity(self).eval_batch(x, r, t)
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
        AsAverageVelocity(self).jvp(x, r, t, dx, dr, dt)
    }
}
