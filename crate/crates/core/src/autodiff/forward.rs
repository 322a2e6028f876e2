//! Forward-mode differentiation recorded on the reverse tape.
//!
//! Every tangent is itself a tape node, so a directional derivative can be
//! differentiated again in reverse mode (needed when the bracket of the
//! objective stays attached to the graph). A `None` tangent stands for an
//! exact zero and is never materialized.

use alloc::vec::Vec;

use super::tape::{BinaryKind, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A primal node paired with its tangent (`None` = zero tangent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dual {
    pub primal: Var,
    pub tangent: Option<Var>,
}

impl Dual {
    pub fn constant(primal: Var) -> Self {
        Self {
            primal,
            tangent: None,
        }
    }

    pub fn new(primal: Var, tangent: Var) -> Self {
        Self {
            primal,
            tangent: Some(tangent),
        }
    }
}

/// A primal tensor with its tangent. Shapes always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    primal: Tensor,
    tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(Error::ShapeMismatch {
                op: "dual",
                left: primal.shape().to_vec(),
                right: tangent.shape().to_vec(),
            });
        }
        Ok(Self { primal, tangent })
    }

    pub fn primal(&self) -> &Tensor {
        &self.primal
    }

    pub fn tangent(&self) -> &Tensor {
        &self.tangent
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.primal, self.tangent)
    }
}

fn zeros_like(tape: &mut Tape, v: Var) -> Var {
    let z = Tensor::zeros(tape.shape(v));
    tape.constant(z)
}

/// Broadcasts a tangent up to `out`'s shape (scalar operands only).
fn expand(tape: &mut Tape, tangent: Var, out: Var) -> Result<Var> {
    if tape.shape(tangent) == tape.shape(out) {
        Ok(tangent)
    } else {
        let z = zeros_like(tape, out);
        tape.add(z, tangent)
    }
}

fn add_opt(tape: &mut Tape, a: Option<Var>, b: Option<Var>, out: Var) -> Result<Option<Var>> {
    Ok(match (a, b) {
        (None, None) => None,
        (Some(a), None) | (None, Some(a)) => Some(expand(tape, a, out)?),
        (Some(a), Some(b)) => {
            let s = tape.add(a, b)?;
            Some(expand(tape, s, out)?)
        }
    })
}

pub fn add(tape: &mut Tape, a: Dual, b: Dual) -> Result<Dual> {
    let p = tape.add(a.primal, b.primal)?;
    let t = add_opt(tape, a.tangent, b.tangent, p)?;
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn sub(tape: &mut Tape, a: Dual, b: Dual) -> Result<Dual> {
    let p = tape.sub(a.primal, b.primal)?;
    let nb = b.tangent.map(|t| tape.neg(t));
    let t = add_opt(tape, a.tangent, nb, p)?;
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn mul(tape: &mut Tape, a: Dual, b: Dual) -> Result<Dual> {
    let p = tape.mul(a.primal, b.primal)?;
    let ta = match a.tangent {
        Some(t) => Some(tape.mul(t, b.primal)?),
        None => None,
    };
    let tb = match b.tangent {
        Some(t) => Some(tape.mul(a.primal, t)?),
        None => None,
    };
    let t = add_opt(tape, ta, tb, p)?;
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn div(tape: &mut Tape, a: Dual, b: Dual) -> Result<Dual> {
    let p = tape.div(a.primal, b.primal)?;
    // (ȧ − out·ḃ) / b
    let num = match (a.tangent, b.tangent) {
        (None, None) => None,
        (ta, tb) => {
            let ob = match tb {
                Some(tb) => Some(tape.binary(BinaryKind::Mul, p, tb)?),
                None => None,
            };
            let nob = ob.map(|v| tape.neg(v));
            add_opt(tape, ta, nob, p)?
        }
    };
    let t = match num {
        Some(n) => Some(tape.div(n, b.primal)?),
        None => None,
    };
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn neg(tape: &mut Tape, a: Dual) -> Dual {
    let p = tape.neg(a.primal);
    Dual {
        primal: p,
        tangent: a.tangent.map(|t| tape.neg(t)),
    }
}

pub fn tanh(tape: &mut Tape, a: Dual) -> Result<Dual> {
    let y = tape.tanh(a.primal);
    let t = match a.tangent {
        Some(t) => {
            let y2 = tape.square(y);
            let d = tape.affine(y2, -1.0, 1.0);
            Some(tape.mul(d, t)?)
        }
        None => None,
    };
    Ok(Dual {
        primal: y,
        tangent: t,
    })
}

pub fn square(tape: &mut Tape, a: Dual) -> Result<Dual> {
    let p = tape.square(a.primal);
    let t = match a.tangent {
        Some(t) => {
            let at = tape.mul(a.primal, t)?;
            Some(tape.scale(at, 2.0))
        }
        None => None,
    };
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn matmul(tape: &mut Tape, a: Dual, b: Dual) -> Result<Dual> {
    let p = tape.matmul(a.primal, b.primal)?;
    let ta = match a.tangent {
        Some(t) => Some(tape.matmul(t, b.primal)?),
        None => None,
    };
    let tb = match b.tangent {
        Some(t) => Some(tape.matmul(a.primal, t)?),
        None => None,
    };
    let t = add_opt(tape, ta, tb, p)?;
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn add_bias(tape: &mut Tape, a: Dual, bias: Dual) -> Result<Dual> {
    let p = tape.add_bias(a.primal, bias.primal)?;
    let t = match (a.tangent, bias.tangent) {
        (None, None) => None,
        (Some(t), None) => Some(t),
        (ta, Some(tb)) => {
            let base = match ta {
                Some(t) => t,
                None => zeros_like(tape, p),
            };
            Some(tape.add_bias(base, tb)?)
        }
    };
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn mul_rows(tape: &mut Tape, a: Dual, s: Dual) -> Result<Dual> {
    let p = tape.mul_rows(a.primal, s.primal)?;
    let ta = match a.tangent {
        Some(t) => Some(tape.mul_rows(t, s.primal)?),
        None => None,
    };
    let ts = match s.tangent {
        Some(t) => Some(tape.mul_rows(a.primal, t)?),
        None => None,
    };
    let t = add_opt(tape, ta, ts, p)?;
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn concat_cols(tape: &mut Tape, parts: &[Dual]) -> Result<Dual> {
    let primals: Vec<Var> = parts.iter().map(|d| d.primal).collect();
    let p = tape.concat_cols(&primals)?;
    let t = if parts.iter().all(|d| d.tangent.is_none()) {
        None
    } else {
        let tangents: Vec<Var> = parts
            .iter()
            .map(|d| d.tangent.unwrap_or_else(|| zeros_like(tape, d.primal)))
            .collect();
        Some(tape.concat_cols(&tangents)?)
    };
    Ok(Dual {
        primal: p,
        tangent: t,
    })
}

pub fn sinusoid(tape: &mut Tape, t: Dual, freqs: &[f64]) -> Result<Dual> {
    let p = tape.sinusoid(t.primal, freqs, 0)?;
    let tan = match t.tangent {
        Some(dt) => {
            let d = tape.sinusoid(t.primal, freqs, 1)?;
            Some(tape.mul_rows(d, dt)?)
        }
        None => None,
    };
    Ok(Dual {
        primal: p,
        tangent: tan,
    })
}

pub fn sum(tape: &mut Tape, a: Dual) -> Dual {
    let p = tape.sum(a.primal);
    Dual {
        primal: p,
        tangent: a.tangent.map(|t| tape.sum(t)),
    }
}

/// Jacobian-vector product of `f` at `inputs` along `tangents`.
///
/// Returns `(f(inputs), ∂f·tangents)` as tape nodes. The value is computed by
/// the same primal pass a plain call of `f` would record. Unless `attach` is
/// set, the directional derivative is returned behind a stop-gradient, so no
/// reverse gradient flows through it.
pub fn jvp<F>(
    tape: &mut Tape,
    inputs: &[Var],
    tangents: &[Option<Var>],
    attach: bool,
    f: F,
) -> Result<(Var, Var)>
where
    F: FnOnce(&mut Tape, &[Dual]) -> Result<Dual>,
{
    if inputs.len() != tangents.len() {
        return Err(Error::ShapeMismatch {
            op: "jvp",
            left: alloc::vec![inputs.len()],
            right: alloc::vec![tangents.len()],
        });
    }
    if attach && !tape.supports_second_order() {
        return Err(Error::SecondOrderDisabled);
    }
    let mut duals = Vec::with_capacity(inputs.len());
    for (&x, &t) in inputs.iter().zip(tangents) {
        if let Some(t) = t {
            if tape.shape(t) != tape.shape(x) {
                return Err(Error::ShapeMismatch {
                    op: "jvp",
                    left: tape.shape(x).to_vec(),
                    right: tape.shape(t).to_vec(),
                });
            }
        }
        duals.push(Dual {
            primal: x,
            tangent: t,
        });
    }
    let out = f(tape, &duals)?;
    let tangent = match out.tangent {
        Some(t) => t,
        None => zeros_like(tape, out.primal),
    };
    let tangent = if attach {
        tangent
    } else {
        tape.stopgrad(tangent)
    };
    Ok((out.primal, tangent))
}

/// Tensor-level JVP on a private record: `(f(x), ∂f(x)·v)`.
pub fn jvp_tensors<F>(f: F, inputs: &[Tensor], tangents: &[Tensor]) -> Result<DualTensor>
where
    F: FnOnce(&mut Tape, &[Dual]) -> Result<Dual>,
{
    if inputs.len() != tangents.len() {
        return Err(Error::ShapeMismatch {
            op: "jvp",
            left: alloc::vec![inputs.len()],
            right: alloc::vec![tangents.len()],
        });
    }
    let mut tape = Tape::new();
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let ts: Vec<Option<Var>> = tangents
        .iter()
        .map(|t| Some(tape.constant(t.clone())))
        .collect();
    let (v, d) = jvp(&mut tape, &xs, &ts, false, f)?;
    DualTensor::new(tape.value(v).clone(), tape.value(d).clone())
}
