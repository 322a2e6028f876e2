#![allow(dead_code)]

use mmf_core::autodiff::Tensor;
use mmf_core::field::{FieldConfig, VelocityField};
use mmf_core::objectives::TrainingBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central differences of `f` with respect to every entry of every tensor.
pub fn central_diff(params: &[Tensor], h: f64, f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].shape());
        for j in 0..params[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = f(&work);
            work[i].data_mut()[j] = orig - h;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Entrywise `|a − b| ≤ rel · max(|a|, |b|) + floor`.
pub fn assert_rel_close(actual: &[Tensor], expected: &[Tensor], rel: f64, floor: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: tensor count");
    for (k, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert_eq!(a.shape(), e.shape(), "{what}: shape of tensor {k}");
        for (j, (&x, &y)) in a.data().iter().zip(e.data()).enumerate() {
            let tol = rel * x.abs().max(y.abs()) + floor;
            assert!(
                (x - y).abs() <= tol,
                "{what}: tensor {k} entry {j}: {x} vs {y} (tol {tol})"
            );
        }
    }
}

/// One hidden layer, i.e. two affine layers.
pub fn two_layer_field(input_dim: usize, seed: u64) -> VelocityField {
    VelocityField::init(FieldConfig {
        input_dim,
        hidden_widths: vec![6],
        time_embed_dim: 4,
        base_frequency: 10.0,
        seed,
        zero_final_layer: false,
    })
    .unwrap()
}

pub fn small_field(input_dim: usize, widths: Vec<usize>, seed: u64) -> VelocityField {
    VelocityField::init(FieldConfig {
        input_dim,
        hidden_widths: widths,
        time_embed_dim: 8,
        base_frequency: 100.0,
        seed,
        zero_final_layer: false,
    })
    .unwrap()
}

/// Random endpoints and time pairs with `t − r ≥ 0.05` and `1 − r ≥ 0.05`.
pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> TrainingBatch {
    let x0 = uniform(rng, &[b, d], -2.0, 2.0);
    let x1 = uniform(rng, &[b, d], -2.0, 2.0);
    let mut r = Vec::with_capacity(b);
    let mut t = Vec::with_capacity(b);
    for _ in 0..b {
        let ri: f64 = rng.random_range(0.0..0.8);
        let ti: f64 = rng.random_range(ri + 0.05..=1.0);
        r.push(ri);
        t.push(ti);
    }
    TrainingBatch::new(x0, x1, Tensor::vector(r), Tensor::vector(t)).unwrap()
}
