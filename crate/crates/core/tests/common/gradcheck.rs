#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use handid::losses::{scalar, similarity_matrix, total_loss, LossConfig};
use handid::model::{HandIdModel, ModelConfig, ParamGroup, StubBackbone, StubConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;

pub fn small_stub(d: usize, token_dim: usize) -> StubBackbone {
    StubBackbone::new(StubConfig {
        seed: 4,
        embed_dim: d,
        token_dim,
        context_length: 12,
        vocab_size: 64,
        text_layers: 1,
        text_heads: 2,
        image_size: 32,
        pool: 8,
        image_hidden: 16,
    })
}

pub fn model_f64(d: usize, token_dim: usize, classes: usize) -> HandIdModel {
    let cfg = ModelConfig { classifier_init_std: 0.5, ..Default::default() };
    HandIdModel::new(&small_stub(d, token_dim), cfg, classes, &Device::Cpu, DType::F64).unwrap()
}

/// Total loss with image embeddings `i` fed in directly. With `text` given,
/// it replaces the inversion and text-encoder path.
pub fn loss(model: &HandIdModel, i: &Tensor, text: Option<&Tensor>, labels: &[usize], cfg: &LossConfig) -> Tensor {
    let logits = model.classify(i, true).unwrap();
    let t = match text {
        Some(t) => t.clone(),
        None => {
            let tokens = model.invert(i, None).unwrap();
            model.encode_text(&model.compose_prompt(&tokens).unwrap()).unwrap()
        }
    };
    total_loss(&logits, &similarity_matrix(i, &t).unwrap(), labels, cfg).unwrap().0
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, (rows, cols), &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Norm-wise relative error between analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` around `x`, element by element.
fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let base = flat(x);
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            plus[k] += H;
            let mut minus = base.clone();
            minus[k] -= H;
            let p = Tensor::from_vec(plus, x.shape(), x.device()).unwrap();
            let m = Tensor::from_vec(minus, x.shape(), x.device()).unwrap();
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

pub struct GradReport {
    pub image: f64,
    pub text: f64,
    /// Worst tensor among the inversion-network parameters.
    pub inversion: f64,
    pub inversion_tensors: usize,
}

pub fn check(seed: u64, batch: usize, d: usize, token_dim: usize, classes: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = model_f64(d, token_dim, classes);
    let labels: Vec<usize> = (0..batch).map(|k| if k < 2 { k } else { rng.random_range(0..classes) }).collect();
    let cfg = LossConfig::new(classes);
    let i0 = random_tensor(&mut rng, batch, d);
    let t0 = random_tensor(&mut rng, batch, d);

    let iv = Var::from_tensor(&i0).unwrap();
    let grads = loss(&model, iv.as_tensor(), None, &labels, &cfg).backward().unwrap();
    let analytic_i = flat(grads.get(iv.as_tensor()).unwrap());
    let numeric_i = numeric_grad(&i0, |x| scalar(&loss(&model, x, None, &labels, &cfg)).unwrap());

    let tv = Var::from_tensor(&t0).unwrap();
    let grads = loss(&model, &i0, Some(tv.as_tensor()), &labels, &cfg).backward().unwrap();
    let analytic_t = flat(grads.get(tv.as_tensor()).unwrap());
    let numeric_t = numeric_grad(&t0, |x| scalar(&loss(&model, &i0, Some(x), &labels, &cfg)).unwrap());

    let grads = loss(&model, &i0, None, &labels, &cfg).backward().unwrap();
    let params: Vec<(String, Var)> =
        model.store.vars_in(ParamGroup::NewLayer).into_iter().filter(|(n, _)| n.starts_with("inversion.")).collect();
    let mut worst = 0.0f64;
    for (_, var) in &params {
        let analytic = flat(grads.get(var.as_tensor()).unwrap());
        let original = var.as_detached_tensor().copy().unwrap();
        let numeric = numeric_grad(&original, |x| {
            var.set(x).unwrap();
            scalar(&loss(&model, &i0, None, &labels, &cfg)).unwrap()
        });
        var.set(&original).unwrap();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    GradReport {
        image: relative_error(&analytic_i, &numeric_i),
        text: relative_error(&analytic_t, &numeric_t),
        inversion: worst,
        inversion_tensors: params.len(),
    }
}
