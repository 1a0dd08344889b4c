//! Finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use goct_core::tokens::{TokenId, EOS, SEP};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::model::{decoder_input, smoothed_xent, Model};

const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`, norms over the whole tensor.
    pub rel_err: f64,
    pub analytic_norm: f64,
}

struct Problem {
    frames: Vec<f64>,
    n_frames: usize,
    context: Vec<TokenId>,
    target: Vec<TokenId>,
    difficulty: f64,
}

fn loss_f64(model: &Model<f64>, p: &Problem, eps: f64) -> f64 {
    let tokens = decoder_input(&p.context, &p.target);
    let logits = model.forward(&p.frames, p.n_frames, &tokens, p.difficulty).unwrap();
    let (sum, n, _) = smoothed_xent(&logits, model.config.vocab, p.context.len(), &p.target, eps);
    sum / n as f64
}

/// Compares the `f32` backward pass of a randomly initialized model against
/// central differences of the loss taken in `f64`, for every tensor.
pub fn gradient_check(config: ModelConfig, seed: u64, n_frames: usize) -> Result<Vec<TensorCheck>, ModelError> {
    let eps = 0.02;
    let model32: Model<f32> = Model::new(ModelConfig { dropout: 0.0, ..config }, seed)?;
    // perturb norms and biases away from their trivial initial values so
    // their gradients are exercised too
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model32 = model32;
    for t in model32.named_mut() {
        if t.shape.len() == 1 {
            t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
    let problem = Problem {
        frames: (0..n_frames * model32.config.n_mels).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        n_frames,
        context: vec![EOS, EOS, EOS, SEP, 12, 110, 30],
        target: vec![6, 123, 24, 150, 40, 97, EOS],
        difficulty: 2.7,
    };

    let frames32: Vec<f32> = problem.frames.iter().map(|&v| v as f32).collect();
    let tokens = decoder_input(&problem.context, &problem.target);
    let (logits, cache) = model32.forward_train(&frames32, n_frames, &tokens, problem.difficulty, None)?;
    let (_, n, mut dlogits) = smoothed_xent(&logits, model32.config.vocab, problem.context.len(), &problem.target, eps);
    dlogits.iter_mut().for_each(|g| *g /= n as f32);
    let mut grads = model32.zeros_like();
    model32.backward(&cache, &dlogits, &mut grads);

    let mut model64: Model<f64> = model32.cast();
    let h = 1e-5;
    let mut out = Vec::new();
    let n_tensors = grads.named().len();
    for ti in 0..n_tensors {
        let (name, analytic): (String, Vec<f64>) = {
            let g = &grads.named()[ti];
            (g.name.clone(), g.data.iter().map(|&v| v as f64).collect())
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = model64.named()[ti].data[i];
            model64.named_mut()[ti].data[i] = orig + h;
            let up = loss_f64(&model64, &problem, eps);
            model64.named_mut()[ti].data[i] = orig - h;
            let down = loss_f64(&model64, &problem, eps);
            model64.named_mut()[ti].data[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        // the floor keeps structurally zero gradients (key biases, which
        // softmax cancels) from turning rounding noise into a huge ratio
        let rel_err = diff / na.max(nn).max(GRAD_FLOOR);
        out.push(TensorCheck { name, len: analytic.len(), rel_err, analytic_norm: na });
    }
    Ok(out)
}
