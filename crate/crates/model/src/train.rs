use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use goct_core::tokens::TokenId;

use crate::config::TrainConfig;
use crate::error::ModelError;
use crate::model::{decoder_input, effective_len, smoothed_xent, Model};
use crate::tensor::{add_assign, sum_sq};

/// One training pair: four beats of normalized encoder rows, the seven
/// context tokens, and the target window ending in the end token.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub difficulty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!("epoch\t{}\tsteps\t{}\ttrain_loss\t{:.6}", e.epoch, e.steps, e.train_loss));
            if let Some(v) = e.valid_loss {
                out.push_str(&format!("\tvalid_loss\t{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = model.named().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, model: &mut Model<f32>, grads: &Model<f32>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (((p, g), m), v) in model.named_mut().into_iter().zip(grads.named()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] as f64 / c1;
                let vhat = v[i] as f64 / c2;
                p.data[i] -= (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

fn grad_norms(grads: &Model<f32>) -> Vec<(String, f64)> {
    let mut norms: Vec<(String, f64)> = grads.named().iter().map(|t| (t.name.clone(), sum_sq(t.data).sqrt())).collect();
    // non-finite norms first, then largest
    norms.sort_by(|a, b| match (a.1.is_finite(), b.1.is_finite()) {
        (false, true) => std::cmp::Ordering::Less,
        (true, false) => std::cmp::Ordering::Greater,
        _ => b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal),
    });
    norms.truncate(5);
    norms
}

/// Loss sum, position count and summed parameter gradients over `samples`.
/// Gradients are of the loss sum scaled by `scale`.
fn batch_grads(
    model: &Model<f32>,
    samples: &[(&TrainSample, u64)],
    eps: f64,
    scale: f32,
) -> Result<(f64, usize, Model<f32>), ModelError> {
    let mut grads = model.zeros_like();
    let mut total = 0.0;
    let mut count = 0;
    for (s, seed) in samples {
        let tokens = decoder_input(&s.context, &s.target);
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let (logits, cache) = model.forward_train(&s.frames, s.n_frames, &tokens, s.difficulty, Some(&mut rng))?;
        let (sum, n, mut dlogits) = smoothed_xent(&logits, model.config.vocab, s.context.len(), &s.target, eps);
        dlogits.iter_mut().for_each(|g| *g *= scale);
        model.backward(&cache, &dlogits, &mut grads);
        total += sum;
        count += n;
    }
    Ok((total, count, grads))
}

/// Mean per-position loss over `samples` with dropout off.
pub fn evaluate_loss(model: &Model<f32>, samples: &[TrainSample], eps: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0;
    for s in samples {
        let tokens = decoder_input(&s.context, &s.target);
        let logits = model.forward(&s.frames, s.n_frames, &tokens, s.difficulty)?;
        let (sum, n, _) = smoothed_xent(&logits, model.config.vocab, s.context.len(), &s.target, eps);
        total += sum;
        count += n;
    }
    if count == 0 {
        return Err(ModelError::EmptyTarget);
    }
    Ok(total / count as f64)
}

/// Adam with global-norm clipping and a constant learning rate. Samples are
/// reshuffled every epoch from `cfg.seed`; `on_epoch` sees each epoch's log
/// line as it completes.
///
/// With `cfg.jobs == 1` (serial reduction) the run is bit-reproducible from
/// the seed. More jobs split each batch into fixed chunks whose sums are
/// added in order: repeatable for the same `jobs`, but rounding differs from
/// the serial run.
pub fn fit(
    model: &mut Model<f32>,
    train: &[TrainSample],
    valid: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog, ModelError> {
    cfg.validate()?;
    if let Some(s) = train.iter().find(|s| effective_len(&s.target) == 0) {
        return Err(ModelError::Data(format!("sample with empty target (difficulty {})", s.difficulty)));
    }
    let pool = if cfg.jobs > 1 {
        Some(rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| ModelError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut adam = Adam::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0;
        let mut steps = 0;
        for (batch_no, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<(&TrainSample, u64)> = idx.iter().map(|&i| (&train[i], rng.gen())).collect();
            let positions: usize = batch.iter().map(|(s, _)| effective_len(&s.target)).sum();
            let scale = 1.0 / positions as f32;
            let (loss, count, mut grads) = match &pool {
                None => batch_grads(model, &batch, cfg.label_smoothing, scale)?,
                Some(pool) => {
                    let chunk = batch.len().div_ceil(cfg.jobs);
                    let m: &Model<f32> = model;
                    let parts: Vec<_> = pool.install(|| {
                        batch.par_chunks(chunk).map(|c| batch_grads(m, c, cfg.label_smoothing, scale)).collect()
                    });
                    let mut acc: Option<(f64, usize, Model<f32>)> = None;
                    for part in parts {
                        let (l, n, g) = part?;
                        match &mut acc {
                            None => acc = Some((l, n, g)),
                            Some((al, an, ag)) => {
                                *al += l;
                                *an += n;
                                for (a, b) in ag.named_mut().into_iter().zip(g.named()) {
                                    add_assign(a.data, b.data);
                                }
                            }
                        }
                    }
                    acc.expect("non-empty batch")
                }
            };
            let norm = grads.named().iter().map(|t| sum_sq(t.data)).sum::<f64>().sqrt();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(ModelError::NonFinite {
                    epoch,
                    batch: batch_no,
                    loss: loss / count as f64,
                    grad_norms: grad_norms(&grads),
                });
            }
            if norm > cfg.clip_norm {
                let k = (cfg.clip_norm / norm) as f32;
                for t in grads.named_mut() {
                    t.data.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam.update(model, &grads, cfg.lr);
            epoch_loss += loss;
            epoch_count += count;
            steps += 1;
        }
        let valid_loss =
            if valid.is_empty() { None } else { Some(evaluate_loss(model, valid, cfg.label_smoothing)?) };
        let entry = EpochLog {
            epoch,
            steps,
            train_loss: if epoch_count == 0 { 0.0 } else { epoch_loss / epoch_count as f64 },
            valid_loss,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(log)
}

/// Trains a freshly initialized model (parameters seeded from `cfg.seed`).
pub fn train(
    train: &[TrainSample],
    valid: &[TrainSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<f32>, TrainLog), ModelError> {
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let log = fit(&mut model, train, valid, cfg, on_epoch)?;
    Ok((model, log))
}

/// Continues training `model` with fresh optimizer state; the architecture
/// in `cfg.model` is ignored.
pub fn finetune(
    model: &Model<f32>,
    train: &[TrainSample],
    valid: &[TrainSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model<f32>, TrainLog), ModelError> {
    let cfg = TrainConfig { model: model.config.clone(), ..cfg.clone() };
    let mut tuned = model.clone();
    let log = fit(&mut tuned, train, valid, &cfg, on_epoch)?;
    Ok((tuned, log))
}
