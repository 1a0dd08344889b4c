use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use goct_core::tokens::{TokenId, EOS, SEP};

use crate::config::{difficulty_bucket, ModelConfig, DIFFICULTY_BUCKETS};
use crate::error::ModelError;
use crate::layers::{
    apply_mask, dropout_mask, glorot, Attention, AttnCache, FeedForward, FfCache, LayerNorm, Linear, LnCache, Named,
    NamedMut,
};
use crate::tensor::{add_assign, position_encoding, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub ln1: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ln3: LayerNorm<T>,
    pub ff: FeedForward<T>,
}

/// Encoder-decoder transformer. Generic over the scalar so gradients can be
/// checked in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub enc_in: Linear<T>,
    pub enc_layers: Vec<EncoderLayer<T>>,
    pub enc_ln: LayerNorm<T>,
    /// `vocab x token_embed_dim`
    pub tok_emb: Vec<T>,
    /// `DIFFICULTY_BUCKETS x difficulty_embed_dim`
    pub diff_emb: Vec<T>,
    pub dec_layers: Vec<DecoderLayer<T>>,
    pub dec_ln: LayerNorm<T>,
    pub out: Linear<T>,
}

struct EncLayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    b: Vec<T>,
    ff: FfCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    b: Vec<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: LnCache<T>,
    c: Vec<T>,
    ff: FfCache<T>,
    drop3: Option<Vec<T>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Cache<T> {
    n_frames: usize,
    frames: Vec<T>,
    enc_drop: Option<Vec<T>>,
    enc_layers: Vec<EncLayerCache<T>>,
    enc_ln: LnCache<T>,
    memory: Vec<T>,
    tokens: Vec<TokenId>,
    bucket: usize,
    dec_drop: Option<Vec<T>>,
    dec_layers: Vec<DecLayerCache<T>>,
    dec_ln: LnCache<T>,
    dec_out: Vec<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    fn forward(&self, x: Vec<T>, n: usize, p: f64, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<T>, EncLayerCache<T>) {
        let (a, ln1) = self.ln1.forward(&x);
        let (mut att, attn) = self.attn.forward(&a, n, &a, n, false);
        let drop1 = dropout_mask(rng.as_deref_mut(), p, att.len());
        apply_mask(&mut att, &drop1);
        let mut x1 = x;
        add_assign(&mut x1, &att);
        let (b, ln2) = self.ln2.forward(&x1);
        let (mut f, ff) = self.ff.forward(&b, n);
        let drop2 = dropout_mask(rng, p, f.len());
        apply_mask(&mut f, &drop2);
        let mut x2 = x1;
        add_assign(&mut x2, &f);
        (x2, EncLayerCache { ln1, a, attn, drop1, ln2, b, ff, drop2 })
    }

    fn backward(&self, c: &EncLayerCache<T>, n: usize, mut dx2: Vec<T>, g: &mut EncoderLayer<T>) -> Vec<T> {
        let mut df = dx2.clone();
        apply_mask(&mut df, &c.drop2);
        let db = self.ff.backward(&c.ff, &c.b, n, &df, &mut g.ff);
        add_assign(&mut dx2, &self.ln2.backward(&c.ln2, &db, &mut g.ln2));
        let dx1 = dx2;
        let mut datt = dx1.clone();
        apply_mask(&mut datt, &c.drop1);
        let (mut da, da_kv) = self.attn.backward(&c.attn, &c.a, &c.a, &datt, &mut g.attn);
        add_assign(&mut da, &da_kv);
        let mut dx = dx1;
        add_assign(&mut dx, &self.ln1.backward(&c.ln1, &da, &mut g.ln1));
        dx
    }
}

impl<T: Scalar> DecoderLayer<T> {
    fn forward(
        &self,
        x: Vec<T>,
        n: usize,
        memory: &[T],
        n_mem: usize,
        p: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<T>, DecLayerCache<T>) {
        let (a, ln1) = self.ln1.forward(&x);
        let (mut sa, self_attn) = self.self_attn.forward(&a, n, &a, n, true);
        let drop1 = dropout_mask(rng.as_deref_mut(), p, sa.len());
        apply_mask(&mut sa, &drop1);
        let mut x1 = x;
        add_assign(&mut x1, &sa);
        let (b, ln2) = self.ln2.forward(&x1);
        let (mut ca, cross) = self.cross_attn.forward(&b, n, memory, n_mem, false);
        let drop2 = dropout_mask(rng.as_deref_mut(), p, ca.len());
        apply_mask(&mut ca, &drop2);
        let mut x2 = x1;
        add_assign(&mut x2, &ca);
        let (c, ln3) = self.ln3.forward(&x2);
        let (mut f, ff) = self.ff.forward(&c, n);
        let drop3 = dropout_mask(rng, p, f.len());
        apply_mask(&mut f, &drop3);
        let mut x3 = x2;
        add_assign(&mut x3, &f);
        (x3, DecLayerCache { ln1, a, self_attn, drop1, ln2, b, cross, drop2, ln3, c, ff, drop3 })
    }

    /// Returns `(d x, d memory)`.
    fn backward(
        &self,
        c: &DecLayerCache<T>,
        n: usize,
        memory: &[T],
        mut dx: Vec<T>,
        g: &mut DecoderLayer<T>,
    ) -> (Vec<T>, Vec<T>) {
        let mut df = dx.clone();
        apply_mask(&mut df, &c.drop3);
        let dc = self.ff.backward(&c.ff, &c.c, n, &df, &mut g.ff);
        add_assign(&mut dx, &self.ln3.backward(&c.ln3, &dc, &mut g.ln3));

        let mut dca = dx.clone();
        apply_mask(&mut dca, &c.drop2);
        let (db, dmem) = self.cross_attn.backward(&c.cross, &c.b, memory, &dca, &mut g.cross_attn);
        add_assign(&mut dx, &self.ln2.backward(&c.ln2, &db, &mut g.ln2));

        let mut dsa = dx.clone();
        apply_mask(&mut dsa, &c.drop1);
        let (mut da, da_kv) = self.self_attn.backward(&c.self_attn, &c.a, &c.a, &dsa, &mut g.self_attn);
        add_assign(&mut da, &da_kv);
        add_assign(&mut dx, &self.ln1.backward(&c.ln1, &da, &mut g.ln1));
        (dx, dmem)
    }
}

/// Decoder input for a training pair: the context, the forced separator,
/// then the target shifted right.
pub fn decoder_input(context: &[TokenId], target: &[TokenId]) -> Vec<TokenId> {
    let mut tokens = context.to_vec();
    tokens.push(SEP);
    tokens.extend_from_slice(&target[..effective_len(target).saturating_sub(1)]);
    tokens
}

/// Target length up to and including the first end token.
pub fn effective_len(target: &[TokenId]) -> usize {
    target.iter().position(|&t| t == EOS).map_or(target.len(), |p| p + 1)
}

/// Sum of label-smoothed cross entropy over the target positions, their
/// count, and the gradient of the sum w.r.t. the logits. Position
/// `context_len + j` predicts `target[j]`.
pub fn smoothed_xent<T: Scalar>(
    logits: &[T],
    vocab: usize,
    context_len: usize,
    target: &[TokenId],
    eps: f64,
) -> (f64, usize, Vec<T>) {
    let n = effective_len(target);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0;
    let off = eps / vocab as f64;
    for (j, &y) in target[..n].iter().enumerate() {
        let pos = context_len + j;
        let row = &logits[pos * vocab..(pos + 1) * vocab];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64().unwrap() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let log_z = z.ln() + max;
        let g = &mut grad[pos * vocab..(pos + 1) * vocab];
        for (k, (&l, e)) in row.iter().zip(&exps).enumerate() {
            let q = off + if k == y as usize { 1.0 - eps } else { 0.0 };
            total -= q * (l.to_f64().unwrap() - log_z);
            g[k] = T::from_f64c(e / z - q);
        }
    }
    (total, n, grad)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, ff) = (config.d_model, config.n_heads, config.d_ff);
        let enc_in = Linear::new(&mut rng, config.n_mels, d);
        let enc_layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                attn: Attention::new(&mut rng, d, h),
                ln2: LayerNorm::new(d),
                ff: FeedForward::new(&mut rng, d, ff),
            })
            .collect();
        let tok_emb = glorot(&mut rng, config.vocab, config.token_embed_dim);
        let diff_emb = glorot(&mut rng, DIFFICULTY_BUCKETS, config.difficulty_embed_dim);
        let dec_layers = (0..config.n_layers)
            .map(|_| DecoderLayer {
                ln1: LayerNorm::new(d),
                self_attn: Attention::new(&mut rng, d, h),
                ln2: LayerNorm::new(d),
                cross_attn: Attention::new(&mut rng, d, h),
                ln3: LayerNorm::new(d),
                ff: FeedForward::new(&mut rng, d, ff),
            })
            .collect();
        let out = Linear::new(&mut rng, d, config.vocab);
        Ok(Self {
            enc_in,
            enc_layers,
            enc_ln: LayerNorm::new(d),
            tok_emb,
            diff_emb,
            dec_layers,
            dec_ln: LayerNorm::new(d),
            out,
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.named_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let enc_layers = self
            .enc_layers
            .iter()
            .map(|l| EncoderLayer { ln1: l.ln1.cast(), attn: l.attn.cast(), ln2: l.ln2.cast(), ff: l.ff.cast() })
            .collect();
        let dec_layers = self
            .dec_layers
            .iter()
            .map(|l| DecoderLayer {
                ln1: l.ln1.cast(),
                self_attn: l.self_attn.cast(),
                ln2: l.ln2.cast(),
                cross_attn: l.cross_attn.cast(),
                ln3: l.ln3.cast(),
                ff: l.ff.cast(),
            })
            .collect();
        let c = |v: &[T]| v.iter().map(|x| U::from_f64c(x.to_f64().unwrap())).collect();
        Model {
            config: self.config.clone(),
            enc_in: self.enc_in.cast(),
            enc_layers,
            enc_ln: self.enc_ln.cast(),
            tok_emb: c(&self.tok_emb),
            diff_emb: c(&self.diff_emb),
            dec_layers,
            dec_ln: self.dec_ln.cast(),
            out: self.out.cast(),
        }
    }

    /// All parameter tensors in a fixed order.
    pub fn named(&self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        self.enc_in.named("enc.in", &mut out);
        for (i, l) in self.enc_layers.iter().enumerate() {
            l.ln1.named(&format!("enc.{i}.ln1"), &mut out);
            l.attn.named(&format!("enc.{i}.attn"), &mut out);
            l.ln2.named(&format!("enc.{i}.ln2"), &mut out);
            l.ff.named(&format!("enc.{i}.ff"), &mut out);
        }
        self.enc_ln.named("enc.ln", &mut out);
        out.push(Named {
            name: "dec.tok_emb".into(),
            shape: vec![self.config.vocab, self.config.token_embed_dim],
            data: &self.tok_emb,
        });
        out.push(Named {
            name: "dec.diff_emb".into(),
            shape: vec![DIFFICULTY_BUCKETS, self.config.difficulty_embed_dim],
            data: &self.diff_emb,
        });
        for (i, l) in self.dec_layers.iter().enumerate() {
            l.ln1.named(&format!("dec.{i}.ln1"), &mut out);
            l.self_attn.named(&format!("dec.{i}.self_attn"), &mut out);
            l.ln2.named(&format!("dec.{i}.ln2"), &mut out);
            l.cross_attn.named(&format!("dec.{i}.cross_attn"), &mut out);
            l.ln3.named(&format!("dec.{i}.ln3"), &mut out);
            l.ff.named(&format!("dec.{i}.ff"), &mut out);
        }
        self.dec_ln.named("dec.ln", &mut out);
        self.out.named("dec.out", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<NamedMut<'_, T>> {
        let mut out = Vec::new();
        self.enc_in.named_mut("enc.in", &mut out);
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            l.ln1.named_mut(&format!("enc.{i}.ln1"), &mut out);
            l.attn.named_mut(&format!("enc.{i}.attn"), &mut out);
            l.ln2.named_mut(&format!("enc.{i}.ln2"), &mut out);
            l.ff.named_mut(&format!("enc.{i}.ff"), &mut out);
        }
        self.enc_ln.named_mut("enc.ln", &mut out);
        out.push(NamedMut {
            name: "dec.tok_emb".into(),
            shape: vec![self.config.vocab, self.config.token_embed_dim],
            data: &mut self.tok_emb,
        });
        out.push(NamedMut {
            name: "dec.diff_emb".into(),
            shape: vec![DIFFICULTY_BUCKETS, self.config.difficulty_embed_dim],
            data: &mut self.diff_emb,
        });
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            l.ln1.named_mut(&format!("dec.{i}.ln1"), &mut out);
            l.self_attn.named_mut(&format!("dec.{i}.self_attn"), &mut out);
            l.ln2.named_mut(&format!("dec.{i}.ln2"), &mut out);
            l.cross_attn.named_mut(&format!("dec.{i}.cross_attn"), &mut out);
            l.ln3.named_mut(&format!("dec.{i}.ln3"), &mut out);
            l.ff.named_mut(&format!("dec.{i}.ff"), &mut out);
        }
        self.dec_ln.named_mut("dec.ln", &mut out);
        self.out.named_mut("dec.out", &mut out);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|t| t.data.len()).sum()
    }

    fn check_inputs(&self, frames: &[T], n_frames: usize, tokens: &[TokenId]) -> Result<(), ModelError> {
        if frames.len() != n_frames * self.config.n_mels {
            return Err(ModelError::Shape {
                tensor: "encoder_frames".into(),
                expected: vec![n_frames, self.config.n_mels],
                got: vec![frames.len() / self.config.n_mels.max(1), frames.len() % self.config.n_mels.max(1)],
            });
        }
        if n_frames == 0 {
            return Err(ModelError::Shape { tensor: "encoder_frames".into(), expected: vec![1, self.config.n_mels], got: vec![0] });
        }
        if tokens.is_empty() || tokens.iter().any(|&t| t as usize >= self.config.vocab) {
            return Err(ModelError::Shape {
                tensor: "decoder_tokens".into(),
                expected: vec![tokens.len().max(1)],
                got: vec![tokens.len()],
            });
        }
        Ok(())
    }

    fn encode_cached(
        &self,
        frames: &[T],
        n_frames: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<T>, Option<Vec<T>>, Vec<EncLayerCache<T>>, LnCache<T>) {
        let d = self.config.d_model;
        let mut x = self.enc_in.forward(frames, n_frames);
        for (i, row) in x.chunks_exact_mut(d).enumerate() {
            for (v, pe) in row.iter_mut().zip(position_encoding::<T>(i, d)) {
                *v = *v + pe;
            }
        }
        let drop = dropout_mask(rng.as_deref_mut(), self.config.dropout, x.len());
        apply_mask(&mut x, &drop);
        let mut caches = Vec::with_capacity(self.enc_layers.len());
        for layer in &self.enc_layers {
            let (y, c) = layer.forward(x, n_frames, self.config.dropout, rng.as_deref_mut());
            caches.push(c);
            x = y;
        }
        let (memory, ln) = self.enc_ln.forward(&x);
        (memory, drop, caches, ln)
    }

    /// Encoder output for `n_frames` rows of `n_mels` features.
    pub fn encode(&self, frames: &[T], n_frames: usize) -> Vec<T> {
        self.encode_cached(frames, n_frames, None).0
    }

    fn embed(&self, tokens: &[TokenId], bucket: usize) -> Vec<T> {
        let (te, de, d) = (self.config.token_embed_dim, self.config.difficulty_embed_dim, self.config.d_model);
        let demb = &self.diff_emb[bucket * de..(bucket + 1) * de];
        let mut x = Vec::with_capacity(tokens.len() * d);
        for (i, &t) in tokens.iter().enumerate() {
            let start = x.len();
            x.extend_from_slice(&self.tok_emb[t as usize * te..(t as usize + 1) * te]);
            x.extend_from_slice(demb);
            for (v, pe) in x[start..].iter_mut().zip(position_encoding::<T>(i, d)) {
                *v = *v + pe;
            }
        }
        x
    }

    #[allow(clippy::type_complexity)]
    fn decode_cached(
        &self,
        memory: &[T],
        n_mem: usize,
        tokens: &[TokenId],
        difficulty: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<T>, usize, Option<Vec<T>>, Vec<DecLayerCache<T>>, LnCache<T>, Vec<T>) {
        let bucket = difficulty_bucket(difficulty);
        let n = tokens.len();
        let mut x = self.embed(tokens, bucket);
        let drop = dropout_mask(rng.as_deref_mut(), self.config.dropout, x.len());
        apply_mask(&mut x, &drop);
        let mut caches = Vec::with_capacity(self.dec_layers.len());
        for layer in &self.dec_layers {
            let (y, c) = layer.forward(x, n, memory, n_mem, self.config.dropout, rng.as_deref_mut());
            caches.push(c);
            x = y;
        }
        let (h, ln) = self.dec_ln.forward(&x);
        let logits = self.out.forward(&h, n);
        (logits, bucket, drop, caches, ln, h)
    }

    /// Logits (`tokens.len() x vocab`) given an encoder output.
    pub fn decode(&self, memory: &[T], tokens: &[TokenId], difficulty: f64) -> Vec<T> {
        let n_mem = memory.len() / self.config.d_model;
        self.decode_cached(memory, n_mem, tokens, difficulty, None).0
    }

    /// Inference forward pass; dropout is off.
    pub fn forward(&self, frames: &[T], n_frames: usize, tokens: &[TokenId], difficulty: f64) -> Result<Vec<T>, ModelError> {
        self.check_inputs(frames, n_frames, tokens)?;
        let memory = self.encode(frames, n_frames);
        Ok(self.decode(&memory, tokens, difficulty))
    }

    /// Forward pass keeping activations; `rng` enables dropout.
    pub fn forward_train(
        &self,
        frames: &[T],
        n_frames: usize,
        tokens: &[TokenId],
        difficulty: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, Cache<T>), ModelError> {
        self.check_inputs(frames, n_frames, tokens)?;
        let (memory, enc_drop, enc_layers, enc_ln) = self.encode_cached(frames, n_frames, rng.as_deref_mut());
        let (logits, bucket, dec_drop, dec_layers, dec_ln, dec_out) =
            self.decode_cached(&memory, n_frames, tokens, difficulty, rng);
        let cache = Cache {
            n_frames,
            frames: frames.to_vec(),
            enc_drop,
            enc_layers,
            enc_ln,
            memory,
            tokens: tokens.to_vec(),
            bucket,
            dec_drop,
            dec_layers,
            dec_ln,
            dec_out,
        };
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients of `sum(dlogits * logits)` into `g`.
    pub fn backward(&self, cache: &Cache<T>, dlogits: &[T], g: &mut Model<T>) {
        let (d, te, de) = (self.config.d_model, self.config.token_embed_dim, self.config.difficulty_embed_dim);
        let n = cache.tokens.len();
        let dh = self.out.backward(&cache.dec_out, n, dlogits, &mut g.out, true);
        let mut dx = self.dec_ln.backward(&cache.dec_ln, &dh, &mut g.dec_ln);
        let mut dmem = vec![T::zero(); cache.memory.len()];
        for ((layer, c), gl) in self.dec_layers.iter().zip(&cache.dec_layers).zip(&mut g.dec_layers).rev() {
            let (dxi, dm) = layer.backward(c, n, &cache.memory, dx, gl);
            add_assign(&mut dmem, &dm);
            dx = dxi;
        }
        apply_mask(&mut dx, &cache.dec_drop);
        for (row, &t) in dx.chunks_exact(d).zip(&cache.tokens) {
            add_assign(&mut g.tok_emb[t as usize * te..(t as usize + 1) * te], &row[..te]);
            add_assign(&mut g.diff_emb[cache.bucket * de..(cache.bucket + 1) * de], &row[te..]);
        }

        let mut dx = self.enc_ln.backward(&cache.enc_ln, &dmem, &mut g.enc_ln);
        for ((layer, c), gl) in self.enc_layers.iter().zip(&cache.enc_layers).zip(&mut g.enc_layers).rev() {
            dx = layer.backward(c, cache.n_frames, dx, gl);
        }
        apply_mask(&mut dx, &cache.enc_drop);
        self.enc_in.backward(&cache.frames, cache.n_frames, &dx, &mut g.enc_in, false);
    }

    /// Mean label-smoothed loss of one training pair (no dropout).
    pub fn loss(
        &self,
        frames: &[T],
        n_frames: usize,
        context: &[TokenId],
        target: &[TokenId],
        difficulty: f64,
        eps: f64,
    ) -> Result<f64, ModelError> {
        if effective_len(target) == 0 {
            return Err(ModelError::EmptyTarget);
        }
        let tokens = decoder_input(context, target);
        let logits = self.forward(frames, n_frames, &tokens, difficulty)?;
        let (sum, count, _) = smoothed_xent(&logits, self.config.vocab, context.len(), target, eps);
        Ok(sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn frames(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * 80).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn small() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, token_embed_dim: 12, difficulty_embed_dim: 4, ..ModelConfig::tiny() }
    }

    #[test]
    fn logits_shape() {
        let m: Model<f32> = Model::new(small(), 1).unwrap();
        let tokens = [EOS, EOS, EOS, EOS, EOS, EOS, EOS, SEP];
        let logits = m.forward(&frames(192, 2), 192, &tokens, 3.0).unwrap();
        assert_eq!(logits.len(), 8 * 178);
        assert!(logits.iter().all(|v| v.is_finite()));
        assert!(matches!(m.forward(&frames(192, 2), 191, &tokens, 3.0), Err(ModelError::Shape { .. })));
        assert!(matches!(m.forward(&frames(4, 2), 4, &[178], 3.0), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn difficulty_reaches_every_position() {
        let m: Model<f32> = Model::new(small(), 1).unwrap();
        let f = frames(16, 3);
        let tokens = [EOS, EOS, EOS, 10, 123, EOS, EOS, SEP, 0];
        let a = m.forward(&f, 16, &tokens, 1.0).unwrap();
        let b = m.forward(&f, 16, &tokens, 7.0).unwrap();
        for (ra, rb) in a.chunks(178).zip(b.chunks(178)) {
            assert_ne!(ra, rb);
        }
        // same bucket, same logits
        assert_eq!(m.forward(&f, 16, &tokens, 1.1).unwrap(), a);
    }

    #[test]
    fn encoder_order_matters() {
        let m: Model<f32> = Model::new(small(), 4).unwrap();
        let f = frames(8, 5);
        let mut swapped = f.clone();
        swapped[..80].copy_from_slice(&f[80..160]);
        swapped[80..160].copy_from_slice(&f[..80]);
        let tokens = [SEP, 3];
        assert_ne!(m.forward(&f, 8, &tokens, 2.0).unwrap(), m.forward(&swapped, 8, &tokens, 2.0).unwrap());
    }

    #[test]
    fn decoder_is_causal() {
        let m: Model<f32> = Model::new(small(), 6).unwrap();
        let f = frames(8, 7);
        let a = [EOS, EOS, EOS, EOS, EOS, EOS, EOS, SEP, 12, 100, 40, 130];
        let mut b = a;
        b[10] = 41;
        let la = m.forward(&f, 8, &a, 2.0).unwrap();
        let lb = m.forward(&f, 8, &b, 2.0).unwrap();
        assert_eq!(la[..10 * 178], lb[..10 * 178]);
        assert_ne!(la[10 * 178..], lb[10 * 178..]);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = vec![0.0f64; 10 * 178];
        let (sum, n, _) = smoothed_xent(&logits, 178, 7, &[5, 120, EOS], 0.02);
        assert_eq!(n, 3);
        assert!((sum / 3.0 - 178f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_hit_the_smoothing_floor() {
        let target = [5u32, EOS];
        let mut logits = vec![0.0f64; 9 * 178];
        for (j, &t) in target.iter().enumerate() {
            logits[(7 + j) * 178 + t as usize] = 60.0;
        }
        let (sum, n, _) = smoothed_xent(&logits, 178, 7, &target, 0.02);
        let loss = sum / n as f64;
        // q_other * 60 over 177 wrong classes dominates the floor
        let expected = 0.02 / 178.0 * 177.0 * 60.0;
        assert!(loss > 0.0 && (loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    }

    #[test]
    fn positions_after_eos_are_ignored() {
        assert_eq!(effective_len(&[1, 100, EOS, EOS, 5]), 3);
        assert_eq!(decoder_input(&[EOS; 7], &[1, 100, EOS, 9]), vec![EOS, EOS, EOS, EOS, EOS, EOS, EOS, SEP, 1, 100]);
        let logits: Vec<f64> = (0..12 * 178).map(|i| (i % 7) as f64).collect();
        let a = smoothed_xent(&logits, 178, 7, &[1, 100, EOS], 0.02);
        let b = smoothed_xent(&logits, 178, 7, &[1, 100, EOS, 3, 4], 0.02);
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn cast_round_trip_is_exact_for_f32() {
        let m: Model<f32> = Model::new(small(), 8).unwrap();
        assert_eq!(m.cast::<f64>().cast::<f32>(), m);
        assert_eq!(m.named().len(), m.zeros_like().named().len());
    }
}
