//! Transformer building blocks. Each layer's `forward` returns whatever its
//! `backward` needs; `backward` accumulates parameter gradients into a
//! same-shaped layer and returns the input gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{add_assign, matmul, matmul_into, Scalar, View};

pub const LN_EPS: f64 = 1e-5;

/// Named tensor reference with its shape, used for saving, Adam and checks.
pub struct Named<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a Vec<T>,
}

pub struct NamedMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<T>,
}

pub(crate) fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| T::from_f64c(rng.gen_range(-limit..limit))).collect()
}

fn cast<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64c(x.to_f64().unwrap())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_in x n_out`, row-major.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: glorot(rng, n_in, n_out), b: vec![T::zero(); n_out] }
    }

    pub fn zeros_like(&self) -> Self {
        Self { n_in: self.n_in, n_out: self.n_out, w: vec![T::zero(); self.w.len()], b: vec![T::zero(); self.b.len()] }
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear { n_in: self.n_in, n_out: self.n_out, w: cast(&self.w), b: cast(&self.b) }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(n * self.n_out);
        for _ in 0..n {
            y.extend_from_slice(&self.b);
        }
        matmul_into(View::new(x, n, self.n_in), View::new(&self.w, self.n_in, self.n_out), &mut y, self.n_out, 1, true);
        y
    }

    pub fn backward(&self, x: &[T], n: usize, dy: &[T], g: &mut Linear<T>, need_dx: bool) -> Vec<T> {
        matmul_into(
            View::new(x, n, self.n_in).t(),
            View::new(dy, n, self.n_out),
            &mut g.w,
            self.n_out,
            1,
            true,
        );
        for row in dy.chunks_exact(self.n_out) {
            add_assign(&mut g.b, row);
        }
        if !need_dx {
            return Vec::new();
        }
        matmul(View::new(dy, n, self.n_out), View::new(&self.w, self.n_in, self.n_out).t())
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named { name: format!("{prefix}.w"), shape: vec![self.n_in, self.n_out], data: &self.w });
        out.push(Named { name: format!("{prefix}.b"), shape: vec![self.n_out], data: &self.b });
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        out.push(NamedMut { name: format!("{prefix}.w"), shape: vec![self.n_in, self.n_out], data: &mut self.w });
        out.push(NamedMut { name: format!("{prefix}.b"), shape: vec![self.n_out], data: &mut self.b });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

pub struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self { gain: vec![T::one(); d], bias: vec![T::zero(); d] }
    }

    pub fn zeros_like(&self) -> Self {
        Self { gain: vec![T::zero(); self.gain.len()], bias: vec![T::zero(); self.bias.len()] }
    }

    pub fn cast<U: Scalar>(&self) -> LayerNorm<U> {
        LayerNorm { gain: cast(&self.gain), bias: cast(&self.bias) }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LnCache<T>) {
        let d = self.gain.len();
        let dn = T::from_usize(d).unwrap();
        let eps = T::from_f64c(LN_EPS);
        let mut y = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.len() / d);
        for row in x.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                y.push(h * self.gain[i] + self.bias[i]);
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache<T>, dy: &[T], g: &mut LayerNorm<T>) -> Vec<T> {
        let d = self.gain.len();
        let dn = T::from_usize(d).unwrap();
        let mut dx = Vec::with_capacity(dy.len());
        let mut dxhat = vec![T::zero(); d];
        for (r, (dyr, xh)) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).enumerate() {
            let mut sum = T::zero();
            let mut dot = T::zero();
            for i in 0..d {
                g.gain[i] = g.gain[i] + dyr[i] * xh[i];
                g.bias[i] = g.bias[i] + dyr[i];
                dxhat[i] = dyr[i] * self.gain[i];
                sum = sum + dxhat[i];
                dot = dot + dxhat[i] * xh[i];
            }
            let is = cache.inv_std[r];
            for i in 0..d {
                dx.push(is / dn * (dn * dxhat[i] - sum - xh[i] * dot));
            }
        }
        dx
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        let d = self.gain.len();
        out.push(Named { name: format!("{prefix}.gain"), shape: vec![d], data: &self.gain });
        out.push(Named { name: format!("{prefix}.bias"), shape: vec![d], data: &self.bias });
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        let d = self.gain.len();
        out.push(NamedMut { name: format!("{prefix}.gain"), shape: vec![d], data: &mut self.gain });
        out.push(NamedMut { name: format!("{prefix}.bias"), shape: vec![d], data: &mut self.bias });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

pub struct AttnCache<T> {
    nq: usize,
    nk: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads x nq x nk` attention weights.
    p: Vec<T>,
    concat: Vec<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::new(rng, d, d),
            k: Linear::new(rng, d, d),
            v: Linear::new(rng, d, d),
            o: Linear::new(rng, d, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads,
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Attention<U> {
        Attention { heads: self.heads, q: self.q.cast(), k: self.k.cast(), v: self.v.cast(), o: self.o.cast() }
    }

    fn d(&self) -> usize {
        self.q.n_in
    }

    /// Queries from `xq` (`nq` rows) attend over `xkv` (`nk` rows). With
    /// `causal`, query `i` only sees keys `0..=i`.
    pub fn forward(&self, xq: &[T], nq: usize, xkv: &[T], nk: usize, causal: bool) -> (Vec<T>, AttnCache<T>) {
        let d = self.d();
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let q = self.q.forward(xq, nq);
        let k = self.k.forward(xkv, nk);
        let v = self.v.forward(xkv, nk);
        let mut p = vec![T::zero(); self.heads * nq * nk];
        let mut concat = vec![T::zero(); nq * d];
        for h in 0..self.heads {
            let ph = &mut p[h * nq * nk..(h + 1) * nq * nk];
            matmul_into(View::cols_of(&q, nq, d, h * dh, dh), View::cols_of(&k, nk, d, h * dh, dh).t(), ph, nk, 1, false);
            for (i, row) in ph.chunks_exact_mut(nk).enumerate() {
                let visible = if causal { i + 1 } else { nk };
                let mut max = T::neg_infinity();
                for s in &mut row[..visible] {
                    *s = *s * scale;
                    max = max.max(*s);
                }
                let mut sum = T::zero();
                for s in &mut row[..visible] {
                    *s = (*s - max).exp();
                    sum = sum + *s;
                }
                for s in &mut row[..visible] {
                    *s = *s / sum;
                }
                for s in &mut row[visible..] {
                    *s = T::zero();
                }
            }
            matmul_into(View::new(ph, nq, nk), View::cols_of(&v, nk, d, h * dh, dh), &mut concat[h * dh..], d, 1, false);
        }
        let out = self.o.forward(&concat, nq);
        (out, AttnCache { nq, nk, q, k, v, p, concat })
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward(
        &self,
        cache: &AttnCache<T>,
        xq: &[T],
        xkv: &[T],
        dout: &[T],
        g: &mut Attention<T>,
    ) -> (Vec<T>, Vec<T>) {
        let d = self.d();
        let dh = d / self.heads;
        let (nq, nk) = (cache.nq, cache.nk);
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let dconcat = self.o.backward(&cache.concat, nq, dout, &mut g.o, true);
        let mut dq = vec![T::zero(); nq * d];
        let mut dk = vec![T::zero(); nk * d];
        let mut dv = vec![T::zero(); nk * d];
        let mut dp = vec![T::zero(); nq * nk];
        for h in 0..self.heads {
            let ph = &cache.p[h * nq * nk..(h + 1) * nq * nk];
            let dconcat_h = View::cols_of(&dconcat, nq, d, h * dh, dh);
            // dV_h = Pᵀ dO_h ; dP = dO_h V_hᵀ
            matmul_into(View::new(ph, nq, nk).t(), dconcat_h, &mut dv[h * dh..], d, 1, false);
            matmul_into(dconcat_h, View::cols_of(&cache.v, nk, d, h * dh, dh).t(), &mut dp, nk, 1, false);
            // softmax backward, folded with the score scale
            for (prow, dprow) in ph.chunks_exact(nk).zip(dp.chunks_exact_mut(nk)) {
                let dot: T = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
                for (ds, &pv) in dprow.iter_mut().zip(prow) {
                    *ds = pv * (*ds - dot) * scale;
                }
            }
            matmul_into(View::new(&dp, nq, nk), View::cols_of(&cache.k, nk, d, h * dh, dh), &mut dq[h * dh..], d, 1, false);
            matmul_into(View::new(&dp, nq, nk).t(), View::cols_of(&cache.q, nq, d, h * dh, dh), &mut dk[h * dh..], d, 1, false);
        }
        let dxq = self.q.backward(xq, nq, &dq, &mut g.q, true);
        let mut dxkv = self.k.backward(xkv, nk, &dk, &mut g.k, true);
        add_assign(&mut dxkv, &self.v.backward(xkv, nk, &dv, &mut g.v, true));
        (dxq, dxkv)
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.q.named(&format!("{prefix}.q"), out);
        self.k.named(&format!("{prefix}.k"), out);
        self.v.named(&format!("{prefix}.v"), out);
        self.o.named(&format!("{prefix}.o"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.q.named_mut(&format!("{prefix}.q"), out);
        self.k.named_mut(&format!("{prefix}.k"), out);
        self.v.named_mut(&format!("{prefix}.v"), out);
        self.o.named_mut(&format!("{prefix}.o"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

pub struct FfCache<T> {
    h: Vec<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> Self {
        Self { l1: Linear::new(rng, d, d_ff), l2: Linear::new(rng, d_ff, d) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { l1: self.l1.zeros_like(), l2: self.l2.zeros_like() }
    }

    pub fn cast<U: Scalar>(&self) -> FeedForward<U> {
        FeedForward { l1: self.l1.cast(), l2: self.l2.cast() }
    }

    pub fn forward(&self, x: &[T], n: usize) -> (Vec<T>, FfCache<T>) {
        let mut h = self.l1.forward(x, n);
        for v in &mut h {
            *v = v.max(T::zero());
        }
        (self.l2.forward(&h, n), FfCache { h })
    }

    pub fn backward(&self, cache: &FfCache<T>, x: &[T], n: usize, dy: &[T], g: &mut FeedForward<T>) -> Vec<T> {
        let mut dh = self.l2.backward(&cache.h, n, dy, &mut g.l2, true);
        for (d, &h) in dh.iter_mut().zip(&cache.h) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        self.l1.backward(x, n, &dh, &mut g.l1, true)
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.l1.named(&format!("{prefix}.l1"), out);
        self.l2.named(&format!("{prefix}.l2"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a, T>>) {
        self.l1.named_mut(&format!("{prefix}.l1"), out);
        self.l2.named_mut(&format!("{prefix}.l2"), out);
    }
}

/// Inverted dropout mask (`0` or `1/(1-p)`), or `None` when inactive.
pub fn dropout_mask<T: Scalar>(rng: Option<&mut ChaCha8Rng>, p: f64, len: usize) -> Option<Vec<T>> {
    let rng = rng.filter(|_| p > 0.0)?;
    let keep = T::from_f64c(1.0 / (1.0 - p));
    Some((0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect())
}

pub fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v = *v * k;
        }
    }
}
