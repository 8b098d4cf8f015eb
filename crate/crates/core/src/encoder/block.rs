use ndarray::{s, Array2};
use rand::Rng;

use crate::nn::{
    gelu, gelu_grad, prefixed, prefixed_mut, softmax_rows, softmax_rows_backward, LayerNorm,
    LayerNormCache, Linear, Params,
};
use crate::scalar::Scalar;

/// Pre-norm transformer block: `x + MHA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<S> {
    pub heads: usize,
    pub ln1: LayerNorm<S>,
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
    pub ln2: LayerNorm<S>,
    pub ff1: Linear<S>,
    pub ff2: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<S> {
    ln1: LayerNormCache<S>,
    a: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    attn: Vec<Array2<S>>,
    o: Array2<S>,
    ln2: LayerNormCache<S>,
    c: Array2<S>,
    f1: Array2<S>,
    g: Array2<S>,
}

impl<S: Scalar> Block<S> {
    pub fn new(d: usize, heads: usize, ffn: usize, rng: &mut impl Rng) -> Self {
        Block {
            heads,
            ln1: LayerNorm::new(d),
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, ffn, rng),
            ff2: Linear::new(ffn, d, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.wq.output_dim() / self.heads
    }

    pub fn forward(&self, x: &Array2<S>) -> (Array2<S>, BlockCache<S>) {
        let (a, ln1) = self.ln1.forward(x);
        let q = self.wq.forward(&a);
        let k = self.wk.forward(&a);
        let v = self.wv.forward(&a);
        let dh = self.head_dim();
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut o = Array2::zeros(q.raw_dim());
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut sc);
            o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            attn.push(sc);
        }
        let mid = x + &self.wo.forward(&o);
        let (c, ln2) = self.ln2.forward(&mid);
        let f1 = self.ff1.forward(&c);
        let g = f1.mapv(gelu);
        let out = &mid + &self.ff2.forward(&g);
        let cache = BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            o,
            ln2,
            c,
            f1,
            g,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &BlockCache<S>, dy: &Array2<S>, grad: &mut Block<S>) -> Array2<S> {
        // feed-forward branch
        let dg = self.ff2.backward(&cache.g, dy, &mut grad.ff2);
        let df1 = dg * &cache.f1.mapv(gelu_grad);
        let dc = self.ff1.backward(&cache.c, &df1, &mut grad.ff1);
        let dmid = dy + &self.ln2.backward(&cache.ln2, &dc, &mut grad.ln2);

        // attention branch
        let do_ = self.wo.backward(&cache.o, &dmid, &mut grad.wo);
        let dh = self.head_dim();
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &cache.attn[h];
            let doh = do_.slice(cols);
            let da = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&doh));
            let ds = softmax_rows_backward(a, &da) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let da = self.wq.backward(&cache.a, &dq, &mut grad.wq)
            + self.wk.backward(&cache.a, &dk, &mut grad.wk)
            + self.wv.backward(&cache.a, &dv, &mut grad.wv);
        dmid + self.ln1.backward(&cache.ln1, &da, &mut grad.ln1)
    }
}

impl<S: Scalar> Params<S> for Block<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut v = prefixed("ln1", self.ln1.params());
        v.extend(prefixed("wq", self.wq.params()));
        v.extend(prefixed("wk", self.wk.params()));
        v.extend(prefixed("wv", self.wv.params()));
        v.extend(prefixed("wo", self.wo.params()));
        v.extend(prefixed("ln2", self.ln2.params()));
        v.extend(prefixed("ff1", self.ff1.params()));
        v.extend(prefixed("ff2", self.ff2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut v = prefixed_mut("ln1", self.ln1.params_mut());
        v.extend(prefixed_mut("wq", self.wq.params_mut()));
        v.extend(prefixed_mut("wk", self.wk.params_mut()));
        v.extend(prefixed_mut("wv", self.wv.params_mut()));
        v.extend(prefixed_mut("wo", self.wo.params_mut()));
        v.extend(prefixed_mut("ln2", self.ln2.params_mut()));
        v.extend(prefixed_mut("ff1", self.ff1.params_mut()));
        v.extend(prefixed_mut("ff2", self.ff2.params_mut()));
        v
    }
}
