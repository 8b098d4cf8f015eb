//! Gumbel-softmax product quantizer.
//!
//! A latent vector is projected to `G × V` logits; each of the `G` codebooks
//! picks one of its `V` entries through a Gumbel-softmax, the picked entries
//! are concatenated and projected to the quantized vector `q`. In hard mode
//! the forward pass uses the one-hot argmax while gradients flow through the
//! soft probabilities (straight-through).

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, prefixed_mut, slice2, slice2_mut, Linear, Params};
use crate::rng::{hash_str, rng_from};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub groups: usize,
    pub entries: usize,
    /// Per-codebook entry size; `None` means `out_dim / groups`.
    pub entry_dim: Option<usize>,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            groups: 2,
            entries: 32,
            entry_dim: None,
            tau_start: 2.0,
            tau_end: 0.5,
        }
    }
}

impl QuantizerConfig {
    /// Geometric anneal from `tau_start` at step 0 to `tau_end` at the last step.
    pub fn tau_at(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps <= 1 {
            return self.tau_start;
        }
        let frac = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
        self.tau_start * (self.tau_end / self.tau_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer<S> {
    pub groups: usize,
    pub entries: usize,
    pub entry_dim: usize,
    pub proj_in: Linear<S>,
    /// `(G·V) × entry_dim`; rows `g·V..(g+1)·V` belong to codebook g.
    pub codebook: Array2<S>,
    pub proj_out: Linear<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOutput<S> {
    pub q: Array2<S>,
    /// `n × (G·V)` Gumbel-softmax probabilities.
    pub probs: Array2<S>,
    /// `n × G` chosen entry per codebook.
    pub hard_indices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct QuantizeCache<S> {
    latent: Array2<S>,
    probs: Array2<S>,
    selection: Array2<S>,
    concat: Array2<S>,
    tau: S,
}

/// One Gumbel sample `-ln(-ln u)`, `u ~ U(0,1)` with 0 excluded.
pub fn gumbel<S: Scalar>(rng: &mut impl Rng) -> S {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    S::of(-(-u.ln()).ln())
}

pub fn gumbel_noise<S: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<S> {
    Array2::from_shape_fn((rows, cols), |_| gumbel(rng))
}

/// Noise for the given frames of one utterance; each frame has its own
/// stream keyed by (seed, utterance id, frame index).
pub fn frame_noise<S: Scalar>(seed: u64, utt_id: &str, frames: &[usize], cols: usize) -> Array2<S> {
    let mut out = Array2::zeros((frames.len(), cols));
    let id = hash_str(utt_id);
    for (mut row, &t) in out.rows_mut().into_iter().zip(frames) {
        let mut rng = rng_from(seed, &[id, t as u64]);
        row.mapv_inplace(|_| gumbel(&mut rng));
    }
    out
}

/// `p[g, v] = softmax_v((logits[g, v] + noise[g, v]) / tau)` for `G × V`
/// inputs.
pub fn gumbel_probs<S: Scalar>(logits: &Array2<S>, tau: S, noise: &Array2<S>) -> Result<Array2<S>> {
    if !(tau > S::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if logits.shape() != noise.shape() {
        return Err(Error::DimensionMismatch {
            what: "noise shape",
            expected: logits.len(),
            got: noise.len(),
        });
    }
    if logits.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gumbel-softmax logits".into()));
    }
    let mut z = (logits + noise) / tau;
    crate::nn::softmax_rows(&mut z);
    Ok(z)
}

/// Mean of the probabilities over every frame, reshaped `G × V`.
pub fn usage_stats<S: Scalar>(outputs: &[&Array2<S>], groups: usize) -> Result<Array2<S>> {
    let frames: usize = outputs.iter().map(|p| p.nrows()).sum();
    if frames == 0 {
        return Err(Error::invalid("usage statistics need at least one frame"));
    }
    let cols = outputs[0].ncols();
    let mut sum = ndarray::Array1::<S>::zeros(cols);
    for p in outputs {
        for r in p.rows() {
            sum += &r;
        }
    }
    let mean = sum / S::of_usize(frames);
    Ok(mean
        .into_shape_with_order((groups, cols / groups))
        .expect("cols divisible by groups"))
}

fn argmax<S: Scalar>(xs: impl Iterator<Item = S>) -> usize {
    let mut best = (0, S::neg_infinity());
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

impl<S: Scalar> Quantizer<S> {
    pub fn new(latent_dim: usize, out_dim: usize, cfg: &QuantizerConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.groups == 0 || cfg.entries == 0 {
            return Err(Error::invalid("quantizer needs G >= 1 and V >= 1"));
        }
        if !(cfg.tau_start > 0.0 && cfg.tau_end > 0.0) {
            return Err(Error::invalid("quantizer temperatures must be positive"));
        }
        let entry_dim = cfg.entry_dim.unwrap_or(out_dim / cfg.groups).max(1);
        let gv = cfg.groups * cfg.entries;
        let bound = 1.0 / (entry_dim as f64).sqrt();
        let proj_in = Linear::new(latent_dim, gv, rng);
        let codebook =
            Array2::from_shape_fn((gv, entry_dim), |_| S::of(rng.gen_range(-bound..bound)));
        let proj_out = Linear::new(cfg.groups * entry_dim, out_dim, rng);
        Ok(Quantizer {
            groups: cfg.groups,
            entries: cfg.entries,
            entry_dim,
            proj_in,
            codebook,
            proj_out,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.proj_in.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.proj_out.output_dim()
    }

    fn group_cols(&self, g: usize) -> std::ops::Range<usize> {
        g * self.entries..(g + 1) * self.entries
    }

    /// Quantizes `n` latent rows with caller-supplied `n × (G·V)` noise.
    pub fn quantize(
        &self,
        latent: &Array2<S>,
        noise: &Array2<S>,
        tau: S,
        hard: bool,
    ) -> Result<(QuantizeOutput<S>, QuantizeCache<S>)> {
        if latent.ncols() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                what: "quantizer latent dim",
                expected: self.latent_dim(),
                got: latent.ncols(),
            });
        }
        let gv = self.groups * self.entries;
        if noise.dim() != (latent.nrows(), gv) {
            return Err(Error::DimensionMismatch {
                what: "quantizer noise columns",
                expected: gv,
                got: noise.ncols(),
            });
        }
        if !(tau > S::zero()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let n = latent.nrows();
        let logits = self.proj_in.forward(latent);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantizer logits".into()));
        }
        let mut probs = Array2::zeros((n, gv));
        let mut hard_indices = vec![vec![0; self.groups]; n];
        for g in 0..self.groups {
            let cols = self.group_cols(g);
            let mut z = (&logits.slice(s![.., cols.clone()]) + &noise.slice(s![.., cols.clone()])) / tau;
            for (r, row) in z.rows().into_iter().enumerate() {
                hard_indices[r][g] = argmax(row.iter().copied());
            }
            crate::nn::softmax_rows(&mut z);
            probs.slice_mut(s![.., cols]).assign(&z);
        }
        let selection = if hard {
            let mut y = Array2::zeros((n, gv));
            for (r, idx) in hard_indices.iter().enumerate() {
                for (g, &v) in idx.iter().enumerate() {
                    y[[r, g * self.entries + v]] = S::one();
                }
            }
            y
        } else {
            probs.clone()
        };
        let mut concat = Array2::zeros((n, self.groups * self.entry_dim));
        for g in 0..self.groups {
            let e = selection
                .slice(s![.., self.group_cols(g)])
                .dot(&self.codebook.slice(s![self.group_cols(g), ..]));
            concat
                .slice_mut(s![.., g * self.entry_dim..(g + 1) * self.entry_dim])
                .assign(&e);
        }
        let q = self.proj_out.forward(&concat);
        let cache = QuantizeCache {
            latent: latent.clone(),
            probs: probs.clone(),
            selection,
            concat,
            tau,
        };
        Ok((
            QuantizeOutput {
                q,
                probs,
                hard_indices,
            },
            cache,
        ))
    }

    /// Backpropagates `dq` (and an optional direct gradient on the
    /// probabilities) and returns the gradient w.r.t. the latent rows.
    pub fn backward(
        &self,
        cache: &QuantizeCache<S>,
        dq: &Array2<S>,
        dprobs: Option<&Array2<S>>,
        grad: &mut Quantizer<S>,
    ) -> Array2<S> {
        let dconcat = self.proj_out.backward(&cache.concat, dq, &mut grad.proj_out);
        let n = dq.nrows();
        let mut dsel = Array2::zeros((n, self.groups * self.entries));
        for g in 0..self.groups {
            let ecols = g * self.entry_dim..(g + 1) * self.entry_dim;
            let de = dconcat.slice(s![.., ecols]);
            let rows = self.group_cols(g);
            let sel = cache.selection.slice(s![.., rows.clone()]);
            let mut dcb = grad.codebook.slice_mut(s![rows.clone(), ..]);
            dcb += &sel.t().dot(&de);
            dsel.slice_mut(s![.., rows.clone()])
                .assign(&de.dot(&self.codebook.slice(s![rows, ..]).t()));
        }
        if let Some(dp) = dprobs {
            dsel += dp;
        }
        let mut dlogits = Array2::zeros(dsel.raw_dim());
        for g in 0..self.groups {
            let cols = self.group_cols(g);
            let p = cache.probs.slice(s![.., cols.clone()]).to_owned();
            let d = dsel.slice(s![.., cols.clone()]).to_owned();
            let dz = crate::nn::softmax_rows_backward(&p, &d) / cache.tau;
            dlogits.slice_mut(s![.., cols]).assign(&dz);
        }
        self.proj_in.backward(&cache.latent, &dlogits, &mut grad.proj_in)
    }
}

impl<S: Scalar> Params<S> for Quantizer<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut v = prefixed("proj_in", self.proj_in.params());
        v.push((
            "codebook".into(),
            self.codebook.shape().to_vec(),
            slice2(&self.codebook),
        ));
        v.extend(prefixed("proj_out", self.proj_out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut v = prefixed_mut("proj_in", self.proj_in.params_mut());
        v.push(("codebook".into(), slice2_mut(&mut self.codebook)));
        v.extend(prefixed_mut("proj_out", self.proj_out.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn quantizer(seed: u64, v: usize) -> Quantizer<f64> {
        let mut rng = rng_from(seed, &[]);
        Quantizer::new(
            6,
            4,
            &QuantizerConfig {
                groups: 2,
                entries: v,
                ..QuantizerConfig::default()
            },
            &mut rng,
        )
        .unwrap()
    }

    fn rand2(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed, &[]);
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn symmetric_logits_give_half() {
        let p = gumbel_probs(&array![[0.0, 0.0]], 1.0, &array![[0.0, 0.0]]).unwrap();
        assert_eq!(p, array![[0.5, 0.5]]);
    }

    #[test]
    fn closed_form_two_thirds() {
        let p = gumbel_probs(&array![[2f64.ln(), 0.0]], 1.0, &array![[0.0, 0.0]]).unwrap();
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_extended_precision_oracle() {
        let mut rng = rng_from(12, &[]);
        let logits = rand2(3, 7, 1) * 4.0;
        let noise: Array2<f64> = gumbel_noise(3, 7, &mut rng);
        let p = gumbel_probs(&logits, 0.5, &noise).unwrap();
        // oracle: exact sums in f64 pairs (Kahan-style two-sum), no max shift
        for g in 0..3 {
            let xs: Vec<f64> = (0..7).map(|v| ((logits[[g, v]] + noise[[g, v]]) / 0.5).exp()).collect();
            let (mut hi, mut lo) = (0.0f64, 0.0f64);
            for &x in &xs {
                let s = hi + x;
                let bp = s - hi;
                lo += (hi - (s - bp)) + (x - bp);
                hi = s;
            }
            let z = hi + lo;
            for v in 0..7 {
                assert!((p[[g, v]] - xs[v] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let l = array![[0.0, 1.0]];
        let n = array![[0.0, 0.0]];
        assert!(gumbel_probs(&l, 0.0, &n).is_err());
        assert!(gumbel_probs(&array![[f64::NAN, 0.0]], 1.0, &n).is_err());
        let q = quantizer(1, 3);
        assert!(q.quantize(&rand2(2, 5, 0), &Array2::zeros((2, 6)), 1.0, true).is_err());
    }

    #[test]
    fn single_entry_codebook_ignores_logits() {
        let q = quantizer(3, 1);
        let a = q.quantize(&rand2(4, 6, 1), &Array2::zeros((4, 2)), 1.0, true).unwrap().0;
        let b = q.quantize(&(rand2(4, 6, 2) * 9.0), &Array2::zeros((4, 2)), 1.0, true).unwrap().0;
        assert_eq!(a.q, b.q);
        assert!(a.hard_indices.iter().all(|r| r == &vec![0, 0]));
    }

    #[test]
    fn hard_forward_uses_argmax_entries() {
        let q = quantizer(5, 4);
        let latent = rand2(3, 6, 3);
        let mut rng = rng_from(9, &[]);
        let noise = gumbel_noise(3, 8, &mut rng);
        let (out, _) = q.quantize(&latent, &noise, 0.7, true).unwrap();
        let logits = q.proj_in.forward(&latent) + &noise;
        for r in 0..3 {
            let mut concat = Vec::new();
            for g in 0..2 {
                let best = (0..4)
                    .max_by(|&a, &b| logits[[r, g * 4 + a]].total_cmp(&logits[[r, g * 4 + b]]))
                    .unwrap();
                assert_eq!(out.hard_indices[r][g], best);
                concat.extend(q.codebook.row(g * 4 + best).iter().copied());
            }
            let expect = ndarray::Array1::from(concat).dot(&q.proj_out.w) + &q.proj_out.b;
            for (a, b) in out.q.row(r).iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_sharpen_with_low_tau() {
        let q = quantizer(7, 8);
        let latent = rand2(5, 6, 4);
        let mut rng = rng_from(2, &[]);
        let noise = gumbel_noise(5, 16, &mut rng);
        let mut last_max = vec![0.0; 5];
        for &tau in &[1.0, 0.1, 0.01] {
            let (out, _) = q.quantize(&latent, &noise, tau, true).unwrap();
            for r in 0..5 {
                for g in 0..2 {
                    let row = out.probs.slice(s![r, g * 8..(g + 1) * 8]);
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                    assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                }
                let m = out.probs.slice(s![r, 0..8]).fold(0.0f64, |a, &b| a.max(b));
                assert!(m >= last_max[r]);
                last_max[r] = m;
                assert_eq!(
                    argmax(out.probs.slice(s![r, 0..8]).iter().copied()),
                    out.hard_indices[r][0]
                );
            }
        }
        assert!(last_max.iter().all(|&m| m > 0.99));
    }

    #[test]
    fn deterministic_frame_noise() {
        let a: Array2<f64> = frame_noise(3, "utt", &[0, 5, 9], 4);
        let b: Array2<f64> = frame_noise(3, "utt", &[5], 4);
        assert_eq!(a.row(1), b.row(0));
        let c: Array2<f64> = frame_noise(3, "other", &[5], 4);
        assert_ne!(b, c);
    }

    #[test]
    fn usage_stats_cases() {
        let one: Array2<f64> = array![[0.2, 0.8, 0.5, 0.5]];
        assert_eq!(usage_stats(&[&one], 2).unwrap(), array![[0.2, 0.8], [0.5, 0.5]]);
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        assert_eq!(usage_stats(&[&a, &b], 1).unwrap(), array![[0.5, 0.5]]);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(usage_stats(&[&empty], 1).is_err());
    }

    #[test]
    fn usage_stats_matches_naive_sum() {
        let mut rng = rng_from(5, &[]);
        let frames: Vec<Array2<f64>> = (0..3)
            .map(|i| {
                let mut p = rand2(2 + i, 6, i as u64).mapv(f64::exp);
                for g in 0..2 {
                    let mut blk = p.slice_mut(s![.., g * 3..(g + 1) * 3]);
                    for mut r in blk.rows_mut() {
                        let z = r.sum();
                        r.mapv_inplace(|v| v / z);
                    }
                }
                let _ = rng.gen::<u8>();
                p
            })
            .collect();
        let refs: Vec<&Array2<f64>> = frames.iter().collect();
        let got = usage_stats(&refs, 2).unwrap();
        let mut naive = [[0.0f64; 3]; 2];
        let mut n = 0.0;
        for p in &frames {
            for r in 0..p.nrows() {
                n += 1.0;
                for g in 0..2 {
                    for v in 0..3 {
                        naive[g][v] += p[[r, g * 3 + v]];
                    }
                }
            }
        }
        for g in 0..2 {
            let s: f64 = got.row(g).sum();
            assert!((s - 1.0).abs() < 1e-6);
            for v in 0..3 {
                assert!((got[[g, v]] - naive[g][v] / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tau_schedule_endpoints() {
        let c = QuantizerConfig::default();
        assert_eq!(c.tau_at(0, 100), 2.0);
        assert!((c.tau_at(99, 100) - 0.5).abs() < 1e-12);
        assert!(c.tau_at(50, 100) < c.tau_at(10, 100));
        assert_eq!(c.tau_at(0, 1), 2.0);
    }
}
