//! Objective terms: masked content cross-entropy, utterance-wise contrastive
//! loss, codebook diversity, and their weighted combination.
//!
//! Every term returns its value together with the gradient w.r.t. its
//! inputs. Reductions are means (over masked frames, over contrastive pair
//! terms, over `G·V` codebook cells).

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::MaskSet;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Diversity weight.
    pub alpha: f64,
    /// Content weight.
    pub beta: f64,
    /// Contrastive temperature.
    pub kappa: f64,
    pub num_negatives: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 1.0,
            kappa: 0.1,
            num_negatives: 100,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("loss weights alpha and beta must be >= 0"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("contrastive temperature kappa must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub diversity: f64,
    pub speaker: f64,
    pub content: f64,
    pub total: f64,
    #[serde(skip)]
    pub positives: usize,
    #[serde(skip)]
    pub negatives: usize,
    #[serde(skip)]
    pub masked_frames: usize,
}

/// `speaker = contrastive + α·diversity`, `total = speaker + β·content`.
pub fn combine(contrastive: f64, diversity: f64, content: f64, w: &LossWeights) -> Result<LossBreakdown> {
    if ![contrastive, diversity, content].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss terms contrastive={contrastive} diversity={diversity} content={content}"
        )));
    }
    let speaker = contrastive + w.alpha * diversity;
    Ok(LossBreakdown {
        contrastive,
        diversity,
        speaker,
        content,
        total: speaker + w.beta * content,
        ..LossBreakdown::default()
    })
}

/// `-log σ(x)`, stable for large |x|.
#[inline]
pub fn neg_log_sigmoid<S: Scalar>(x: S) -> S {
    (-x).max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Mean negative log-likelihood of the labels at the masked frames of a
/// batch. Returns the loss, one logit gradient per utterance, and the number
/// of masked frames.
pub fn content_loss_batch<S: Scalar>(
    items: &[(&Array2<S>, &[usize], &MaskSet)],
) -> Result<(S, Vec<Array2<S>>, usize)> {
    let count: usize = items.iter().map(|(_, _, m)| m.count()).sum();
    if count == 0 {
        return Err(Error::invalid("content loss needs at least one masked frame"));
    }
    let inv = S::one() / S::of_usize(count);
    let mut loss = S::zero();
    let mut grads = Vec::with_capacity(items.len());
    for (logits, labels, mask) in items {
        if labels.len() != logits.nrows() {
            return Err(Error::DimensionMismatch {
                what: "labels vs logit frames",
                expected: logits.nrows(),
                got: labels.len(),
            });
        }
        let k = logits.ncols();
        let mut g = Array2::zeros(logits.raw_dim());
        for &t in mask.indices() {
            let z = *labels
                .get(t)
                .ok_or_else(|| Error::invalid(format!("masked frame {t} has no label")))?;
            if z >= k {
                return Err(Error::invalid(format!("label {z} >= k={k}")));
            }
            let row = logits.row(t);
            let m = row.fold(S::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
            loss += (lse - row[z]) * inv;
            let mut gr = g.row_mut(t);
            for (j, o) in gr.iter_mut().enumerate() {
                let p = (row[j] - lse).exp();
                *o = (p - if j == z { S::one() } else { S::zero() }) * inv;
            }
        }
        grads.push(g);
    }
    Ok((loss, grads, count))
}

/// Single-utterance content loss.
pub fn content_loss<S: Scalar>(
    logits: &Array2<S>,
    labels: &[usize],
    mask: &MaskSet,
) -> Result<(S, Array2<S>)> {
    let (l, mut g, _) = content_loss_batch(&[(logits, labels, mask)])?;
    Ok((l, g.pop().expect("one item")))
}

/// `(1/(G·V)) Σ p̄ log p̄` with `0·log 0 = 0`, and its gradient.
pub fn diversity_loss<S: Scalar>(pbar: &Array2<S>) -> Result<(S, Array2<S>)> {
    let tol = S::of(1e-6);
    for (g, row) in pbar.rows().into_iter().enumerate() {
        let s = row.sum();
        if (s - S::one()).abs() > tol || row.iter().any(|&p| p < S::zero()) {
            return Err(Error::invalid(format!(
                "codebook {g} usage does not form a distribution (sum {s})"
            )));
        }
    }
    let inv = S::one() / S::of_usize(pbar.len());
    let mut loss = S::zero();
    let grad = pbar.mapv(|p| {
        if p > S::zero() {
            loss += p * p.ln() * inv;
            (p.ln() + S::one()) * inv
        } else {
            S::zero()
        }
    });
    Ok((loss, grad))
}

/// Cosine similarity and its gradients w.r.t. both arguments. Zero vectors
/// have similarity 0 and no gradient.
pub fn cosine_with_grad<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> (S, Array1<S>, Array1<S>) {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == S::zero() || nb == S::zero() {
        return (S::zero(), Array1::zeros(a.len()), Array1::zeros(b.len()));
    }
    let sim = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (sim / (na * na));
    let db = &a / (na * nb) - &b * (sim / (nb * nb));
    (sim, da, db)
}

pub fn cosine<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> S {
    cosine_with_grad(a, b).0
}

/// A masked step of another utterance used as a negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeRef {
    pub utterance: usize,
    pub row: usize,
}

/// For every anchor `(b, i)` draws `k` negatives uniformly from the masked
/// steps of the other utterances: without replacement when enough exist,
/// with replacement otherwise. `counts[b]` is the number of masked steps of
/// utterance `b`.
pub fn sample_negatives(counts: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<Vec<NegativeRef>>>> {
    let total: usize = counts.iter().sum();
    let mut rng = rng_from(seed, &[]);
    let mut out = Vec::with_capacity(counts.len());
    let mut replacement_used = false;
    for (b, &n) in counts.iter().enumerate() {
        let pool = total - n;
        if k > 0 && n > 0 && pool == 0 {
            return Err(Error::invalid(
                "no negatives available: use num_negatives = 0 or a batch of >= 2 utterances with masked frames",
            ));
        }
        let resolve = |mut j: usize| {
            for (u, &c) in counts.iter().enumerate() {
                if u == b {
                    continue;
                }
                if j < c {
                    return NegativeRef { utterance: u, row: j };
                }
                j -= c;
            }
            unreachable!("index within pool")
        };
        let mut per_anchor = Vec::with_capacity(n);
        for _ in 0..n {
            let picks: Vec<usize> = if k == 0 {
                Vec::new()
            } else if k <= pool {
                index::sample(&mut rng, pool, k).into_vec()
            } else {
                replacement_used = true;
                (0..k).map(|_| rng.gen_range(0..pool)).collect()
            };
            per_anchor.push(picks.into_iter().map(resolve).collect());
        }
        out.push(per_anchor);
    }
    if replacement_used {
        log::debug!("fewer than {k} negative candidates; sampled with replacement");
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ContrastiveResult<S> {
    pub loss: S,
    pub dlatents: Vec<Array2<S>>,
    pub dquantized: Vec<Array2<S>>,
    pub positives: usize,
    pub negatives: usize,
}

/// Binary-logistic utterance-wise contrastive loss over pre-drawn negatives.
///
/// `latents[b]` and `quantized[b]` hold the masked steps of utterance `b`
/// row by row; row `i` of each forms the positive pair. Each negative adds
/// `-log σ(-sim/κ)`, each positive `-log σ(sim/κ)`; the loss is the mean
/// over all terms.
pub fn contrastive_with_negatives<S: Scalar>(
    latents: &[Array2<S>],
    quantized: &[Array2<S>],
    negatives: &[Vec<Vec<NegativeRef>>],
    kappa: S,
) -> Result<ContrastiveResult<S>> {
    if latents.len() != quantized.len() || latents.len() != negatives.len() {
        return Err(Error::invalid("contrastive inputs disagree on batch size"));
    }
    for (b, (l, q)) in latents.iter().zip(quantized).enumerate() {
        if l.dim() != q.dim() || negatives[b].len() != l.nrows() {
            return Err(Error::DimensionMismatch {
                what: "contrastive latent/quantized rows",
                expected: l.nrows(),
                got: q.nrows(),
            });
        }
    }
    let positives: usize = latents.iter().map(|l| l.nrows()).sum();
    let negs: usize = negatives.iter().flatten().map(|n| n.len()).sum();
    let terms = positives + negs;
    if terms == 0 {
        return Err(Error::invalid("contrastive loss needs at least one masked step"));
    }
    let inv = S::one() / S::of_usize(terms);
    let mut loss = S::zero();
    let mut dl: Vec<Array2<S>> = latents.iter().map(|l| Array2::zeros(l.raw_dim())).collect();
    let mut dq: Vec<Array2<S>> = quantized.iter().map(|q| Array2::zeros(q.raw_dim())).collect();
    for b in 0..latents.len() {
        for i in 0..latents[b].nrows() {
            let anchor = latents[b].row(i);
            let (sim, da, dpos) = cosine_with_grad(anchor, quantized[b].row(i));
            let x = sim / kappa;
            loss += neg_log_sigmoid(x) * inv;
            let w = (sigmoid(x) - S::one()) / kappa * inv;
            dl[b].row_mut(i).scaled_add(w, &da);
            dq[b].row_mut(i).scaled_add(w, &dpos);
            for n in &negatives[b][i] {
                let (sim, da, dneg) = cosine_with_grad(anchor, quantized[n.utterance].row(n.row));
                let x = sim / kappa;
                loss += neg_log_sigmoid(-x) * inv;
                let w = sigmoid(x) / kappa * inv;
                dl[b].row_mut(i).scaled_add(w, &da);
                dq[n.utterance].row_mut(n.row).scaled_add(w, &dneg);
            }
        }
    }
    Ok(ContrastiveResult {
        loss,
        dlatents: dl,
        dquantized: dq,
        positives,
        negatives: negs,
    })
}

/// Draws negatives under `seed` and evaluates the contrastive loss.
pub fn contrastive_loss<S: Scalar>(
    latents: &[Array2<S>],
    quantized: &[Array2<S>],
    weights: &LossWeights,
    seed: u64,
) -> Result<ContrastiveResult<S>> {
    weights.validate()?;
    if latents.len() == 1 && weights.num_negatives > 0 {
        return Err(Error::invalid(
            "a batch of one utterance has no negatives: set num_negatives = 0 or use B >= 2",
        ));
    }
    let counts: Vec<usize> = latents.iter().map(|l| l.nrows()).collect();
    let negatives = sample_negatives(&counts, weights.num_negatives, seed)?;
    contrastive_with_negatives(latents, quantized, &negatives, S::of(weights.kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rand2(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed, &[]);
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Array2::<f64>::zeros((4, 7));
        let mask = MaskSet::from_starts(4, &[1], 2).unwrap();
        let (l, _) = content_loss(&logits, &[0, 3, 6, 1], &mask).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_gives_zero() {
        let mut logits = Array2::<f64>::zeros((2, 3));
        logits[[0, 2]] = 1e3;
        let mask = MaskSet::from_starts(2, &[0], 1).unwrap();
        let (l, _) = content_loss(&logits, &[2, 0], &mask).unwrap();
        assert!(l.abs() < 1e-300);
    }

    #[test]
    fn content_errors() {
        let logits = Array2::<f64>::zeros((2, 3));
        assert!(content_loss(&logits, &[0, 0], &MaskSet::empty(2)).is_err());
        let mask = MaskSet::from_starts(2, &[0], 1).unwrap();
        assert!(content_loss(&logits, &[3, 0], &mask).is_err());
    }

    #[test]
    fn content_matches_naive_oracle() {
        let logits = rand2(7, 5, 1);
        let labels = [0, 4, 2, 2, 1, 3, 0];
        let mask = MaskSet::from_starts(7, &[1, 4], 2).unwrap();
        let (l, _) = content_loss(&logits, &labels, &mask).unwrap();
        let mut oracle = 0.0;
        for &t in &[1usize, 2, 4, 5] {
            let z: f64 = (0..5).map(|j| logits[[t, j]].exp()).sum();
            oracle += -(logits[[t, labels[t]]].exp() / z).ln();
        }
        assert!((l - oracle / 4.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_closed_forms() {
        let u = Array2::from_elem((2, 32), 1.0 / 32.0);
        let (l, _) = diversity_loss(&u).unwrap();
        assert!((l - (-(32f64.ln()) / 32.0)).abs() < 1e-12);
        assert!((l - -0.108_304).abs() < 1e-6);
        let one_hot = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(diversity_loss(&one_hot).unwrap().0, 0.0);
        assert!(diversity_loss(&array![[0.5, 0.6]]).is_err());
    }

    #[test]
    fn diversity_matches_naive_sum() {
        let mut p = rand2(3, 4, 2).mapv(f64::exp);
        for mut r in p.rows_mut() {
            let z = r.sum();
            r.mapv_inplace(|v| v / z);
        }
        let (l, _) = diversity_loss(&p).unwrap();
        let mut s = 0.0;
        for g in 0..3 {
            for v in 0..4 {
                s += p[[g, v]] * p[[g, v]].ln();
            }
        }
        assert!((l - s / 12.0).abs() < 1e-12);
        assert!(l >= -(4f64.ln()) / 4.0 && l <= 0.0);
    }

    #[test]
    fn single_positive_zero_similarity() {
        let l = array![[1.0, 0.0]];
        let q = array![[0.0, 1.0]];
        let r = contrastive_with_negatives(&[l], &[q], &[vec![vec![]]], 1.0).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_utterance_terms() {
        let r = contrastive_with_negatives(
            &[array![[1.0, 0.0]], array![[0.0, 1.0]]],
            &[array![[2.0, 0.0]], array![[3.0, 0.0]]],
            &[vec![vec![NegativeRef { utterance: 1, row: 0 }]], vec![vec![]]],
            1.0,
        )
        .unwrap();
        // positive (sim 1), negative (sim 1), positive of utterance 1 (sim 0)
        let expect = ((1.0 + (-1f64).exp()).ln() + (1.0 + 1f64.exp()).ln() + 2f64.ln()) / 3.0;
        assert!((r.loss - expect).abs() < 1e-12);
        assert_eq!((r.positives, r.negatives), (2, 1));
    }

    #[test]
    fn brute_force_oracle() {
        let ls: Vec<_> = (0..3).map(|b| rand2(6, 4, 10 + b)).collect();
        let qs: Vec<_> = (0..3).map(|b| rand2(6, 4, 20 + b)).collect();
        let negs = sample_negatives(&[6, 6, 6], 5, 4).unwrap();
        let kappa = 0.1;
        let r = contrastive_with_negatives(&ls, &qs, &negs, kappa).unwrap();
        let cos = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut total = 0.0;
        let mut n = 0;
        for b in 0..3 {
            for i in 0..6 {
                total += -sig(cos(ls[b].row(i), qs[b].row(i)) / kappa).ln();
                n += 1;
                for g in &negs[b][i] {
                    total += -(1.0 - sig(cos(ls[b].row(i), qs[g.utterance].row(g.row)) / kappa)).ln();
                    n += 1;
                }
            }
        }
        assert!((r.loss - total / n as f64).abs() < 1e-12);
    }

    fn fd_check(f: &dyn Fn(&[Array2<f64>], &[Array2<f64>]) -> f64, ls: &[Array2<f64>], qs: &[Array2<f64>], dl: &[Array2<f64>], dq: &[Array2<f64>]) {
        let h = 1e-6;
        for which in 0..2 {
            for b in 0..ls.len() {
                let shape = ls[b].dim();
                for r in 0..shape.0 {
                    for c in 0..shape.1 {
                        let (mut lp, mut qp) = (ls.to_vec(), qs.to_vec());
                        let (mut lm, mut qm) = (ls.to_vec(), qs.to_vec());
                        if which == 0 {
                            lp[b][[r, c]] += h;
                            lm[b][[r, c]] -= h;
                        } else {
                            qp[b][[r, c]] += h;
                            qm[b][[r, c]] -= h;
                        }
                        let num = (f(&lp, &qp) - f(&lm, &qm)) / (2.0 * h);
                        let ana = if which == 0 { dl[b][[r, c]] } else { dq[b][[r, c]] };
                        assert!((num - ana).abs() < 1e-6 * (1.0 + num.abs()), "{which} {b} {r} {c}: {num} vs {ana}");
                    }
                }
            }
        }
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let ls: Vec<_> = (0..3).map(|b| rand2(3, 4, 30 + b)).collect();
        let qs: Vec<_> = (0..3).map(|b| rand2(3, 4, 40 + b)).collect();
        let negs = sample_negatives(&[3, 3, 3], 4, 5).unwrap();
        let f = |l: &[Array2<f64>], q: &[Array2<f64>]| contrastive_with_negatives(l, q, &negs, 0.5).unwrap().loss;
        let r = contrastive_with_negatives(&ls, &qs, &negs, 0.5).unwrap();
        fd_check(&f, &ls, &qs, &r.dlatents, &r.dquantized);
    }

    #[test]
    fn content_and_diversity_gradients() {
        let logits = rand2(5, 4, 6);
        let labels = [1, 0, 3, 2, 2];
        let mask = MaskSet::from_starts(5, &[0, 3], 2).unwrap();
        let (_, g) = content_loss(&logits, &labels, &mask).unwrap();
        let h = 1e-6;
        for idx in ndarray::indices(logits.dim()) {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[idx] += h;
            m[idx] -= h;
            let num = (content_loss(&p, &labels, &mask).unwrap().0 - content_loss(&m, &labels, &mask).unwrap().0) / (2.0 * h);
            assert!((num - g[idx]).abs() < 1e-7);
        }
        let p = array![[0.2, 0.3, 0.5]];
        let (_, g) = diversity_loss(&p).unwrap();
        for j in 0..3 {
            let f = |x: f64| x * x.ln() / 3.0;
            let num = (f(p[[0, j]] + h) - f(p[[0, j]] - h)) / (2.0 * h);
            assert!((num - g[[0, j]]).abs() < 1e-7);
        }
    }

    #[test]
    fn gradient_step_lowers_loss() {
        let ls: Vec<_> = (0..2).map(|b| rand2(4, 6, 50 + b)).collect();
        let qs: Vec<_> = (0..2).map(|b| rand2(4, 6, 60 + b)).collect();
        let negs = sample_negatives(&[4, 4], 3, 1).unwrap();
        let r = contrastive_with_negatives(&ls, &qs, &negs, 0.1).unwrap();
        let stepped: Vec<_> = ls.iter().zip(&r.dlatents).map(|(l, g)| l - &(g * 1e-3)).collect();
        let r2 = contrastive_with_negatives(&stepped, &qs, &negs, 0.1).unwrap();
        assert!(r2.loss < r.loss);
    }

    #[test]
    fn two_term_example() {
        // one positive with sim 1 and one negative with sim 1
        let r = contrastive_with_negatives::<f64>(
            &[array![[1.0, 1.0]], Array2::zeros((0, 2))],
            &[array![[2.0, 2.0]], Array2::zeros((0, 2))],
            &[vec![vec![NegativeRef { utterance: 0, row: 0 }]], vec![]],
            1.0,
        )
        .unwrap();
        assert!((r.loss - 0.813_262).abs() < 1e-6);
    }

    #[test]
    fn one_utterance_with_negatives_is_an_error() {
        let l = rand2(3, 4, 1);
        let w = LossWeights {
            num_negatives: 2,
            ..LossWeights::default()
        };
        assert!(contrastive_loss(&[l.clone()], &[l.clone()], &w, 0).is_err());
        let w0 = LossWeights {
            num_negatives: 0,
            ..LossWeights::default()
        };
        assert!(contrastive_loss(&[l.clone()], &[l], &w0, 0).is_ok());
    }

    #[test]
    fn negatives_come_from_other_utterances() {
        let n = sample_negatives(&[3, 4, 2], 5, 1).unwrap();
        for (b, anchors) in n.iter().enumerate() {
            for a in anchors {
                assert_eq!(a.len(), 5);
                assert!(a.iter().all(|r| r.utterance != b));
                let mut seen: Vec<_> = a.iter().map(|r| (r.utterance, r.row)).collect();
                seen.sort_unstable();
                seen.dedup();
                if b != 1 {
                    assert_eq!(seen.len(), 5, "without replacement");
                }
            }
        }
        // utterance 1 has a pool of 5 == k, utterance 2 has 7; ask for more
        let n = sample_negatives(&[1, 1], 4, 2).unwrap();
        assert_eq!(n[0][0].len(), 4);
        assert!(n[0][0].iter().all(|r| *r == NegativeRef { utterance: 1, row: 0 }));
    }

    #[test]
    fn scale_invariance() {
        let ls = vec![rand2(3, 5, 1), rand2(2, 5, 2)];
        let qs = vec![rand2(3, 5, 3), rand2(2, 5, 4)];
        let w = LossWeights {
            num_negatives: 2,
            ..LossWeights::default()
        };
        let a = contrastive_loss(&ls, &qs, &w, 9).unwrap().loss;
        let mut scaled = ls.clone();
        scaled[0].row_mut(1).mapv_inplace(|v| v * 7.3);
        let b = contrastive_loss(&scaled, &qs, &w, 9).unwrap().loss;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn combine_cases() {
        let w0 = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(combine(1.5, -0.2, 3.0, &w0).unwrap().total, 1.5);
        let w = LossWeights {
            alpha: 0.1,
            beta: 1.0,
            ..LossWeights::default()
        };
        let b = combine(1.0, -0.1, 2.0, &w).unwrap();
        assert!((b.speaker - 0.99).abs() < 1e-15);
        assert!((b.total - 2.99).abs() < 1e-15);
        assert!(combine(f64::NAN, 0.0, 0.0, &w).is_err());
    }

    #[test]
    fn combine_is_linear() {
        let mut rng = rng_from(3, &[]);
        for _ in 0..50 {
            let w = LossWeights {
                alpha: rng.gen_range(0.0..2.0),
                beta: rng.gen_range(0.0..2.0),
                ..LossWeights::default()
            };
            let a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let b: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let s = combine(a[0] + b[0], a[1] + b[1], a[2] + b[2], &w).unwrap();
            let x = combine(a[0], a[1], a[2], &w).unwrap();
            let y = combine(b[0], b[1], b[2], &w).unwrap();
            assert!((s.speaker - x.speaker - y.speaker).abs() < 1e-12);
            assert!((s.total - x.total - y.total).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0f64) >= 0.0);
        assert!((neg_log_sigmoid(-800.0f64) - 800.0).abs() < 1e-9);
    }
}
