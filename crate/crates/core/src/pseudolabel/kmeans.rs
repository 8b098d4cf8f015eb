use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSource, PseudoLabelSequence};
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansModel<S> {
    pub centers: Array2<S>,
    pub inertia: S,
    pub iterations_run: usize,
    pub seed: u64,
    /// Inertia recorded after every assignment step.
    pub history: Vec<S>,
}

impl<S: Scalar> KmeansModel<S> {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Frames beyond this cap are subsampled uniformly before fitting.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            k: 16,
            max_iters: 100,
            restarts: 1,
            max_frames: 100_000,
            seed: 0,
        }
    }
}

#[inline]
fn sq_dist<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> S {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest center, lowest index on ties.
fn nearest<S: Scalar>(x: ArrayView1<S>, centers: &Array2<S>) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (j, c) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<S: Scalar>(x: &Array2<S>, k: usize, rng: &mut impl Rng) -> Array2<S> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centers.row(0)).as_f64())
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(j).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centers.row(j)).as_f64());
        }
    }
    centers
}

fn assign_all<S: Scalar>(x: &Array2<S>, centers: &Array2<S>) -> (Vec<usize>, Vec<S>, S) {
    let mut labels = Vec::with_capacity(x.nrows());
    let mut dists = Vec::with_capacity(x.nrows());
    for r in x.rows() {
        let (j, d) = nearest(r, centers);
        labels.push(j);
        dists.push(d);
    }
    let inertia = dists.iter().copied().sum();
    (labels, dists, inertia)
}

/// Single k-means run: k-means++ seeding, then Lloyd iterations until the
/// assignment stops changing or `max_iters` is reached.
pub fn kmeans_fit<S: Scalar>(
    frames: &Array2<S>,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansModel<S>> {
    let (n, d) = frames.dim();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("frames must have at least one dimension"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} points cannot form {k} clusters")));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = rng_from(seed, &[]);
    let mut centers = plus_plus_init(frames, k, &mut rng);
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations_run = 0;
    let mut converged = false;

    while iterations_run < max_iters.max(1) {
        let (labels, dists, inertia) = assign_all(frames, &centers);
        history.push(inertia);
        iterations_run += 1;
        if prev.as_ref() == Some(&labels) {
            converged = true;
            break;
        }

        let mut sums = Array2::<S>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (r, &j) in frames.rows().into_iter().zip(&labels) {
            sums.row_mut(j).scaled_add(S::one(), &r);
            counts[j] += 1;
        }
        // empty clusters take the points farthest from their centers
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = S::of_usize(counts[j]);
                centers.row_mut(j).assign(&sums.row(j).mapv(|v| v / c));
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).expect("finite"))
                    .expect("n >= k");
                taken[far] = true;
                centers.row_mut(j).assign(&frames.row(far));
            }
        }
        prev = Some(labels);
    }
    if !converged {
        let (_, _, inertia) = assign_all(frames, &centers);
        history.push(inertia);
    }
    Ok(KmeansModel {
        centers,
        inertia: *history.last().expect("at least one iteration"),
        iterations_run,
        seed,
        history,
    })
}

/// Stacks every frame of every sequence into one matrix.
pub fn pool_frames<S: Scalar>(features: &[FeatureSequence<S>]) -> Result<Array2<S>> {
    let views: Vec<_> = features.iter().map(|f| f.frames.view()).collect();
    if views.is_empty() {
        return Err(Error::invalid("no features to pool"));
    }
    ndarray::concatenate(Axis(0), &views).map_err(|_| Error::DimensionMismatch {
        what: "feature dimension across utterances",
        expected: features[0].dim(),
        got: features.iter().map(|f| f.dim()).find(|&d| d != features[0].dim()).unwrap_or(0),
    })
}

/// Subsamples to `max_frames`, then keeps the lowest-inertia run out of
/// `restarts`.
pub fn fit<S: Scalar>(frames: &Array2<S>, opts: &KmeansOptions) -> Result<KmeansModel<S>> {
    let data = if frames.nrows() > opts.max_frames {
        let mut rng = rng_from(opts.seed, &[0x5AB5]);
        let mut idx = index::sample(&mut rng, frames.nrows(), opts.max_frames).into_vec();
        idx.sort_unstable();
        frames.select(Axis(0), &idx)
    } else {
        frames.to_owned()
    };
    let mut best: Option<KmeansModel<S>> = None;
    for r in 0..opts.restarts.max(1) {
        let m = kmeans_fit(&data, opts.k, opts.max_iters, derive_seed(opts.seed, &[r as u64]))?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    let mut best = best.expect("at least one restart");
    best.seed = opts.seed;
    Ok(best)
}

/// Nearest-center labels for every frame.
pub fn assign<S: Scalar>(
    model: &KmeansModel<S>,
    features: &FeatureSequence<S>,
    source: LabelSource,
) -> Result<PseudoLabelSequence> {
    if features.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dim vs center dim",
            expected: model.dim(),
            got: features.dim(),
        });
    }
    let labels = features
        .frames
        .rows()
        .into_iter()
        .map(|r| nearest(r, &model.centers).0)
        .collect();
    let mut seq = PseudoLabelSequence::new(features.id.clone(), labels, model.k(), source)?;
    seq.provenance = features.provenance;
    Ok(seq)
}

#[cfg(test)]
pub(crate) fn mean_row<S: Scalar>(x: &Array2<S>) -> ndarray::Array1<S> {
    x.mean_axis(Axis(0)).expect("non-empty")
}
