//! Layer-wise analysis: a learnable softmax weighting over hidden states
//! and a parameter-free speaker separability score.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax_rows;
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// One logit per hidden state; the weights are their softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub logits: Vec<f64>,
}

impl LayerWeights {
    pub fn uniform(layers: usize) -> Self {
        LayerWeights {
            logits: vec![0.0; layers],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        let m = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|&l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Convex combination of per-layer outputs.
pub fn weighted_sum<S: Scalar>(layers: &[Array2<S>], w: &LayerWeights) -> Result<Array2<S>> {
    if layers.len() != w.len() || layers.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "layer weights vs layers",
            expected: layers.len(),
            got: w.len(),
        });
    }
    let shape = layers[0].raw_dim();
    let mut out = Array2::zeros(shape);
    for (x, wj) in layers.iter().zip(w.weights()) {
        if x.raw_dim() != shape {
            return Err(Error::invalid("layer outputs differ in shape"));
        }
        out.scaled_add(S::of(wj), x);
    }
    Ok(out)
}

fn sq_dist<S: Scalar>(a: ndarray::ArrayView1<S>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x.as_f64() - y).powi(2)).sum()
}

/// Leave-one-out nearest-centroid accuracy of utterance embeddings (rows)
/// grouped by speaker. The held-out row is removed from its own class
/// centroid; ties go to the speaker that sorts first.
pub fn speaker_separability<S: Scalar, T: AsRef<str>>(embeddings: &Array2<S>, speakers: &[T]) -> Result<f64> {
    if embeddings.nrows() != speakers.len() {
        return Err(Error::DimensionMismatch {
            what: "embeddings vs speaker tags",
            expected: embeddings.nrows(),
            got: speakers.len(),
        });
    }
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in speakers.iter().enumerate() {
        classes.entry(s.as_ref()).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::invalid("speaker separability needs at least 2 speakers"));
    }
    if let Some((s, _)) = classes.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::invalid(format!(
            "speaker '{s}' has fewer than 2 utterances"
        )));
    }
    let names: Vec<&str> = classes.keys().copied().collect();
    let sums: Vec<Array1<f64>> = classes
        .values()
        .map(|idx| {
            idx.iter()
                .fold(Array1::zeros(embeddings.ncols()), |acc, &i| acc + embeddings.row(i).mapv(|v| v.as_f64()))
        })
        .collect();
    let mut correct = 0;
    for (i, s) in speakers.iter().enumerate() {
        let own = names.binary_search(&s.as_ref()).expect("known class");
        let x = embeddings.row(i);
        let mut best = (usize::MAX, f64::INFINITY);
        for (c, sum) in sums.iter().enumerate() {
            let n = classes[names[c]].len() as f64;
            let centroid = if c == own {
                (sum - &x.mapv(|v| v.as_f64())) / (n - 1.0)
            } else {
                sum / n
            };
            let d = sq_dist(x, centroid.view());
            if d < best.1 {
                best = (c, d);
            }
        }
        correct += usize::from(best.0 == own);
    }
    Ok(correct as f64 / speakers.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            steps: 500,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub weights: LayerWeights,
    pub task_accuracy: f64,
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn new(n: usize) -> Self {
        AdamSlot {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, t: i32) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - f64::powi(b1, t));
            let vh = self.v[i] / (1.0 - f64::powi(b2, t));
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Trains layer logits plus a linear softmax classifier on frozen
/// per-layer representations (`layers[j]` is `n × d`, one row per example)
/// with full-batch Adam, and reports the learned layer weights and the
/// final training accuracy.
pub fn fit_layer_weights<S: Scalar>(
    layers: &[Array2<S>],
    targets: &[usize],
    opts: &ProbeOptions,
) -> Result<ProbeResult> {
    let first = layers.first().ok_or_else(|| Error::invalid("no layers to probe"))?;
    let (n, d) = first.dim();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            what: "probe targets vs examples",
            expected: n,
            got: targets.len(),
        });
    }
    if layers.iter().any(|l| l.dim() != (n, d)) {
        return Err(Error::invalid("layer outputs differ in shape"));
    }
    let classes = targets.iter().max().map_or(0, |&m| m + 1);
    let distinct = targets.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::invalid("probe targets need at least two classes"));
    }
    let xs: Vec<Array2<f64>> = layers.iter().map(|l| l.mapv(|v| v.as_f64())).collect();
    let mut rng = rng_from(opts.seed, &[]);
    let bound = 1.0 / (d as f64).sqrt();
    let mut w = Array2::from_shape_fn((d, classes), |_| rng.gen_range(-bound..bound));
    let mut b = Array1::<f64>::zeros(classes);
    let mut lw = LayerWeights::uniform(layers.len());
    let (mut aw, mut ab, mut al) = (
        AdamSlot::new(d * classes),
        AdamSlot::new(classes),
        AdamSlot::new(layers.len()),
    );
    let forward = |lw: &LayerWeights, w: &Array2<f64>, b: &Array1<f64>| {
        let z = weighted_sum(&xs, lw).expect("shapes checked");
        let mut p = z.dot(w) + b;
        softmax_rows(&mut p);
        (z, p)
    };
    for step in 1..=opts.steps {
        let (z, mut dy) = forward(&lw, &w, &b);
        for (i, &c) in targets.iter().enumerate() {
            dy[[i, c]] -= 1.0;
        }
        dy /= n as f64;
        let dw = z.t().dot(&dy);
        let db = dy.sum_axis(Axis(0));
        let dz = dy.dot(&w.t());
        let ws = lw.weights();
        let dwj: Vec<f64> = xs.iter().map(|x| (&dz * x).sum()).collect();
        let dot: f64 = ws.iter().zip(&dwj).map(|(a, b)| a * b).sum();
        let dlogit: Vec<f64> = ws.iter().zip(&dwj).map(|(&wj, &g)| wj * (g - dot)).collect();
        let t = step as i32;
        aw.step(w.as_slice_mut().expect("contiguous"), dw.as_slice().expect("contiguous"), opts.learning_rate, t);
        ab.step(b.as_slice_mut().expect("contiguous"), db.as_slice().expect("contiguous"), opts.learning_rate, t);
        al.step(&mut lw.logits, &dlogit, opts.learning_rate, t);
    }
    let (_, p) = forward(&lw, &w, &b);
    let correct = p
        .rows()
        .into_iter()
        .zip(targets)
        .filter(|(row, &c)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (j, &v)| if v > a.1 { (j, v) } else { a });
            best.0 == c
        })
        .count();
    Ok(ProbeResult {
        weights: lw,
        task_accuracy: correct as f64 / n as f64,
    })
}

/// JSON-friendly profile: per-layer weights plus task accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub weights: BTreeMap<String, f64>,
    pub task_accuracy: f64,
    /// Optional per-layer speaker separability.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub separability: Vec<f64>,
}

impl ProbeReport {
    pub fn new(result: &ProbeResult, separability: Vec<f64>) -> Self {
        ProbeReport {
            weights: result
                .weights
                .weights()
                .into_iter()
                .enumerate()
                .map(|(j, w)| (format!("layer{j}"), w))
                .collect(),
            task_accuracy: result.task_accuracy,
            separability,
        }
    }
}

/// Horizontal bar chart of layer weights, one row per layer.
pub fn render_bars(w: &LayerWeights, width: usize) -> String {
    let ws = w.weights();
    let max = ws.iter().copied().fold(0.0, f64::max).max(1e-12);
    ws.iter()
        .enumerate()
        .map(|(j, &v)| {
            let n = ((v / max) * width as f64).round() as usize;
            format!("layer {j:>2} | {:<width$} {v:.3}\n", "#".repeat(n))
        })
        .collect()
}
