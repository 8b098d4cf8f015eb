//! Strided 1-D convolution front end over raw samples.

use ndarray::{s, Array2};
use rand::Rng;

use crate::nn::{gelu, gelu_grad, prefixed, prefixed_mut, Linear, Params};
use crate::scalar::Scalar;

/// (kernel, stride) per layer: receptive field 400 samples, total stride 160,
/// so frame counts match the default MFCC framing.
pub const CONV_LAYOUT: [(usize, usize); 3] = [(5, 5), (4, 4), (20, 8)];

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<S> {
    pub kernel: usize,
    pub stride: usize,
    pub lin: Linear<S>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<S> {
    patches: Vec<Array2<S>>,
    pre: Vec<Array2<S>>,
    input_rows: Vec<usize>,
}

fn im2col<S: Scalar>(x: &Array2<S>, kernel: usize, stride: usize) -> Array2<S> {
    let c = x.ncols();
    let t_out = if x.nrows() < kernel {
        0
    } else {
        (x.nrows() - kernel) / stride + 1
    };
    let mut p = Array2::zeros((t_out, kernel * c));
    for t in 0..t_out {
        let window = x.slice(s![t * stride..t * stride + kernel, ..]);
        p.row_mut(t)
            .assign(&window.to_shape(kernel * c).expect("contiguous window"));
    }
    p
}

fn col2im<S: Scalar>(dp: &Array2<S>, rows: usize, c: usize, kernel: usize, stride: usize) -> Array2<S> {
    let mut dx = Array2::zeros((rows, c));
    for t in 0..dp.nrows() {
        let g = dp.row(t);
        let g = g.to_shape((kernel, c)).expect("patch layout");
        let mut w = dx.slice_mut(s![t * stride..t * stride + kernel, ..]);
        w += &g;
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvFrontEnd<S> {
    pub layers: Vec<ConvLayer<S>>,
}

impl<S: Scalar> ConvFrontEnd<S> {
    pub fn new(hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut c_in = 1;
        let layers = CONV_LAYOUT
            .iter()
            .enumerate()
            .map(|(i, &(kernel, stride))| {
                let c_out = if i + 1 == CONV_LAYOUT.len() { output } else { hidden };
                let layer = ConvLayer {
                    kernel,
                    stride,
                    lin: Linear::new(kernel * c_in, c_out, rng),
                };
                c_in = c_out;
                layer
            })
            .collect();
        ConvFrontEnd { layers }
    }

    /// Number of output frames for `n` input samples.
    pub fn frames_for(&self, n: usize) -> usize {
        self.layers.iter().fold(n, |t, l| {
            if t < l.kernel {
                0
            } else {
                (t - l.kernel) / l.stride + 1
            }
        })
    }

    pub fn forward(&self, samples: &[S]) -> (Array2<S>, ConvCache<S>) {
        let mut x = Array2::from_shape_vec((samples.len(), 1), samples.to_vec()).expect("column");
        let mut cache = ConvCache {
            patches: Vec::new(),
            pre: Vec::new(),
            input_rows: Vec::new(),
        };
        for l in &self.layers {
            let p = im2col(&x, l.kernel, l.stride);
            let pre = l.lin.forward(&p);
            cache.input_rows.push(x.nrows());
            x = pre.mapv(gelu);
            cache.patches.push(p);
            cache.pre.push(pre);
        }
        (x, cache)
    }

    /// Accumulates parameter gradients; the waveform itself gets none.
    pub fn backward(&self, cache: &ConvCache<S>, dy: &Array2<S>, grad: &mut ConvFrontEnd<S>) {
        let mut d = dy.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let dpre = &d * &cache.pre[i].mapv(gelu_grad);
            let dp = l.lin.backward(&cache.patches[i], &dpre, &mut grad.layers[i].lin);
            if i > 0 {
                let c_in = l.lin.input_dim() / l.kernel;
                d = col2im(&dp, cache.input_rows[i], c_in, l.kernel, l.stride);
            }
        }
    }
}

impl<S: Scalar> Params<S> for ConvFrontEnd<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("conv{i}"), l.lin.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed_mut(&format!("conv{i}"), l.lin.params_mut()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::frame_count;
    use crate::rng::rng_from;

    #[test]
    fn frame_count_matches_mfcc_framing() {
        let mut rng = rng_from(0, &[]);
        let fe = ConvFrontEnd::<f64>::new(4, 3, &mut rng);
        for n in [400, 401, 559, 560, 4000, 8000, 16_000] {
            assert_eq!(fe.frames_for(n), frame_count(n, 400, 160), "n={n}");
        }
        let (y, _) = fe.forward(&vec![0.1; 4000]);
        assert_eq!(y.dim(), (23, 3));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = rng_from(1, &[]);
        let x = Array2::<f64>::from_shape_fn((11, 2), |_| rng.gen_range(-1.0..1.0));
        let p = im2col(&x, 3, 2);
        let g = Array2::from_shape_fn(p.raw_dim(), |_| rng.gen_range(-1.0..1.0));
        let lhs = (&p * &g).sum();
        let rhs = (&x * &col2im(&g, 11, 2, 3, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
