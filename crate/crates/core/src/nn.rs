//! Dense building blocks with hand-written backward passes.
//!
//! Activations are row-major `T × features`. Every `backward` accumulates
//! parameter gradients into a structurally identical value and returns the
//! gradient with respect to its input.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::scalar::Scalar;

/// Flat views of every trainable tensor, in a stable order.
pub trait Params<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])>;
    fn params_mut(&mut self) -> Vec<(String, &mut [S])>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.2.len()).sum()
    }

    fn is_finite(&self) -> bool
    where
        S: Scalar,
    {
        self.params()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Same structure with every value zeroed (gradient accumulator).
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
        S: Scalar,
    {
        let mut z = self.clone();
        for (_, p) in z.params_mut() {
            p.fill(S::zero());
        }
        z
    }
}

pub(crate) fn prefixed<'a, S>(
    prefix: &str,
    items: Vec<(String, Vec<usize>, &'a [S])>,
) -> Vec<(String, Vec<usize>, &'a [S])> {
    items
        .into_iter()
        .map(|(n, s, d)| (format!("{prefix}.{n}"), s, d))
        .collect()
}

pub(crate) fn prefixed_mut<'a, S>(
    prefix: &str,
    items: Vec<(String, &'a mut [S])>,
) -> Vec<(String, &'a mut [S])> {
    items
        .into_iter()
        .map(|(n, d)| (format!("{prefix}.{n}"), d))
        .collect()
}

pub(crate) fn slice2<S>(a: &Array2<S>) -> &[S] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice2_mut<S>(a: &mut Array2<S>) -> &mut [S] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice1<S>(a: &Array1<S>) -> &[S] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice1_mut<S>(a: &mut Array1<S>) -> &mut [S] {
    a.as_slice_mut().expect("standard layout")
}

/// `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl<S: Scalar> Linear<S> {
    /// Uniform(±1/√in) weights, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((input, output), |_| S::of(rng.gen_range(-bound..bound))),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<S>, dy: &Array2<S>, grad: &mut Linear<S>) -> Array2<S> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl<S: Scalar> Params<S> for Linear<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        vec![
            ("w".into(), self.w.shape().to_vec(), slice2(&self.w)),
            ("b".into(), self.b.shape().to_vec(), slice1(&self.b)),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        vec![
            ("w".into(), slice2_mut(&mut self.w)),
            ("b".into(), slice1_mut(&mut self.b)),
        ]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<S>) -> (Array2<S>, LayerNormCache<S>) {
        let n = S::of_usize(x.ncols());
        let eps = S::of(LAYER_NORM_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<S>() / n;
            *is = S::one() / (var + eps).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<S>,
        dy: &Array2<S>,
        grad: &mut LayerNorm<S>,
    ) -> Array2<S> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = S::of_usize(dy.ncols());
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        Zip::from(dx.rows_mut())
            .and(dxhat.rows())
            .and(cache.xhat.rows())
            .and(&cache.inv_std)
            .for_each(|mut out, g, xh, &is| {
                let mean_g = g.sum() / n;
                let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>() / n;
                Zip::from(&mut out)
                    .and(&g)
                    .and(&xh)
                    .for_each(|o, &gi, &xi| *o = is * (gi - mean_g - xi * mean_gx));
            });
        dx
    }
}

impl<S: Scalar> Params<S> for LayerNorm<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        vec![
            ("gamma".into(), self.gamma.shape().to_vec(), slice1(&self.gamma)),
            ("beta".into(), self.beta.shape().to_vec(), slice1(&self.beta)),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        vec![
            ("gamma".into(), slice1_mut(&mut self.gamma)),
            ("beta".into(), slice1_mut(&mut self.beta)),
        ]
    }
}

const GELU_A: f64 = 0.044_715;

/// tanh-approximated GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + S::of(GELU_A) * x * x * x)).tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * a * x * x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(x: &mut Array2<S>) {
    for mut row in x.rows_mut() {
        let m = row.fold(S::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Given softmax output `p` and upstream `dp`, the gradient w.r.t. the
/// softmax input.
pub fn softmax_rows_backward<S: Scalar>(p: &Array2<S>, dp: &Array2<S>) -> Array2<S> {
    let mut dz = Array2::zeros(p.raw_dim());
    Zip::from(dz.rows_mut())
        .and(p.rows())
        .and(dp.rows())
        .for_each(|mut out, pr, dr| {
            let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<S>();
            Zip::from(&mut out)
                .and(&pr)
                .and(&dr)
                .for_each(|o, &pi, &di| *o = pi * (di - dot));
        });
    dz
}

/// Fixed sinusoidal position table, `t × d`.
pub fn sinusoidal_positions<S: Scalar>(t: usize, d: usize) -> Array2<S> {
    Array2::from_shape_fn((t, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn rand2(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed, &[]);
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// d/dx of sum(dy ⊙ f(x)) by central differences.
    fn fd_input(f: impl Fn(&Array2<f64>) -> Array2<f64>, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                g[[i, j]] = ((&f(&xp) - &f(&xm)) * dy).sum() / (2.0 * h);
            }
        }
        g
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn linear_input_gradient() {
        let mut rng = rng_from(1, &[]);
        let lin = Linear::<f64>::new(4, 3, &mut rng);
        let x = rand2(5, 4, 2);
        let dy = rand2(5, 3, 3);
        let mut g = lin.zeros_like();
        let dx = lin.backward(&x, &dy, &mut g);
        close(&dx, &fd_input(|x| lin.forward(x), &x, &dy), 1e-7);
        close(&g.w, &x.t().dot(&dy), 1e-12);
    }

    #[test]
    fn layer_norm_gradients() {
        let mut ln = LayerNorm::<f64>::new(6);
        let mut rng = rng_from(4, &[]);
        ln.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
        ln.beta.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x = rand2(3, 6, 5);
        let dy = rand2(3, 6, 6);
        let (_, cache) = ln.forward(&x);
        let mut g = ln.zeros_like();
        let dx = ln.backward(&cache, &dy, &mut g);
        close(&dx, &fd_input(|x| ln.forward(x).0, &x, &dy), 1e-6);
        let (y, _) = ln.forward(&x);
        for r in y.rows() {
            assert!(r.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.2, 1.9] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn softmax_gradient() {
        let x = rand2(3, 5, 7);
        let dy = rand2(3, 5, 8);
        let f = |x: &Array2<f64>| {
            let mut p = x.clone();
            softmax_rows(&mut p);
            p
        };
        let p = f(&x);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        close(&softmax_rows_backward(&p, &dy), &fd_input(f, &x, &dy), 1e-7);
    }

    #[test]
    fn positions_are_bounded() {
        let p = sinusoidal_positions::<f64>(10, 8);
        assert_eq!(p[[0, 0]], 0.0);
        assert_eq!(p[[0, 1]], 1.0);
        assert!(p.iter().all(|v| v.abs() <= 1.0));
    }
}
