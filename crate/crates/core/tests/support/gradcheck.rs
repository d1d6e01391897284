//! Central finite-difference gradient checks.
//!
//! Each case flattens everything it differentiates into one vector `theta`
//! and evaluates `L = sum(r * f(theta))` for fixed random weights `r`. The
//! analytic gradient at either precision is compared with a 64-bit central
//! difference oracle using `max|a - n| / max|n|`.

#![allow(dead_code)]

use n2n4m::nn::layers::{
    conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, maxpool2, maxpool2_backward,
    mse_loss, relu_backward_inplace, relu_inplace, UpGeometry,
};
use n2n4m::nn::{ModelConfig, Param, Real, Tensor, UNet};
use n2n4m::rng;
use rand::Rng as _;

pub const STEP: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-4;
pub const TOL_F64: f64 = 1e-6;

pub trait Case {
    fn theta(&self) -> &[f64];
    /// Loss and gradient with respect to `theta`.
    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>);
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

fn weighted_sum<T: Real>(y: &Tensor<T>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(&a, &b)| a.as_f64() * b).sum()
}

fn uniform(r: &mut rng::Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn param<T: Real>(dims: &[usize], data: &[T]) -> Param<T> {
    Param { name: "p".into(), dims: dims.to_vec(), data: data.to_vec() }
}

/// Oracle: central differences of the 64-bit loss, coordinate by coordinate.
pub fn numeric_gradient<C: Case>(case: &C) -> Vec<f64> {
    let base = case.theta().to_vec();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + STEP;
            let up = case.run::<f64>(&p).0;
            p[i] = base[i] - STEP;
            let down = case.run::<f64>(&p).0;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

/// Relative gradient error at 32-bit and 64-bit precision.
pub fn check<C: Case>(case: &C) -> (f64, f64) {
    let numeric = numeric_gradient(case);
    let g32: Vec<f64> = case.run::<f32>(&cast(case.theta())).1.iter().map(|&v| v as f64).collect();
    let g64 = case.run::<f64>(case.theta()).1;
    (relative_error(&g32, &numeric), relative_error(&g64, &numeric))
}

/// Directional derivative along a random unit-scale direction, analytic
/// (64-bit) versus central difference.
pub fn jvp_error<C: Case>(case: &C, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 99);
    let v = uniform(&mut r, case.theta().len(), -1.0, 1.0);
    let g = case.run::<f64>(case.theta()).1;
    let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
    let shifted = |s: f64| {
        let p: Vec<f64> = case.theta().iter().zip(&v).map(|(t, d)| t + s * d).collect();
        case.run::<f64>(&p).0
    };
    let numeric = (shifted(STEP) - shifted(-STEP)) / (2.0 * STEP);
    (analytic - numeric).abs() / numeric.abs().max(1e-12)
}

pub struct ConvCase {
    shape: [usize; 3],
    cout: usize,
    k: usize,
    theta: Vec<f64>,
    r: Vec<f64>,
}

impl ConvCase {
    pub fn random(seed: u64) -> Self {
        let mut g = rng::stream(seed, 1);
        let (nb, cin, cout) = (g.random_range(1..=2), g.random_range(1..=3), g.random_range(1..=3));
        let k = [3, 5][g.random_range(0..2)];
        let len = g.random_range(3..=9);
        let theta = uniform(&mut g, nb * cin * len + cout * cin * k + cout, -1.0, 1.0);
        let r = uniform(&mut g, nb * cout * len, -1.0, 1.0);
        Self { shape: [nb, cin, len], cout, k, theta, r }
    }
}

impl Case for ConvCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let [nb, cin, len] = self.shape;
        let (nx, nw) = (nb * cin * len, self.cout * cin * self.k);
        let x = Tensor::from_vec(self.shape, theta[..nx].to_vec()).unwrap();
        let w = param(&[self.cout, cin, self.k], &theta[nx..nx + nw]);
        let b = param(&[self.cout], &theta[nx + nw..]);
        let pad = (self.k - 1) / 2;
        let y = conv1d(&x, &w, &b, pad).unwrap();
        let gy = Tensor::from_vec(y.shape(), cast(&self.r)).unwrap();
        let (gx, gw, gb) = conv1d_backward(&gy, &x, &w, pad).unwrap();
        (weighted_sum(&y, &self.r), [gx.into_data(), gw, gb].concat())
    }
}

pub struct UpCase {
    shape: [usize; 3],
    cout: usize,
    theta: Vec<f64>,
    r: Vec<f64>,
}

const UP: UpGeometry = UpGeometry { stride: 2, padding: 2, output_padding: 1 };

impl UpCase {
    pub fn random(seed: u64) -> Self {
        let mut g = rng::stream(seed, 2);
        let (nb, cin, cout) = (g.random_range(1..=2), g.random_range(1..=3), g.random_range(1..=3));
        let len = g.random_range(2..=6);
        let theta = uniform(&mut g, nb * cin * len + cin * cout * 5 + cout, -1.0, 1.0);
        let r = uniform(&mut g, nb * cout * 2 * len, -1.0, 1.0);
        Self { shape: [nb, cin, len], cout, theta, r }
    }
}

impl Case for UpCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let [_, cin, _] = self.shape;
        let nx: usize = self.shape.iter().product();
        let nw = cin * self.cout * 5;
        let x = Tensor::from_vec(self.shape, theta[..nx].to_vec()).unwrap();
        let w = param(&[cin, self.cout, 5], &theta[nx..nx + nw]);
        let b = param(&[self.cout], &theta[nx + nw..]);
        let y = conv_transpose1d(&x, &w, &b, UP).unwrap();
        let gy = Tensor::from_vec(y.shape(), cast(&self.r)).unwrap();
        let (gx, gw, gb) = conv_transpose1d_backward(&gy, &x, &w, UP).unwrap();
        (weighted_sum(&y, &self.r), [gx.into_data(), gw, gb].concat())
    }
}

/// Inputs are spaced so that no window is within `STEP` of a tie.
pub struct PoolCase {
    shape: [usize; 3],
    theta: Vec<f64>,
    r: Vec<f64>,
}

impl PoolCase {
    pub fn random(seed: u64) -> Self {
        let mut g = rng::stream(seed, 3);
        let shape = [g.random_range(1..=2), g.random_range(1..=3), 2 * g.random_range(1..=5)];
        let n: usize = shape.iter().product();
        let mut theta = uniform(&mut g, n, -1.0, 1.0);
        for pair in theta.chunks_mut(2) {
            if (pair[0] - pair[1]).abs() < 1e-2 {
                pair[1] = pair[0] + 0.05;
            }
        }
        let r = uniform(&mut g, n / 2, -1.0, 1.0);
        Self { shape, theta, r }
    }
}

impl Case for PoolCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let x = Tensor::from_vec(self.shape, theta.to_vec()).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        let gy = Tensor::from_vec(y.shape(), cast(&self.r)).unwrap();
        (weighted_sum(&y, &self.r), maxpool2_backward(&gy, &idx, self.shape).into_data())
    }
}

/// Inputs are kept at least 0.01 away from the kink.
pub struct ReluCase {
    theta: Vec<f64>,
    r: Vec<f64>,
}

impl ReluCase {
    pub fn random(seed: u64) -> Self {
        let mut g = rng::stream(seed, 4);
        let n = g.random_range(1..=24);
        let theta = uniform(&mut g, n, -1.0, 1.0).into_iter().map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v }).collect();
        let r = uniform(&mut g, n, -1.0, 1.0);
        Self { theta, r }
    }
}

impl Case for ReluCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let mut y = Tensor::from_vec([1, 1, theta.len()], theta.to_vec()).unwrap();
        relu_inplace(&mut y);
        let mut gy = Tensor::from_vec(y.shape(), cast(&self.r)).unwrap();
        relu_backward_inplace(&mut gy, &y);
        (weighted_sum(&y, &self.r), gy.into_data())
    }
}

pub struct MseCase {
    theta: Vec<f64>,
    target: Vec<f64>,
}

impl MseCase {
    pub fn random(seed: u64) -> Self {
        let mut g = rng::stream(seed, 5);
        let n = g.random_range(1..=24);
        Self { theta: uniform(&mut g, n, -1.0, 1.0), target: uniform(&mut g, n, -1.0, 1.0) }
    }
}

impl Case for MseCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let n = theta.len();
        let p = Tensor::from_vec([1, 1, n], theta.to_vec()).unwrap();
        let t = Tensor::from_vec([1, 1, n], cast(&self.target)).unwrap();
        let (loss, g) = mse_loss(&p, &t).unwrap();
        (loss, g.into_data())
    }
}

/// Tiny U-Net (length 16, channels [2, 4]); `theta` is the input batch
/// followed by every parameter.
pub struct UNetCase {
    config: ModelConfig,
    batch: usize,
    theta: Vec<f64>,
    r: Vec<f64>,
}

impl UNetCase {
    pub fn random(seed: u64) -> Self {
        let config = ModelConfig {
            in_length: 16,
            pad_to: 16,
            kernel_size: 5,
            encoder_channels: vec![2, 4],
            seed,
            ..ModelConfig::default()
        };
        let mut net = UNet::<f64>::new(config.clone()).unwrap();
        let mut g = rng::stream(seed, 6);
        // Non-zero biases so every bias gradient path is exercised.
        for p in net.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.data.iter_mut().for_each(|v| *v = g.random_range(-0.1..0.1));
        }
        let batch = 2;
        let mut theta = uniform(&mut g, batch * 16, 0.0, 1.0);
        theta.extend(net.params().iter().flat_map(|p| p.data.iter().copied()));
        let r = uniform(&mut g, batch * 16, -1.0, 1.0);
        Self { config, batch, theta, r }
    }
}

impl Case for UNetCase {
    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn run<T: Real>(&self, theta: &[T]) -> (f64, Vec<T>) {
        let nx = self.batch * 16;
        let mut offset = nx;
        let params = self
            .config
            .layout()
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let data = theta[offset..offset + n].to_vec();
                offset += n;
                Param { name, dims, data }
            })
            .collect();
        let net = UNet::from_params(self.config.clone(), params).unwrap();
        let x = Tensor::from_vec([self.batch, 1, 16], theta[..nx].to_vec()).unwrap();
        let (y, cache) = net.forward_train(&x).unwrap();
        let gy = Tensor::from_vec(y.shape(), cast(&self.r)).unwrap();
        let (grads, gx) = net.backward(cache, &gy).unwrap();
        let mut all = gx.into_data();
        all.extend(grads.into_iter().flatten());
        (weighted_sum(&y, &self.r), all)
    }
}
