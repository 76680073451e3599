//! Multi-dimensional complex FFTs built from rustfft 1D plans.
//!
//! Inverse transforms are normalized by `1/N` so that `inverse(forward(x)) == x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Reusable 2D transform for a fixed `(height, width)`.
pub struct Fft2 {
    dims: [usize; 2],
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims: [height, width],
            fwd: [planner.plan_fft_forward(height), planner.plan_fft_forward(width)],
            inv: [planner.plan_fft_inverse(height), planner.plan_fft_inverse(width)],
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 2]) {
        let [h, w] = self.dims;
        assert_eq!(data.len(), h * w);
        plans[1].process(data);
        strided_pass(data, h, w, &*plans[0]);
    }
}

/// Reusable 3D transform for fixed `(d, h, w)`.
pub struct Fft3 {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims,
            fwd: dims.map(|n| planner.plan_fft_forward(n)),
            inv: dims.map(|n| planner.plan_fft_inverse(n)),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [d, h, w] = self.dims;
        assert_eq!(data.len(), d * h * w);
        plans[2].process(data);
        for slab in data.chunks_exact_mut(h * w) {
            strided_pass(slab, h, w, &*plans[1]);
        }
        strided_pass(data, d, h * w, &*plans[0]);
    }
}

/// Transforms along the outer axis of a row-major `(n_outer, n_inner)` block.
fn strided_pass(data: &mut [Complex64], n_outer: usize, n_inner: usize, plan: &dyn Fft<f64>) {
    if n_outer == 1 {
        return;
    }
    let mut line = vec![Complex64::new(0.0, 0.0); n_outer];
    for j in 0..n_inner {
        for (i, c) in line.iter_mut().enumerate() {
            *c = data[i * n_inner + j];
        }
        plan.process(&mut line);
        for (i, c) in line.iter().enumerate() {
            data[i * n_inner + j] = *c;
        }
    }
}

/// Signed frequency index for bin `k` of an `n`-point transform, in `[-n/2, n/2)`.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

pub fn to_complex(data: &[f64]) -> Vec<Complex64> {
    data.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn real_parts(data: &[Complex64]) -> Vec<f64> {
    data.iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft3(x: &[Complex64], dims: [usize; 3]) -> Vec<Complex64> {
        let [nd, nh, nw] = dims;
        let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
        for kd in 0..nd {
            for kh in 0..nh {
                for kw in 0..nw {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for d in 0..nd {
                        for h in 0..nh {
                            for w in 0..nw {
                                let ph = -2.0
                                    * std::f64::consts::PI
                                    * ((kd * d) as f64 / nd as f64
                                        + (kh * h) as f64 / nh as f64
                                        + (kw * w) as f64 / nw as f64);
                                acc += x[(d * nh + h) * nw + w] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(kd * nh + kh) * nw + kw] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn fft3_matches_direct_dft() {
        let dims = [3, 4, 5];
        let x: Vec<Complex64> = (0..60).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let want = dft3(&x, dims);
        let mut got = x.clone();
        let plan = Fft3::new(dims);
        plan.forward(&mut got);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).norm() < 1e-9);
        }
        plan.inverse(&mut got);
        for (a, b) in got.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_frequencies() {
        let f: Vec<i64> = (0..6).map(|k| signed_freq(k, 6)).collect();
        assert_eq!(f, vec![0, 1, 2, -3, -2, -1]);
        let f: Vec<i64> = (0..5).map(|k| signed_freq(k, 5)).collect();
        assert_eq!(f, vec![0, 1, 2, -2, -1]);
    }
}
