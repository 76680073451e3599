//! Filtered weighted back-projection.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::signed_freq;
use crate::tiltalign::{apply_shifts, AlignmentResult};
use crate::tiltsim::TiltSeries;
use crate::volume::{DensityVolume, Image2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    HannRamp,
    Ramp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    AbsCos,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct ReconConfig {
    /// `(D, H, W)`; `H` and `W` must match the projections.
    pub output_dims: [usize; 3],
    pub filter: Filter,
    pub weighting: Weighting,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            output_dims: [200, 500, 500],
            filter: Filter::HannRamp,
            weighting: Weighting::AbsCos,
        }
    }
}

/// Frequency response at `r = |f| / f_N`.
pub fn filter_response(filter: Filter, r: f64) -> f64 {
    let r = r.abs();
    match filter {
        Filter::None => 1.0,
        _ if r > 1.0 => 0.0,
        Filter::Ramp => r,
        Filter::HannRamp => r * (0.5 + 0.5 * (std::f64::consts::PI * r).cos()),
    }
}

/// Filters every row (detector x) independently; columns along the tilt
/// axis are left alone.
pub fn filter_projection(img: &Image2, filter: Filter) -> Image2 {
    if filter == Filter::None {
        return img.clone();
    }
    let w = img.width();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(w);
    let inv = planner.plan_fft_inverse(w);
    let gains: Vec<f64> = (0..w)
        .map(|k| filter_response(filter, 2.0 * signed_freq(k, w) as f64 / w as f64))
        .collect();
    let mut out = img.clone();
    let mut line = vec![Complex64::new(0.0, 0.0); w];
    for row in out.data_mut().chunks_exact_mut(w) {
        for (c, &v) in line.iter_mut().zip(row.iter()) {
            *c = Complex64::new(v, 0.0);
        }
        fwd.process(&mut line);
        for (c, g) in line.iter_mut().zip(&gains) {
            *c *= g;
        }
        inv.process(&mut line);
        for (v, c) in row.iter_mut().zip(&line) {
            *v = c.re / w as f64;
        }
    }
    out
}

/// Shift-corrects, filters, weights and back-projects every view.
///
/// Voxel `(x, z)` (relative to the volume center) reads detector column
/// `x' = cos θ·x − sin θ·z` by linear interpolation; the sum over views is
/// scaled by `π / (2N)`.
pub fn wbp_reconstruct(series: &TiltSeries, align: &AlignmentResult, cfg: &ReconConfig) -> Result<DensityVolume> {
    series.validate()?;
    let n = series.projections.len();
    if n < 3 {
        return Err(Error::Precondition(format!("reconstruction needs at least 3 tilts, got {n}")));
    }
    if align.shifts.len() != n {
        return Err(Error::Shape(format!("{} shifts for {n} tilts", align.shifts.len())));
    }
    let [nd, nh, nw] = cfg.output_dims;
    if nd == 0 || nh == 0 || nw == 0 {
        return Err(Error::Config("output dimensions must be positive".into()));
    }
    let (ph, pw) = (series.projections[0].height(), series.projections[0].width());
    if (ph, pw) != (nh, nw) {
        return Err(Error::Shape(format!(
            "projections are {ph}x{pw} but the output expects H×W = {nh}x{nw}"
        )));
    }
    let corrected = apply_shifts(&series.projections, &align.shifts);
    let views: Vec<(Image2, f64, f64)> = corrected
        .par_iter()
        .zip(&series.geometry.angles)
        .map(|(img, &a)| {
            let th = a.to_radians();
            let w = match cfg.weighting {
                Weighting::AbsCos => th.cos().abs(),
                Weighting::Uniform => 1.0,
            };
            let (s, c) = th.sin_cos();
            (filter_projection(img, cfg.filter).scaled(w), s, c)
        })
        .collect();
    let cx = (nw as f64 - 1.0) / 2.0;
    let cz = (nd as f64 - 1.0) / 2.0;
    let scale = std::f64::consts::PI / (2.0 * n as f64);
    let mut out = DensityVolume::zeros(cfg.output_dims, 1.0);
    out.data_mut().par_chunks_mut(nh * nw).enumerate().for_each(|(d, slab)| {
        let z = d as f64 - cz;
        let mut acc = vec![0.0f64; nh * nw];
        for (img, s, c) in &views {
            for w in 0..nw {
                let u = c * (w as f64 - cx) - s * z + cx;
                let r = u.round();
                let u = if (u - r).abs() < 1e-9 { r } else { u };
                if u < 0.0 || u > nw as f64 - 1.0 {
                    continue;
                }
                let u0 = u.floor() as usize;
                let f = u - u0 as f64;
                let u1 = (u0 + 1).min(nw - 1);
                for h in 0..nh {
                    let row = &img.data()[h * nw..(h + 1) * nw];
                    acc[h * nw + w] += (1.0 - f) * row[u0] + f * row[u1];
                }
            }
        }
        for (o, a) in slab.iter_mut().zip(acc) {
            *o = (a * scale) as f32;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_filters_to_zero() {
        let img = Image2::from_fn(4, 16, |_, _| 3.0);
        let f = filter_projection(&img, Filter::HannRamp);
        assert!(f.max_abs() < 1e-12);
        assert_eq!(filter_projection(&img, Filter::None), img);
    }

    #[test]
    fn impulse_response_matches_direct_inverse_dft() {
        let n = 16;
        let img = Image2::from_fn(1, n, |_, x| if x == 5 { 1.0 } else { 0.0 });
        let f = filter_projection(&img, Filter::HannRamp);
        for x in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                let g = filter_response(Filter::HannRamp, 2.0 * signed_freq(k, n) as f64 / n as f64);
                let ph = 2.0 * std::f64::consts::PI * k as f64 * (x as f64 - 5.0) / n as f64;
                v += g * ph.cos();
            }
            assert!((f.get(0, x) - v / n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn hann_response_values() {
        assert_eq!(filter_response(Filter::HannRamp, 0.0), 0.0);
        assert!(filter_response(Filter::HannRamp, 1.0).abs() < 1e-16);
        assert!((filter_response(Filter::HannRamp, 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(filter_response(Filter::Ramp, 2.0), 0.0);
    }
}
