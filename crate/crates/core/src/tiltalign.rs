//! Tilt-series alignment: phase correlation against an iteratively refined
//! reference, then a global tilt-axis fit.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_freq, Fft2};
use crate::tiltsim::{fourier_shift, TiltSeries};
use crate::volume::Image2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Per-view corrections `(Δx, Δy)`: shifting view `i` by `shifts[i]`
    /// re-centers it. The view closest to 0° is the reference and gets
    /// `(0, 0)`.
    pub shifts: Vec<[f64; 2]>,
    /// Degrees, in-plane rotation of the tilt axis from detector y.
    pub axis_angle: f64,
    /// Pixels.
    pub axis_offset: f64,
    pub residual_mse: f64,
    /// Largest per-view shift update of every iteration run.
    pub iteration_updates: Vec<f64>,
}

impl AlignmentResult {
    /// No corrections at all.
    pub fn identity(n: usize) -> Self {
        Self {
            shifts: vec![[0.0, 0.0]; n],
            axis_angle: 0.0,
            axis_offset: 0.0,
            residual_mse: 0.0,
            iteration_updates: Vec::new(),
        }
    }
}

/// Width in pixels of the Gaussian window applied to the normalized
/// cross-power spectrum; the correlation peak becomes a Gaussian of this
/// width centered on the displacement.
pub const PEAK_SIGMA: f64 = 1.5;

/// Cross-power bins weaker than this fraction of the strongest carry no
/// usable phase and are dropped.
const PHASE_FLOOR: f64 = 1e-10;

fn is_constant(img: &Image2) -> bool {
    let first = img.data()[0];
    img.data().iter().all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1.0))
}

/// Displacement `d` of `b` relative to `a`, i.e. `b(x) ≈ a(x − d)`,
/// returned as `(Δx, Δy)` pixels. Shifting `b` by `−d` maps it onto `a`.
pub fn phase_correlate(a: &Image2, b: &Image2) -> Result<[f64; 2]> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.data().is_empty() || is_constant(a) || is_constant(b) {
        return Err(Error::Degenerate("phase correlation needs non-constant images".into()));
    }
    let (h, w) = (a.height(), a.width());
    let fft = Fft2::new(h, w);
    let mut fa: Vec<Complex64> = a.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    let mut cross: Vec<Complex64> = fb.iter().zip(&fa).map(|(x, y)| x * y.conj()).collect();
    let peak_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = (PHASE_FLOOR * peak_mag).max(1e-12);
    for ky in 0..h {
        let fy = signed_freq(ky, h) as f64 / h as f64;
        for kx in 0..w {
            let fx = signed_freq(kx, w) as f64 / w as f64;
            let c = &mut cross[ky * w + kx];
            let m = c.norm();
            *c = if m < floor {
                Complex64::new(0.0, 0.0)
            } else {
                let win = (-2.0 * PI * PI * PEAK_SIGMA * PEAK_SIGMA * (fx * fx + fy * fy)).exp();
                *c * (win / m)
            };
        }
    }
    fft.inverse(&mut cross);
    let corr: Vec<f64> = cross.iter().map(|c| c.re).collect();
    let (mut best, mut by, mut bx) = (f64::NEG_INFINITY, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let v = corr[y * w + x];
            if v > best {
                best = v;
                by = y;
                bx = x;
            }
        }
    }
    let at = |y: usize, x: usize| corr[y * w + x];
    let parabola = |m: f64, c: f64, p: f64| {
        // vertex of the parabola through the log values when all are positive
        let (m, c, p) = if m > 0.0 && c > 0.0 && p > 0.0 { (m.ln(), c.ln(), p.ln()) } else { (m, c, p) };
        let denom = m - 2.0 * c + p;
        if denom.abs() < 1e-15 {
            0.0
        } else {
            let d = (0.5 * (m - p) / denom).clamp(-0.5, 0.5);
            // round-off around an exact integer peak
            if d.abs() < 1e-9 {
                0.0
            } else {
                d
            }
        }
    };
    let fx = if w >= 3 {
        parabola(at(by, (bx + w - 1) % w), best, at(by, (bx + 1) % w))
    } else {
        0.0
    };
    let fy = if h >= 3 {
        parabola(at((by + h - 1) % h, bx), best, at((by + 1) % h, bx))
    } else {
        0.0
    };
    let wrap = |k: usize, n: usize| if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    Ok([wrap(bx, w) + fx + 0.0, wrap(by, h) + fy + 0.0])
}

/// Applies per-view corrections: view `i` moves by `shifts[i]`.
pub fn apply_shifts(projections: &[Image2], shifts: &[[f64; 2]]) -> Vec<Image2> {
    projections
        .par_iter()
        .zip(shifts)
        .map(|(p, s)| if *s == [0.0, 0.0] { p.clone() } else { fourier_shift(p, *s) })
        .collect()
}

fn mean_image(images: &[Image2]) -> Image2 {
    let mut acc = Image2::zeros(images[0].height(), images[0].width());
    for img in images {
        for (a, v) in acc.data_mut().iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    acc.scaled(1.0 / images.len() as f64)
}

/// Iterative alignment to the 0° view, then to the running mean.
///
/// Corrections accumulate across iterations and are re-anchored after each
/// one so the reference view keeps a zero correction; a common translation
/// of the whole series is not observable. Stops after `iterations` rounds
/// or once no correction moves by 0.01 px or more.
pub fn align_series(series: &TiltSeries, iterations: usize) -> Result<AlignmentResult> {
    series.validate()?;
    if iterations == 0 {
        return Err(Error::Config("alignment needs at least one iteration".into()));
    }
    let n = series.projections.len();
    if n == 0 {
        return Err(Error::Shape("empty tilt series".into()));
    }
    let r = series.geometry.zero_index();
    let mut shifts = vec![[0.0f64, 0.0]; n];
    let mut updates = Vec::new();
    let mut aligned = series.projections.clone();
    for it in 0..iterations {
        let reference = if it == 0 { series.projections[r].clone() } else { mean_image(&aligned) };
        let d: Vec<[f64; 2]> = aligned
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                phase_correlate(&reference, img).map_err(|e| Error::AtTilt {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        let anchor = d[r];
        let mut max_update = 0.0f64;
        for (s, di) in shifts.iter_mut().zip(&d) {
            let u = [-(di[0] - anchor[0]), -(di[1] - anchor[1])];
            s[0] += u[0];
            s[1] += u[1];
            max_update = max_update.max(u[0].abs()).max(u[1].abs());
        }
        updates.push(max_update);
        aligned = apply_shifts(&series.projections, &shifts);
        if max_update < 0.01 {
            break;
        }
    }
    let (axis_angle, axis_offset, residual_mse) = if n >= 3 {
        let displacements: Vec<[f64; 2]> = shifts.iter().map(|s| [-s[0], -s[1]]).collect();
        let fit = refine_axis(series, &displacements)?;
        (fit.axis_angle, fit.axis_offset, fit.residual_mse)
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(AlignmentResult {
        shifts,
        axis_angle,
        axis_offset,
        residual_mse,
        iteration_updates: updates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub axis_angle: f64,
    pub axis_offset: f64,
    pub residual_mse: f64,
}

/// Search grid: `[−5, 5]` in steps of 0.1 for both parameters.
pub const AXIS_GRID_STEPS: i64 = 50;
pub const AXIS_GRID_STEP: f64 = 0.1;

/// Predicted view displacement at tilt `θ`: a feature at height `offset`
/// above the tilt axis moves by `offset·sin θ` across an axis rotated
/// in-plane by `axis_angle`.
pub fn axis_model(angle_deg: f64, axis_angle_deg: f64, offset: f64) -> [f64; 2] {
    let m = offset * angle_deg.to_radians().sin();
    let (s, c) = axis_angle_deg.to_radians().sin_cos();
    [m * c, m * s]
}

/// Mean squared distance between `displacements` and [`axis_model`].
pub fn axis_mse(angles: &[f64], displacements: &[[f64; 2]], axis_angle: f64, offset: f64) -> f64 {
    angles
        .iter()
        .zip(displacements)
        .map(|(&a, d)| {
            let p = axis_model(a, axis_angle, offset);
            (d[0] - p[0]).powi(2) + (d[1] - p[1]).powi(2)
        })
        .sum::<f64>()
        / angles.len() as f64
}

/// Exhaustive grid fit of [`axis_model`] to per-view displacements (the
/// negated alignment corrections). Ties go to the smallest `|axis_angle|`,
/// then the smallest `|axis_offset|`.
pub fn refine_axis(series: &TiltSeries, displacements: &[[f64; 2]]) -> Result<AxisFit> {
    let angles = &series.geometry.angles;
    if angles.len() < 3 || displacements.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "axis refinement needs at least 3 views, got {}",
            angles.len().min(displacements.len())
        )));
    }
    if angles.len() != displacements.len() {
        return Err(Error::Shape(format!("{} angles, {} shifts", angles.len(), displacements.len())));
    }
    let mut best: Option<(f64, i64, i64)> = None;
    for i in -AXIS_GRID_STEPS..=AXIS_GRID_STEPS {
        for j in -AXIS_GRID_STEPS..=AXIS_GRID_STEPS {
            let mse = axis_mse(angles, displacements, i as f64 * AXIS_GRID_STEP, j as f64 * AXIS_GRID_STEP);
            let better = match best {
                None => true,
                Some((m, bi, bj)) => mse < m || (mse == m && (i.abs(), j.abs(), -i, -j) < (bi.abs(), bj.abs(), -bi, -bj)),
            };
            if better {
                best = Some((mse, i, j));
            }
        }
    }
    let (mse, i, j) = best.expect("grid is non-empty");
    Ok(AxisFit {
        axis_angle: i as f64 * AXIS_GRID_STEP,
        axis_offset: j as f64 * AXIS_GRID_STEP,
        residual_mse: mse,
    })
}
