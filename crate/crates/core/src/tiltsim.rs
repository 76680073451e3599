//! Tilt-series simulation.
//!
//! The specimen tilts about the y axis through the volume center. For a
//! tilt `θ`, detector column `x'` and beam coordinate `z'` relate to volume
//! coordinates (relative to the center) by `x' = cos θ·x − sin θ·z` and
//! `z' = sin θ·x + cos θ·z`. Projections have the volume's `(H, W)` shape.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_freq, Fft2};
use crate::rng::{key, substream};
use crate::volume::{DensityVolume, Image2};

const SHIFT_STREAM: u64 = 10;
const NOISE_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct TiltGeometry {
    /// Degrees, strictly increasing with a uniform step.
    pub angles: Vec<f64>,
    pub oversample: usize,
    /// Half-width of the uniform in-plane drift, pixels.
    pub shift_range: f64,
    pub seed: u64,
    /// Adds white noise at this SNR to every projection when set.
    pub projection_snr: Option<f64>,
}

impl Default for TiltGeometry {
    fn default() -> Self {
        Self {
            angles: angle_range(-60.0, 60.0, 2.0),
            oversample: 2,
            shift_range: 1.0,
            seed: 0,
            projection_snr: None,
        }
    }
}

/// `start, start + step, …, stop` inclusive.
pub fn angle_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as i64;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl TiltGeometry {
    /// ±90° in 2° steps.
    pub fn pretraining() -> Self {
        Self {
            angles: angle_range(-90.0, 90.0, 2.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("tilt geometry has no angles".into()));
        }
        if self.oversample == 0 {
            return Err(Error::Config("oversample must be >= 1".into()));
        }
        if !(self.shift_range >= 0.0) {
            return Err(Error::Config("shift_range must be >= 0".into()));
        }
        if self.angles.iter().any(|a| !(a.abs() <= 90.0)) {
            return Err(Error::Config("tilt angles must lie within ±90°".into()));
        }
        if self.angles.len() >= 2 {
            let step = self.angles[1] - self.angles[0];
            for w in self.angles.windows(2) {
                let s = w[1] - w[0];
                if !(s > 0.0) {
                    return Err(Error::Config("tilt angles must be strictly increasing".into()));
                }
                if (s - step).abs() > 1e-9 * step.abs().max(1.0) {
                    return Err(Error::Config("tilt angles must have a uniform step".into()));
                }
            }
        }
        if let Some(snr) = self.projection_snr {
            if !(snr > 0.0) {
                return Err(Error::Config("projection_snr must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Index of the view closest to 0° (first one on ties).
    pub fn zero_index(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.angles.iter().enumerate() {
            if a.abs() < self.angles[best].abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltSeries {
    pub geometry: TiltGeometry,
    pub projections: Vec<Image2>,
    /// `(Δx, Δy)` pixels added to each view: `view(x) = clean(x − Δ)`.
    pub applied_shifts: Vec<[f64; 2]>,
    /// Corrections found by alignment, if any.
    pub recovered_shifts: Option<Vec<[f64; 2]>>,
}

impl TiltSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.angles.len();
        if self.projections.len() != n || self.applied_shifts.len() != n {
            return Err(Error::Shape(format!(
                "{} angles, {} projections, {} shifts",
                n,
                self.projections.len(),
                self.applied_shifts.len()
            )));
        }
        if let Some(p) = self.projections.first() {
            if self.projections.iter().any(|q| q.height() != p.height() || q.width() != p.width()) {
                return Err(Error::Shape("projections differ in size".into()));
            }
        }
        Ok(())
    }

    /// Views stacked as a `(n_tilts, H, W)` volume.
    pub fn to_stack(&self, voxel_size: f32) -> Result<DensityVolume> {
        let p = self.projections.first().ok_or_else(|| Error::Shape("empty tilt series".into()))?;
        let (h, w) = (p.height(), p.width());
        let data = self.projections.iter().flat_map(|q| q.data().iter().map(|&v| v as f32)).collect();
        DensityVolume::from_vec([self.projections.len(), h, w], data, voxel_size)
    }

    pub fn from_stack(stack: &DensityVolume, geometry: TiltGeometry, applied_shifts: Vec<[f64; 2]>) -> Result<Self> {
        let [n, h, w] = stack.dims();
        let projections = (0..n)
            .map(|i| {
                let s = &stack.data()[i * h * w..(i + 1) * h * w];
                Image2::from_vec(h, w, s.iter().map(|&v| v as f64).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let series = Self {
            geometry,
            projections,
            applied_shifts,
            recovered_shifts: None,
        };
        series.validate()?;
        Ok(series)
    }
}

/// Sidecar line describing one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub angle_deg: f64,
    pub applied_shift: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_shift: Option<[f64; 2]>,
}

pub fn view_records(series: &TiltSeries) -> Vec<ViewRecord> {
    series
        .geometry
        .angles
        .iter()
        .enumerate()
        .map(|(i, &a)| ViewRecord {
            index: i,
            angle_deg: a,
            applied_shift: series.applied_shifts[i],
            recovered_shift: series.recovered_shifts.as_ref().map(|r| r[i]),
        })
        .collect()
}

const POLE: f64 = -0.267_949_192_431_122_7; // √3 − 2

/// In-place cubic B-spline prefilter of one line, mirror boundaries.
fn prefilter_line(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let lambda = (1.0 - z) * (1.0 - 1.0 / z);
    c.iter_mut().for_each(|v| *v *= lambda);
    // causal initialization, truncated geometric sum (mirror extension)
    let horizon = ((1e-16f64).ln() / z.abs().ln()).ceil() as usize;
    let mut sum = c[0];
    if horizon < n {
        let mut zn = z;
        for v in c.iter().take(horizon).skip(1) {
            sum += zn * v;
            zn *= z;
        }
    } else {
        let mut zn = z;
        let iz = 1.0 / z;
        let mut z2n = z.powi(n as i32 - 1);
        sum = c[0] + z2n * c[n - 1];
        z2n *= z2n * iz;
        for v in c.iter().take(n - 1).skip(1) {
            sum += (zn + z2n) * v;
            zn *= z;
            z2n *= iz;
        }
        sum /= 1.0 - zn * zn;
    }
    c[0] = sum;
    for k in 1..n {
        c[k] += z * c[k - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

#[inline]
fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

#[inline]
fn mirror(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

/// Taps `(index, weight)` of the cubic B-spline at `t`; empty outside
/// `[0, n − 1]`.
fn taps(t: f64, n: usize) -> ([(usize, f64); 4], usize) {
    let mut out = [(0usize, 0.0f64); 4];
    let r = t.round();
    let t = if (t - r).abs() < 1e-9 { r } else { t };
    if t < 0.0 || t > n as f64 - 1.0 {
        return (out, 0);
    }
    let base = t.floor() as i64 - 1;
    let mut k = 0;
    for j in 0..4 {
        let i = base + j;
        let w = bspline3(t - i as f64);
        if w != 0.0 {
            out[k] = (mirror(i, n), w);
            k += 1;
        }
    }
    (out, k)
}

/// B-spline coefficients of every y-slice, laid out `[h][d][w]`.
fn coefficients(vol: &DensityVolume) -> Vec<f64> {
    let [nd, nh, nw] = vol.dims();
    let mut coef = vec![0.0; nd * nh * nw];
    coef.par_chunks_mut(nd * nw).enumerate().for_each(|(h, plane)| {
        for d in 0..nd {
            for w in 0..nw {
                plane[d * nw + w] = vol.get(d, h, w) as f64;
            }
            prefilter_line(&mut plane[d * nw..(d + 1) * nw]);
        }
        let mut line = vec![0.0; nd];
        for w in 0..nw {
            for d in 0..nd {
                line[d] = plane[d * nw + w];
            }
            prefilter_line(&mut line);
            for d in 0..nd {
                plane[d * nw + w] = line[d];
            }
        }
    });
    coef
}

/// Sparse projection operator for one angle: for each detector column, the
/// weights on the `(d, w)` coefficient plane. Identical for every row `h`.
fn projector_rows(dims: [usize; 3], angle_deg: f64, oversample: usize) -> Vec<Vec<(usize, f64)>> {
    let [nd, _, nw] = dims;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cz) = ((nw as f64 - 1.0) / 2.0, (nd as f64 - 1.0) / 2.0);
    let o = oversample as f64;
    let weight = 1.0 / (o * o);
    // beam samples at z-index m/o, i.e. relative t = m/o − cz
    let reach = ((nw as f64).hypot(nd as f64) / 2.0 + 2.0) * o;
    let m_lo = ((cz * o) - reach).floor() as i64;
    let m_hi = ((cz * o) + reach).ceil() as i64;
    let mut dense = vec![0.0f64; nd * nw];
    let mut touched: Vec<usize> = Vec::new();
    (0..nw)
        .map(|u| {
            for j in 0..oversample {
                let xr = u as f64 + (j as f64 + 0.5) / o - 0.5 - cx;
                for m in m_lo..=m_hi {
                    let t = m as f64 / o - cz;
                    let x = c * xr + s * t + cx;
                    let z = -s * xr + c * t + cz;
                    let (tx, kx) = taps(x, nw);
                    if kx == 0 {
                        continue;
                    }
                    let (tz, kz) = taps(z, nd);
                    for &(iz, wz) in &tz[..kz] {
                        for &(ix, wx) in &tx[..kx] {
                            let k = iz * nw + ix;
                            if dense[k] == 0.0 {
                                touched.push(k);
                            }
                            dense[k] += weight * wz * wx;
                        }
                    }
                }
            }
            touched.sort_unstable();
            let row: Vec<(usize, f64)> = touched.iter().map(|&k| (k, dense[k])).collect();
            for &k in &touched {
                dense[k] = 0.0;
            }
            touched.clear();
            row
        })
        .collect()
}

fn project_with(coef: &[f64], dims: [usize; 3], angle_deg: f64, oversample: usize) -> Image2 {
    let [nd, nh, nw] = dims;
    let rows = projector_rows(dims, angle_deg, oversample);
    let mut img = Image2::zeros(nh, nw);
    img.data_mut().par_chunks_mut(nw).enumerate().for_each(|(h, out)| {
        let plane = &coef[h * nd * nw..(h + 1) * nd * nw];
        for (u, row) in rows.iter().enumerate() {
            out[u] = row.iter().map(|&(k, w)| w * plane[k]).sum();
        }
    });
    img
}

/// Line integral of the B-spline interpolant of `vol` tilted by
/// `angle_deg`, sampled `oversample`× finer in both detector x and beam z
/// and box-averaged back to detector pixels.
pub fn project_tilt(vol: &DensityVolume, angle_deg: f64, geom: &TiltGeometry) -> Image2 {
    let coef = coefficients(vol);
    project_with(&coef, vol.dims(), angle_deg, geom.oversample.max(1))
}

/// Phase ramp along one axis; the Nyquist bin keeps only its real part.
fn axis_ramp(cycles: f64, nyquist: bool) -> Complex64 {
    let phase = -2.0 * std::f64::consts::PI * cycles;
    if nyquist {
        Complex64::new(phase.cos(), 0.0)
    } else {
        Complex64::from_polar(1.0, phase)
    }
}

/// `img(x − Δ)` by a Fourier phase ramp; Nyquist bins keep only the real
/// part of the ramp so the output stays real.
pub fn fourier_shift(img: &Image2, shift: [f64; 2]) -> Image2 {
    let (h, w) = (img.height(), img.width());
    let fft = Fft2::new(h, w);
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut buf);
    for ky in 0..h {
        let fy = signed_freq(ky, h);
        let ny = h % 2 == 0 && fy == -(h as i64) / 2;
        for kx in 0..w {
            let fx = signed_freq(kx, w);
            let nx = w % 2 == 0 && fx == -(w as i64) / 2;
            let ramp = axis_ramp(fx as f64 * shift[0] / w as f64, nx) * axis_ramp(fy as f64 * shift[1] / h as f64, ny);
            buf[ky * w + kx] *= ramp;
        }
    }
    fft.inverse(&mut buf);
    Image2::from_vec(h, w, buf.iter().map(|c| c.re).collect()).expect("same shape")
}

pub fn simulate_tilt_series(vol: &DensityVolume, geom: &TiltGeometry) -> Result<TiltSeries> {
    geom.validate()?;
    if !vol.is_finite() {
        return Err(Error::Precondition("volume contains non-finite values".into()));
    }
    let coef = coefficients(vol);
    let dims = vol.dims();
    let views: Vec<(Image2, [f64; 2])> = geom
        .angles
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let clean = project_with(&coef, dims, a, geom.oversample);
            let mut rng = substream(geom.seed, key(&[SHIFT_STREAM, i as u64]));
            let shift = if geom.shift_range > 0.0 {
                [
                    rng.random_range(-geom.shift_range..=geom.shift_range),
                    rng.random_range(-geom.shift_range..=geom.shift_range),
                ]
            } else {
                [0.0, 0.0]
            };
            let mut img = if shift == [0.0, 0.0] { clean } else { fourier_shift(&clean, shift) };
            if let Some(snr) = geom.projection_snr {
                let n = img.data().len() as f64;
                let mean = img.sum() / n;
                let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sigma = (var / snr).sqrt();
                let mut nrng = substream(geom.seed, key(&[NOISE_STREAM, i as u64]));
                for v in img.data_mut() {
                    let g: f64 = nrng.sample(StandardNormal);
                    *v += sigma * g;
                }
            }
            (img, shift)
        })
        .collect();
    let (projections, applied_shifts) = views.into_iter().unzip();
    Ok(TiltSeries {
        geometry: geom.clone(),
        projections,
        applied_shifts,
        recovered_shifts: None,
    })
}
