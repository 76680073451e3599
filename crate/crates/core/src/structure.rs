//! Atomic models and density synthesis.
//!
//! [`densify`] runs four steps: Gaussian splatting of every atom on a grid
//! that covers the model plus a solvent margin, an isotropic Gaussian
//! low-pass, normalization to unit maximum and suppression of faint voxels.

use std::collections::BTreeMap;

use num_complex::Complex64;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::volume::DensityVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    /// Å, `(x, y, z)`.
    pub position: [f64; 3],
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicModel {
    pub atoms: Vec<Atom>,
    pub source_id: String,
}

impl AtomicModel {
    pub fn new(atoms: Vec<Atom>, source_id: impl Into<String>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyModel);
        }
        if let Some(a) = atoms.iter().find(|a| a.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config(format!("non-finite atom position {:?}", a.position)));
        }
        Ok(Self {
            atoms,
            source_id: source_id.into(),
        })
    }
}

/// Kernel width (Å) and amplitude for one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ElementKernel {
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct DensifyConfig {
    /// Å per voxel.
    pub voxel_size: f64,
    /// Å; zero disables the low-pass.
    pub target_resolution: f64,
    /// Multiplies the largest van der Waals radius among the outermost atoms.
    pub solvent_margin_factor: f64,
    pub peak_threshold_fraction: f64,
    /// Keyed by upper-case element symbol; `"other"` is the fallback.
    pub element_sigma_table: BTreeMap<String, ElementKernel>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            voxel_size: 10.0,
            target_resolution: 30.0,
            solvent_margin_factor: 2.0,
            peak_threshold_fraction: 0.005,
            element_sigma_table: default_element_table(),
        }
    }
}

pub fn default_element_table() -> BTreeMap<String, ElementKernel> {
    [
        ("H", 0.25, 1.0),
        ("C", 0.35, 6.0),
        ("N", 0.33, 7.0),
        ("O", 0.31, 8.0),
        ("P", 0.42, 15.0),
        ("S", 0.44, 16.0),
        ("other", 0.38, 10.0),
    ]
    .into_iter()
    .map(|(e, sigma, amplitude)| (e.to_string(), ElementKernel { sigma, amplitude }))
    .collect()
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel_size must be > 0, got {}", self.voxel_size)));
        }
        if !(self.target_resolution >= 0.0) {
            return Err(Error::Config(format!(
                "target_resolution must be >= 0, got {}",
                self.target_resolution
            )));
        }
        if !(0.0..1.0).contains(&self.peak_threshold_fraction) {
            return Err(Error::Config(format!(
                "peak_threshold_fraction must lie in [0, 1), got {}",
                self.peak_threshold_fraction
            )));
        }
        if !(self.solvent_margin_factor >= 0.0) {
            return Err(Error::Config("solvent_margin_factor must be >= 0".into()));
        }
        if !self.element_sigma_table.contains_key("other") {
            return Err(Error::Config("element table needs an `other` entry".into()));
        }
        for (e, k) in &self.element_sigma_table {
            if !(k.sigma > 0.0) {
                return Err(Error::Config(format!("element {e}: sigma must be > 0")));
            }
            if k.amplitude == 0.0 || !k.amplitude.is_finite() {
                return Err(Error::Config(format!("element {e}: amplitude must be nonzero")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self, element: &str) -> ElementKernel {
        self.element_sigma_table
            .get(&element.to_ascii_uppercase())
            .or_else(|| self.element_sigma_table.get("other"))
            .copied()
            .expect("validated table has an `other` entry")
    }
}

/// Van der Waals radius in Å.
pub fn vdw_radius(element: &str) -> f64 {
    match element.to_ascii_uppercase().as_str() {
        "H" => 1.2,
        "C" => 1.7,
        "N" => 1.55,
        "O" => 1.52,
        "P" | "S" => 1.8,
        _ => 2.0,
    }
}

fn column(line: &str, start: usize, end: usize) -> &str {
    // 1-based inclusive PDB columns
    let bytes = line.as_bytes();
    if start > bytes.len() {
        return "";
    }
    let end = end.min(bytes.len());
    std::str::from_utf8(&bytes[start - 1..end]).unwrap_or("")
}

fn element_from_name(name_field: &str) -> String {
    // Columns 13-16. A letter in column 13 marks a two-letter element.
    let chars: Vec<char> = name_field.chars().collect();
    if chars.len() >= 2 && chars[0].is_ascii_alphabetic() && chars[1].is_ascii_alphabetic() {
        return chars[..2].iter().collect::<String>().to_ascii_uppercase();
    }
    chars
        .iter()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_else(|| "X".into())
}

/// Parses ATOM/HETATM records of the first model, skipping waters.
pub fn parse_pdb(text: &str) -> Result<AtomicModel> {
    let mut atoms = Vec::new();
    let mut source_id = String::new();
    let mut seen_model = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let record = column(line, 1, 6).trim_end();
        match record {
            "HEADER" => source_id = column(line, 63, 66).trim().to_string(),
            "MODEL" => {
                if seen_model {
                    break;
                }
                seen_model = true;
            }
            "ENDMDL" => break,
            "ATOM" | "HETATM" => {
                if column(line, 18, 20).trim() == "HOH" {
                    continue;
                }
                let coord = |s: usize, e: usize, axis: &str| -> Result<f64> {
                    column(line, s, e).trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        reason: format!("unparseable {axis} coordinate {:?}", column(line, s, e)),
                    })
                };
                let position = [coord(31, 38, "x")?, coord(39, 46, "y")?, coord(47, 54, "z")?];
                let occ_field = column(line, 55, 60).trim();
                let occupancy = if occ_field.is_empty() {
                    1.0
                } else {
                    occ_field.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        reason: format!("unparseable occupancy {occ_field:?}"),
                    })?
                };
                let elem_field = column(line, 77, 78).trim();
                let element = if elem_field.chars().any(|c| c.is_ascii_alphabetic()) {
                    elem_field
                        .chars()
                        .filter(|c| c.is_ascii_alphabetic())
                        .collect::<String>()
                        .to_ascii_uppercase()
                } else {
                    element_from_name(column(line, 13, 16))
                };
                atoms.push(Atom {
                    element,
                    position,
                    occupancy,
                });
            }
            _ => {}
        }
    }
    if source_id.is_empty() {
        source_id = "unknown".into();
    }
    AtomicModel::new(atoms, source_id)
}

pub fn read_pdb(path: impl AsRef<std::path::Path>) -> Result<AtomicModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut model = parse_pdb(&text)?;
    if model.source_id == "unknown" {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            model.source_id = stem.to_string();
        }
    }
    Ok(model)
}

/// Grid placement: cubic, centered on the atom bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Edge length in voxels.
    pub n: usize,
    /// Å position of voxel 0, `(x, y, z)`.
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

pub fn grid_for(model: &AtomicModel, cfg: &DensifyConfig) -> GridSpec {
    let mut extent = 0.0f64;
    let mut center = [0.0; 3];
    for a in 0..3 {
        let lo = model.atoms.iter().map(|at| at.position[a]).fold(f64::INFINITY, f64::min);
        let hi = model.atoms.iter().map(|at| at.position[a]).fold(f64::NEG_INFINITY, f64::max);
        let r_lo = model
            .atoms
            .iter()
            .filter(|at| at.position[a] == lo)
            .map(|at| vdw_radius(&at.element))
            .fold(0.0, f64::max);
        let r_hi = model
            .atoms
            .iter()
            .filter(|at| at.position[a] == hi)
            .map(|at| vdw_radius(&at.element))
            .fold(0.0, f64::max);
        let margin = cfg.solvent_margin_factor * r_lo.max(r_hi);
        extent = extent.max(hi - lo + 2.0 * margin);
        center[a] = (lo + hi) / 2.0;
    }
    let n = (extent / cfg.voxel_size).ceil() as usize + 1;
    let half = (n as f64 - 1.0) / 2.0 * cfg.voxel_size;
    GridSpec {
        n,
        origin: center.map(|c| c - half),
        voxel_size: cfg.voxel_size,
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Sums one Gaussian per atom, unnormalized.
///
/// Each voxel receives the kernel integrated over its cell divided by the
/// cell volume, truncated at 4σ. Atom widths are far below the default
/// 10 Å voxel, where point sampling would miss most atoms entirely.
pub fn splat_atoms(model: &AtomicModel, cfg: &DensifyConfig, grid: &GridSpec) -> DensityVolume {
    let n = grid.n;
    let v = grid.voxel_size;
    let mut out = DensityVolume::zeros([n, n, n], v as f32);
    out.origin = grid.origin.map(|o| o as f32);
    let mut acc = vec![0.0f64; n * n * n];
    let mut weights: [Vec<(usize, f64)>; 3] = Default::default();
    for atom in &model.atoms {
        let k = cfg.kernel(&atom.element);
        let reach = 4.0 * k.sigma;
        let peak = k.amplitude * atom.occupancy;
        for a in 0..3 {
            weights[a].clear();
            let rel = atom.position[a] - grid.origin[a];
            let lo = (((rel - reach) / v) - 0.5).ceil().max(0.0) as i64;
            let hi = (((rel + reach) / v) + 0.5).floor().min(n as f64 - 1.0) as i64;
            for i in lo..=hi {
                let c = i as f64 * v;
                let a0 = (c - v / 2.0 - rel).max(-reach);
                let a1 = (c + v / 2.0 - rel).min(reach);
                if a1 <= a0 {
                    continue;
                }
                let mass = std_normal_cdf(a1 / k.sigma) - std_normal_cdf(a0 / k.sigma);
                // cell average of exp(-u²/2σ²) along this axis
                let w = mass * k.sigma * (2.0 * std::f64::consts::PI).sqrt() / v;
                weights[a].push((i as usize, w));
            }
        }
        for &(d, wz) in &weights[2] {
            for &(h, wy) in &weights[1] {
                let row = (d * n + h) * n;
                for &(w, wx) in &weights[0] {
                    acc[row + w] += peak * wz * wy * wx;
                }
            }
        }
    }
    for (o, a) in out.data_mut().iter_mut().zip(acc) {
        *o = a as f32;
    }
    out
}

/// Sampled, unit-sum Gaussian taps at offsets `-radius..=radius`.
pub fn gaussian_taps(sigma_vox: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_vox).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Isotropic Gaussian blur with standard deviation `sigma_vox` voxels,
/// applied by FFT on a grid zero-padded by the kernel radius on every side,
/// which makes the result equal to linear convolution with the sampled
/// kernel.
pub fn gaussian_lowpass(vol: &DensityVolume, sigma_vox: f64) -> DensityVolume {
    if sigma_vox <= 0.0 {
        return vol.clone();
    }
    let taps = gaussian_taps(sigma_vox);
    let pad = taps.len() / 2;
    let [nd, nh, nw] = vol.dims();
    let pdims = [nd + 2 * pad, nh + 2 * pad, nw + 2 * pad];
    let plen = pdims[0] * pdims[1] * pdims[2];
    let fft = Fft3::new(pdims);

    let mut buf = vec![Complex64::new(0.0, 0.0); plen];
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let i = ((d + pad) * pdims[1] + h + pad) * pdims[2] + w + pad;
                buf[i] = Complex64::new(vol.get(d, h, w) as f64, 0.0);
            }
        }
    }
    fft.forward(&mut buf);

    // separable kernel: its transform is the product of three 1D transforms
    let spectrum_1d = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| {
                taps.iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let off = j as f64 - pad as f64;
                        t * (2.0 * std::f64::consts::PI * k as f64 * off / n as f64).cos()
                    })
                    .sum()
            })
            .collect()
    };
    let (sd, sh, sw) = (spectrum_1d(pdims[0]), spectrum_1d(pdims[1]), spectrum_1d(pdims[2]));
    let mut i = 0;
    for kd in 0..pdims[0] {
        for kh in 0..pdims[1] {
            let f = sd[kd] * sh[kh];
            for kw in 0..pdims[2] {
                buf[i] *= f * sw[kw];
                i += 1;
            }
        }
    }
    fft.inverse(&mut buf);

    let mut out = vol.clone();
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let i = ((d + pad) * pdims[1] + h + pad) * pdims[2] + w + pad;
                out.set(d, h, w, buf[i].re as f32);
            }
        }
    }
    out
}

/// Divides by the maximum and zeroes voxels below `threshold` (and any
/// negative round-off from the FFT).
pub fn normalize_and_threshold(vol: &mut DensityVolume, threshold: f64) -> Result<()> {
    let peak = vol.max();
    if !(peak > 0.0) {
        return Err(Error::Degenerate("density has no positive voxel to normalize".into()));
    }
    let peak = peak as f64;
    for v in vol.data_mut() {
        let x = (*v as f64 / peak) as f32;
        *v = if (x as f64) < threshold || x < 0.0 { 0.0 } else { x.min(1.0) };
    }
    Ok(())
}

pub fn densify(model: &AtomicModel, cfg: &DensifyConfig) -> Result<DensityVolume> {
    cfg.validate()?;
    let grid = grid_for(model, cfg);
    let raw = splat_atoms(model, cfg, &grid);
    let sigma_vox = cfg.target_resolution / 2.0 / cfg.voxel_size;
    let mut vol = gaussian_lowpass(&raw, sigma_vox);
    normalize_and_threshold(&mut vol, cfg.peak_threshold_fraction)?;
    Ok(vol)
}
