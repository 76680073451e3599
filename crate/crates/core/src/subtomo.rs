//! Subtomogram extraction, particle masks and calibrated noise.

use rand::Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{SnrTag, SubtomogramRecord};
use crate::rng::{key, substream};
use crate::scene::ParticleInstance;
use crate::volume::DensityVolume;

const JITTER_STREAM: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct ExtractionConfig {
    pub box_size: usize,
    /// Integer jitter drawn uniformly from `−jitter_range..=jitter_range`.
    pub jitter_range: i64,
    pub neighbor_exclusion: f64,
    pub seed: u64,
    /// Fraction of the particle peak that counts as particle.
    pub mask_threshold: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            box_size: 32,
            jitter_range: 2,
            neighbor_exclusion: 17.0,
            seed: 0,
            mask_threshold: 0.05,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.box_size < 8 {
            return Err(Error::Config(format!("box must be >= 8, got {}", self.box_size)));
        }
        if !(self.neighbor_exclusion > 0.0) {
            return Err(Error::Config("neighbor_exclusion must be > 0".into()));
        }
        if self.jitter_range < 0 {
            return Err(Error::Config("jitter_range must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::Config("mask_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    /// Position of the instance in the input list.
    pub index: usize,
    pub volume: DensityVolume,
    pub record: SubtomogramRecord,
    /// `(x, y, z)` tomogram voxel at the box center.
    pub crop_center: [i64; 3],
    /// `(d, h, w)` corner of the box in the tomogram.
    pub start: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub class_label: String,
    /// `"boundary"` or `"neighbor"`.
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub accepted: Vec<Extracted>,
    pub rejections: Vec<Rejection>,
}

/// Crop center for instance `index`: rounded center plus integer jitter.
pub fn crop_center(inst: &ParticleInstance, index: usize, cfg: &ExtractionConfig) -> [i64; 3] {
    let mut rng = substream(cfg.seed, key(&[JITTER_STREAM, index as u64]));
    let base = inst.center.map(|c| c.round() as i64);
    if cfg.jitter_range == 0 {
        return base;
    }
    let j = [0; 3].map(|_: i64| rng.random_range(-cfg.jitter_range..=cfg.jitter_range));
    [base[0] + j[0], base[1] + j[1], base[2] + j[2]]
}

/// Cuts a `box³` cube around every instance that passes the boundary and
/// neighbor checks. `record.center_offset` is the crop center minus the
/// true center, so the particle sits at `box/2 − center_offset` in the
/// crop. `volume_path` is left empty for the caller to fill.
pub fn extract(tomo: &DensityVolume, instances: &[ParticleInstance], cfg: &ExtractionConfig) -> Result<Extraction> {
    cfg.validate()?;
    let [nd, nh, nw] = tomo.dims();
    let size = [nw as i64, nh as i64, nd as i64];
    let half = (cfg.box_size / 2) as i64;
    let b = cfg.box_size as i64;
    let mut out = Extraction::default();
    for (i, inst) in instances.iter().enumerate() {
        let cc = crop_center(inst, i, cfg);
        let lo = [cc[0] - half, cc[1] - half, cc[2] - half];
        if (0..3).any(|a| lo[a] < 0 || lo[a] + b > size[a]) {
            out.rejections.push(Rejection {
                index: i,
                class_label: inst.class_label.clone(),
                reason: "boundary".into(),
                detail: format!("box at {lo:?} of size {b} leaves the tomogram"),
            });
            continue;
        }
        let ccf = cc.map(|v| v as f64);
        let near = instances.iter().enumerate().filter(|(j, _)| *j != i).find_map(|(j, o)| {
            let d = ((o.center[0] - ccf[0]).powi(2) + (o.center[1] - ccf[1]).powi(2) + (o.center[2] - ccf[2]).powi(2)).sqrt();
            (d < cfg.neighbor_exclusion).then_some((j, d))
        });
        if let Some((j, d)) = near {
            out.rejections.push(Rejection {
                index: i,
                class_label: inst.class_label.clone(),
                reason: "neighbor".into(),
                detail: format!("instance {j} lies {d:.2} voxels from the crop center"),
            });
            continue;
        }
        let start = [lo[2] as usize, lo[1] as usize, lo[0] as usize];
        let volume = tomo.crop(start, [cfg.box_size; 3])?;
        let record = SubtomogramRecord {
            volume_path: String::new(),
            class_label: inst.class_label.clone(),
            center_offset: [ccf[0] - inst.center[0], ccf[1] - inst.center[1], ccf[2] - inst.center[2]],
            orientation: inst.orientation,
            snr_tag: SnrTag::Clean,
            mask_path: None,
        };
        out.accepted.push(Extracted {
            index: i,
            volume,
            record,
            crop_center: cc,
            start,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub volume: DensityVolume,
    /// True when the density had no positive voxel.
    pub empty: bool,
}

/// `1` where `density ≥ threshold · max(density)`, else `0`.
pub fn make_mask(particle_density: &DensityVolume, threshold: f64) -> Mask {
    let peak = particle_density.max();
    let mut volume = particle_density.clone();
    if !(peak > 0.0) {
        volume.data_mut().iter_mut().for_each(|v| *v = 0.0);
        return Mask { volume, empty: true };
    }
    let cut = threshold * peak as f64;
    volume
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v as f64 >= cut { 1.0 } else { 0.0 });
    Mask { volume, empty: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_target: f64,
    pub seed: u64,
    /// Selects an independent noise field for the same seed.
    #[serde(default)]
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(snr_target: f64, seed: u64) -> Self {
        Self {
            snr_target,
            seed,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snr_target > 0.0) || !self.snr_target.is_finite() {
            return Err(Error::Config(format!("snr_target must be > 0, got {}", self.snr_target)));
        }
        Ok(())
    }
}

/// Population variance of `clean`, optionally restricted to `mask > 0`.
pub fn signal_variance(clean: &DensityVolume, mask: Option<&DensityVolume>) -> Result<f64> {
    let vals: Vec<f64> = match mask {
        None => clean.data().iter().map(|&v| v as f64).collect(),
        Some(m) => {
            if m.dims() != clean.dims() {
                return Err(Error::Shape("mask and volume differ in size".into()));
            }
            clean
                .data()
                .iter()
                .zip(m.data())
                .filter(|(_, &k)| k > 0.0)
                .map(|(&v, _)| v as f64)
                .collect()
        }
    };
    if vals.is_empty() {
        return Err(Error::Degenerate("no voxels to measure signal variance".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Ok(vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// The i.i.d. `N(0, σ²)` field for `spec`; regenerable from the spec alone.
pub fn noise_field(dims: [usize; 3], sigma: f64, spec: &NoiseSpec) -> Vec<f32> {
    let mut rng = substream(spec.seed, spec.stream);
    (0..dims[0] * dims[1] * dims[2])
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            (sigma * g) as f32
        })
        .collect()
}

/// `σ` for a signal variance and target SNR.
pub fn noise_sigma(v_sig: f64, snr_target: f64) -> f64 {
    (v_sig / snr_target).sqrt()
}

/// `clean + N(0, v_sig / snr)` with `v_sig` the variance over all voxels.
pub fn add_noise(clean: &DensityVolume, spec: &NoiseSpec) -> Result<DensityVolume> {
    let v_sig = signal_variance(clean, None)?;
    add_noise_with_variance(clean, v_sig, spec)
}

/// As [`add_noise`] with `v_sig` measured inside `mask` only.
pub fn add_noise_masked(clean: &DensityVolume, mask: &DensityVolume, spec: &NoiseSpec) -> Result<DensityVolume> {
    let v_sig = signal_variance(clean, Some(mask))?;
    add_noise_with_variance(clean, v_sig, spec)
}

pub fn add_noise_with_variance(clean: &DensityVolume, v_sig: f64, spec: &NoiseSpec) -> Result<DensityVolume> {
    spec.validate()?;
    if !(v_sig > 0.0) {
        return Err(Error::Degenerate("clean volume has zero variance".into()));
    }
    let noise = noise_field(clean.dims(), noise_sigma(v_sig, spec.snr_target), spec);
    let mut out = clean.clone();
    for (o, n) in out.data_mut().iter_mut().zip(noise) {
        *o += n;
    }
    Ok(out)
}
