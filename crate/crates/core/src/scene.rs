//! Virtual sample construction: particle placement and composition.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{shoemake_quaternion, Quaternion, RotationMatrix};
use crate::rng::substream;
use crate::volume::DensityVolume;

const CENTER_STREAM: u64 = 1;
const ORIENTATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct PlacementConfig {
    /// `(D, H, W)` voxels.
    pub volume_dims: [usize; 3],
    pub box_size: usize,
    pub safety_margin: usize,
    pub target_count: usize,
    /// Consecutive rejections tolerated before giving up.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            volume_dims: [200, 500, 500],
            box_size: 32,
            safety_margin: 3,
            target_count: 300,
            max_attempts: 10_000,
            seed: 0,
        }
    }
}

impl PlacementConfig {
    /// `L_box / 2 + Δ`.
    pub fn exclusion_radius(&self) -> f64 {
        self.box_size as f64 / 2.0 + self.safety_margin as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_count == 0 {
            return Err(Error::Config("target_count must be >= 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        if self.volume_dims.contains(&0) || self.box_size == 0 {
            return Err(Error::Config("volume dimensions and box size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleInstance {
    pub class_label: String,
    /// Voxels, `(x, y, z)`.
    pub center: [f64; 3],
    pub orientation: Quaternion,
}

/// Dart throwing with hard exclusion spheres of radius `R_ex`.
///
/// Candidates are uniform in `[R_ex, n − R_ex]` on every axis (x, y, z).
/// Returns the accepted centers as `(x, y, z)`.
pub fn poisson_disk_sample(cfg: &PlacementConfig) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    let r = cfg.exclusion_radius();
    let [nd, nh, nw] = cfg.volume_dims;
    let extent = [nw as f64, nh as f64, nd as f64];
    if extent.iter().any(|&n| n - r < r) {
        return Err(Error::PlacementInfeasible(format!(
            "volume {:?} cannot hold a center {r} voxels from every face",
            cfg.volume_dims
        )));
    }
    let mut rng = substream(cfg.seed, CENTER_STREAM);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let cell = |p: &[f64; 3]| p.map(|v| (v / r).floor() as i64);
    let r2 = r * r;
    let mut centers: Vec<[f64; 3]> = Vec::new();
    let mut misses = 0;
    while centers.len() < cfg.target_count && misses < cfg.max_attempts {
        let p = [0, 1, 2].map(|a| {
            let (lo, hi) = (r, extent[a] - r);
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        });
        let c = cell(&p);
        let mut ok = true;
        'scan: for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in ids {
                            let q = centers[j];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                            if d2 < r2 {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
        if ok {
            grid.entry(c).or_default().push(centers.len());
            centers.push(p);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    Ok(centers)
}

/// Places instances and assigns classes round-robin in the given order.
pub fn place_instances(cfg: &PlacementConfig, classes: &[String]) -> Result<Vec<ParticleInstance>> {
    if classes.is_empty() {
        return Err(Error::Config("at least one class is required".into()));
    }
    let centers = poisson_disk_sample(cfg)?;
    let mut orng = substream(cfg.seed, ORIENTATION_STREAM);
    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| ParticleInstance {
            class_label: classes[i % classes.len()].clone(),
            center,
            orientation: shoemake_quaternion(&mut orng),
        })
        .collect())
}

/// Radius (voxels) of the smallest sphere about the volume center that
/// contains every nonzero voxel.
pub fn support_radius(vol: &DensityVolume) -> f64 {
    let c = vol.center_xyz();
    let [nd, nh, nw] = vol.dims();
    let mut r2 = 0.0f64;
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                if vol.get(d, h, w) != 0.0 {
                    let e = (w as f64 - c[0]).powi(2) + (h as f64 - c[1]).powi(2) + (d as f64 - c[2]).powi(2);
                    r2 = r2.max(e);
                }
            }
        }
    }
    r2.sqrt()
}

/// Rotated copy of `density` on the integer box `lo..=hi` (d, h, w) of the
/// target frame, with the density center mapped to `center`.
struct Block {
    lo: [i64; 3],
    dims: [usize; 3],
    data: Vec<f32>,
}

fn render_block(density: &DensityVolume, rotation: &RotationMatrix, center: [f64; 3], radius: f64) -> Block {
    let c = density.center_xyz();
    let reach = radius + 1.0;
    // (d, h, w) bounds from (z, y, x)
    let lo = [2, 1, 0].map(|a| (center[a] - reach).floor() as i64);
    let hi = [2, 1, 0].map(|a| (center[a] + reach).ceil() as i64);
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
    let rinv = rotation.transpose();
    let mut data = vec![0.0f32; dims[0] * dims[1] * dims[2]];
    let mut i = 0;
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let p = [
                    (lo[2] + w as i64) as f64 - center[0],
                    (lo[1] + h as i64) as f64 - center[1],
                    (lo[0] + d as i64) as f64 - center[2],
                ];
                let s = rinv.apply(p);
                data[i] = density.sample_trilinear(s[0] + c[0], s[1] + c[1], s[2] + c[2]) as f32;
                i += 1;
            }
        }
    }
    Block { lo, dims, data }
}

/// Renders one rotated density into a fresh volume of `dims` (d, h, w),
/// clipping whatever falls outside.
pub fn render_instance(
    density: &DensityVolume,
    orientation: &Quaternion,
    center: [f64; 3],
    dims: [usize; 3],
) -> DensityVolume {
    let block = render_block(density, &orientation.to_matrix(), center, support_radius(density));
    let mut out = DensityVolume::zeros(dims, density.voxel_size);
    add_block(&mut out, &block);
    out
}

fn add_block(out: &mut DensityVolume, b: &Block) {
    let dims = out.dims();
    let mut i = 0;
    for d in 0..b.dims[0] {
        let td = b.lo[0] + d as i64;
        for h in 0..b.dims[1] {
            let th = b.lo[1] + h as i64;
            for w in 0..b.dims[2] {
                let tw = b.lo[2] + w as i64;
                let v = b.data[i];
                i += 1;
                if v == 0.0 {
                    continue;
                }
                if td < 0 || th < 0 || tw < 0 || td >= dims[0] as i64 || th >= dims[1] as i64 || tw >= dims[2] as i64 {
                    continue;
                }
                let k = out.index(td as usize, th as usize, tw as usize);
                out.data_mut()[k] += v;
            }
        }
    }
}

/// Sums every instance's rotated class density into a `cfg.volume_dims`
/// volume. Blocks render in parallel and are added in instance order.
pub fn compose_sample(
    density_by_class: &BTreeMap<String, DensityVolume>,
    instances: &[ParticleInstance],
    cfg: &PlacementConfig,
) -> Result<DensityVolume> {
    let [nd, nh, nw] = cfg.volume_dims;
    let extent = [nw as f64, nh as f64, nd as f64];
    let mut radii = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        let dens = density_by_class
            .get(&inst.class_label)
            .ok_or_else(|| Error::MissingClass(inst.class_label.clone()))?;
        let r = *radii.entry(inst.class_label.clone()).or_insert_with(|| support_radius(dens));
        for a in 0..3 {
            if inst.center[a] - r < 0.0 || inst.center[a] + r > extent[a] - 1.0 {
                return Err(Error::Placement {
                    index: i,
                    reason: format!(
                        "footprint of radius {r:.2} around {:?} leaves the {:?} volume",
                        inst.center, cfg.volume_dims
                    ),
                });
            }
        }
    }
    let voxel = density_by_class.values().next().map(|v| v.voxel_size).unwrap_or(1.0);
    let blocks: Vec<Block> = instances
        .par_iter()
        .map(|inst| {
            let dens = &density_by_class[&inst.class_label];
            render_block(dens, &inst.orientation.to_matrix(), inst.center, radii[&inst.class_label])
        })
        .collect();
    let mut out = DensityVolume::zeros(cfg.volume_dims, voxel);
    for b in &blocks {
        add_block(&mut out, b);
    }
    Ok(out)
}
