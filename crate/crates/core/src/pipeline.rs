//! End-to-end dataset generation.
//!
//! Stages run in order: densify → place → project → align → reconstruct →
//! extract → noise. Every stage seed is derived from the global seed, so a
//! configuration and seed fully determine the output.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! densities/<class>.mrc
//! instances.ndjson          placed particles (ground truth)
//! tilt/stack.mrc            views stacked along d
//! tilt/views.ndjson         angles, applied and recovered shifts
//! tilt/alignment.json
//! tomogram.mrc
//! <class>/<id>/clean.mrc    noise-free crop
//! <class>/<id>/snr*.mrc     one per SNR target
//! <class>/<id>/mask.mrc
//! metadata.ndjson           one record per noisy subtomogram
//! rejections.ndjson
//! provenance.ndjson         per-stage config hash, seed and timing
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{append_ndjson, read_mrc, write_metadata, write_mrc, write_ndjson, SnrTag, SubtomogramRecord};
use crate::recon::{wbp_reconstruct, ReconConfig};
use crate::rng::key;
use crate::scene::{compose_sample, place_instances, render_instance, PlacementConfig};
use crate::structure::{densify, read_pdb, DensifyConfig};
use crate::subtomo::{add_noise, extract, make_mask, ExtractionConfig, NoiseSpec};
use crate::tiltalign::align_series;
use crate::tiltsim::{simulate_tilt_series, view_records, TiltGeometry};
use crate::volume::{pearson, DensityVolume};

/// One particle class: an atomic model or a ready density map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StructureInput {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct PipelineConfig {
    pub structures: Vec<StructureInput>,
    pub densify: DensifyConfig,
    /// `seed` is replaced by one derived from the global seed.
    pub placement: PlacementConfig,
    /// `seed` is replaced by one derived from the global seed.
    pub tilt: TiltGeometry,
    pub align_iterations: usize,
    /// `output_dims` of zeros means "same as the placement volume".
    pub recon: ReconConfig,
    /// `seed` is replaced by one derived from the global seed.
    pub extraction: ExtractionConfig,
    pub snr_targets: Vec<f64>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Forces a single worker.
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            structures: Vec::new(),
            densify: DensifyConfig::default(),
            placement: PlacementConfig::default(),
            tilt: TiltGeometry::default(),
            align_iterations: 3,
            recon: ReconConfig {
                output_dims: [0, 0, 0],
                ..ReconConfig::default()
            },
            extraction: ExtractionConfig::default(),
            snr_targets: SnrTag::ALL.iter().map(|t| t.value()).collect(),
            output_dir: PathBuf::from("cryoforge-out"),
            seed: 0,
            jobs: None,
            strict: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.structures.is_empty() {
            return Err(Error::Config("no structures configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.structures {
            if s.label.is_empty() || s.label.contains(['/', '\\']) || s.label == "." || s.label == ".." {
                return Err(Error::Config(format!("invalid class label {:?}", s.label)));
            }
            if !seen.insert(&s.label) {
                return Err(Error::Config(format!("duplicate class label {:?}", s.label)));
            }
            if s.pdb.is_some() == s.density.is_some() {
                return Err(Error::Config(format!("class {:?} needs exactly one of pdb or density", s.label)));
            }
        }
        self.densify.validate()?;
        self.placement.validate()?;
        self.tilt.validate()?;
        self.extraction.validate()?;
        if self.align_iterations == 0 {
            return Err(Error::Config("align_iterations must be >= 1".into()));
        }
        for &snr in &self.snr_targets {
            if SnrTag::from_value(snr).is_none() {
                return Err(Error::Config(format!(
                    "SNR target {snr} is not one of 100, 0.1, 0.05, 0.03, 0.01"
                )));
            }
        }
        let dims = self.recon_dims();
        let p = self.placement.volume_dims;
        if dims[1] != p[1] || dims[2] != p[2] {
            return Err(Error::Config(format!(
                "reconstruction H×W {:?} must match the sample's {:?}",
                &dims[1..],
                &p[1..]
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn recon_dims(&self) -> [usize; 3] {
        if self.recon.output_dims == [0, 0, 0] {
            self.placement.volume_dims
        } else {
            self.recon.output_dims
        }
    }

    /// Stage seed derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let tag = stage.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
        key(&[self.seed, tag])
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 of the JSON encoding, hex.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub stage: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub index: usize,
    pub class_label: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub placed: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Records written to `metadata.ndjson`.
    pub records: Vec<SubtomogramRecord>,
    /// `(class, clean crop path)` of every accepted particle, in order.
    pub clean_volumes: Vec<(String, PathBuf)>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Runs every stage; fails at the first stage error with its name.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let threads = if cfg.strict { Some(1) } else { cfg.jobs };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| run_stages(cfg))
        }
        None => run_stages(cfg),
    }
}

fn run_stages(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    let out = &cfg.output_dir;
    mkdir(out)?;
    let prov_path = out.join("provenance.ndjson");
    // fresh provenance per run
    std::fs::write(&prov_path, b"").map_err(|e| Error::io(&prov_path, e))?;
    let log = |stage: &str, inputs: Vec<String>, outputs: Vec<String>, hash: String, seed: u64, t: Instant| {
        append_ndjson(
            &ProvenanceRecord {
                stage: stage.into(),
                inputs,
                outputs,
                config_hash: hash,
                seed,
                elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
            },
            &prov_path,
        )
    };

    // densify
    let t = Instant::now();
    let dens_dir = out.join("densities");
    mkdir(&dens_dir)?;
    let mut densities = BTreeMap::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for s in &cfg.structures {
        let vol = if let Some(pdb) = &s.pdb {
            inputs.push(pdb.display().to_string());
            stage("densify", read_pdb(pdb).and_then(|m| densify(&m, &cfg.densify)))?
        } else {
            let p = s.density.as_ref().expect("validated");
            inputs.push(p.display().to_string());
            stage("densify", read_mrc(p))?
        };
        let path = dens_dir.join(format!("{}.mrc", s.label));
        write_mrc(&vol, &path)?;
        outputs.push(rel(out, &path));
        densities.insert(s.label.clone(), vol);
    }
    log("densify", inputs, outputs, config_hash(&cfg.densify), 0, t)?;

    // place
    let t = Instant::now();
    let placement = PlacementConfig {
        seed: cfg.stage_seed("place"),
        ..cfg.placement.clone()
    };
    let labels: Vec<String> = cfg.structures.iter().map(|s| s.label.clone()).collect();
    let instances = stage("place", place_instances(&placement, &labels))?;
    let sample = stage("place", compose_sample(&densities, &instances, &placement))?;
    let inst_path = out.join("instances.ndjson");
    write_ndjson(&instances, &inst_path)?;
    log("place", vec![], vec![rel(out, &inst_path)], config_hash(&placement), placement.seed, t)?;

    // project
    let t = Instant::now();
    let geom = TiltGeometry {
        seed: cfg.stage_seed("project"),
        ..cfg.tilt.clone()
    };
    let mut series = stage("project", simulate_tilt_series(&sample, &geom))?;
    drop(sample);
    let tilt_dir = out.join("tilt");
    mkdir(&tilt_dir)?;
    let stack_path = tilt_dir.join("stack.mrc");
    write_mrc(&series.to_stack(cfg.densify.voxel_size as f32)?, &stack_path)?;
    log("project", vec![], vec![rel(out, &stack_path)], config_hash(&geom), geom.seed, t)?;

    // align
    let t = Instant::now();
    let alignment = stage("align", align_series(&series, cfg.align_iterations))?;
    series.recovered_shifts = Some(alignment.shifts.clone());
    let views_path = tilt_dir.join("views.ndjson");
    write_ndjson(&view_records(&series), &views_path)?;
    let align_path = tilt_dir.join("alignment.json");
    let json = serde_json::to_string_pretty(&alignment).expect("alignment serializes");
    std::fs::write(&align_path, json).map_err(|e| Error::io(&align_path, e))?;
    log(
        "align",
        vec![rel(out, &stack_path)],
        vec![rel(out, &views_path), rel(out, &align_path)],
        config_hash(&cfg.align_iterations),
        0,
        t,
    )?;

    // reconstruct
    let t = Instant::now();
    let recon = ReconConfig {
        output_dims: cfg.recon_dims(),
        ..cfg.recon.clone()
    };
    let mut tomo = stage("reconstruct", wbp_reconstruct(&series, &alignment, &recon))?;
    tomo.voxel_size = cfg.densify.voxel_size as f32;
    let tomo_path = out.join("tomogram.mrc");
    write_mrc(&tomo, &tomo_path)?;
    log("reconstruct", vec![rel(out, &stack_path)], vec![rel(out, &tomo_path)], config_hash(&recon), 0, t)?;

    // extract
    let t = Instant::now();
    let ext_cfg = ExtractionConfig {
        seed: cfg.stage_seed("extract"),
        ..cfg.extraction.clone()
    };
    let extraction = stage("extract", extract(&tomo, &instances, &ext_cfg))?;
    let rejections: Vec<RejectionRecord> = extraction
        .rejections
        .iter()
        .map(|r| RejectionRecord {
            index: r.index,
            class_label: r.class_label.clone(),
            reason: r.reason.clone(),
            detail: r.detail.clone(),
        })
        .collect();
    let rej_path = out.join("rejections.ndjson");
    write_ndjson(&rejections, &rej_path)?;
    let mut clean_volumes = Vec::new();
    let mut crops = Vec::new();
    for e in &extraction.accepted {
        let dir = out.join(&e.record.class_label).join(format!("{:05}", e.index));
        mkdir(&dir)?;
        let clean_path = dir.join("clean.mrc");
        write_mrc(&e.volume, &clean_path)?;
        let inst = &instances[e.index];
        let start_xyz = [e.start[2] as f64, e.start[1] as f64, e.start[0] as f64];
        let local = [0, 1, 2].map(|a| inst.center[a] - start_xyz[a]);
        let particle = render_instance(&densities[&inst.class_label], &inst.orientation, local, e.volume.dims());
        let mask = make_mask(&particle, ext_cfg.mask_threshold);
        let mask_path = dir.join("mask.mrc");
        write_mrc(&mask.volume, &mask_path)?;
        clean_volumes.push((e.record.class_label.clone(), clean_path));
        crops.push((e, dir, mask_path));
    }
    log(
        "extract",
        vec![rel(out, &tomo_path), rel(out, &inst_path)],
        vec![rel(out, &rej_path)],
        config_hash(&ext_cfg),
        ext_cfg.seed,
        t,
    )?;

    // noise
    let t = Instant::now();
    let noise_seed = cfg.stage_seed("noise");
    let mut records = Vec::new();
    for (e, dir, mask_path) in &crops {
        for &snr in &cfg.snr_targets {
            let tag = SnrTag::from_value(snr).expect("validated");
            let spec = NoiseSpec {
                snr_target: snr,
                seed: noise_seed,
                stream: key(&[e.index as u64, snr.to_bits()]),
            };
            let noisy = stage("noise", add_noise(&e.volume, &spec))?;
            let path = dir.join(format!("{}.mrc", tag.label()));
            write_mrc(&noisy, &path)?;
            records.push(SubtomogramRecord {
                volume_path: rel(out, &path),
                snr_tag: tag,
                mask_path: Some(rel(out, mask_path)),
                ..e.record.clone()
            });
        }
    }
    let meta_path = out.join("metadata.ndjson");
    write_metadata(&records, &meta_path)?;
    log("noise", vec![], vec![rel(out, &meta_path)], config_hash(&cfg.snr_targets), noise_seed, t)?;

    Ok(PipelineSummary {
        placed: instances.len(),
        accepted: extraction.accepted.len(),
        rejected: extraction.rejections.len(),
        records,
        clean_volumes,
    })
}

/// Leave-one-out nearest-centroid accuracy using Pearson correlation.
/// Samples whose class has no other member are skipped.
pub fn nearest_centroid_accuracy(samples: &[(String, DensityVolume)]) -> Result<f64> {
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (label, _)) in samples.iter().enumerate() {
        classes.entry(label.as_str()).or_default().push(i);
    }
    if classes.len() < 2 {
        return Err(Error::Precondition("need at least two classes".into()));
    }
    let vecs: Vec<Vec<f64>> = samples.iter().map(|(_, v)| v.data().iter().map(|&x| x as f64).collect()).collect();
    let len = vecs[0].len();
    if vecs.iter().any(|v| v.len() != len) {
        return Err(Error::Shape("samples differ in size".into()));
    }
    let mut correct = 0;
    let mut total = 0;
    for (i, (label, _)) in samples.iter().enumerate() {
        if classes[label.as_str()].len() < 2 {
            continue;
        }
        let mut best: Option<(f64, &str)> = None;
        for (c, members) in &classes {
            let ids: Vec<usize> = members.iter().copied().filter(|&j| j != i).collect();
            if ids.is_empty() {
                continue;
            }
            let mut centroid = vec![0.0; len];
            for &j in &ids {
                for (a, v) in centroid.iter_mut().zip(&vecs[j]) {
                    *a += v / ids.len() as f64;
                }
            }
            let r = pearson(&vecs[i], &centroid);
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, c));
            }
        }
        total += 1;
        if best.map(|b| b.1) == Some(label.as_str()) {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::Precondition("no class has two members".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// PDB text for a fixture particle: atoms on a cubic lattice with spacing
/// `step` Å, filling a ball of `outer` Å radius minus a ball of `inner`.
pub fn fixture_pdb(id: &str, outer: f64, inner: f64, step: f64) -> String {
    let mut text = format!("HEADER    FIXTURE{:>45}{:<4}\n", "", id);
    let n = (outer / step).ceil() as i64;
    let mut serial = 1;
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let p = [i as f64 * step, j as f64 * step, k as f64 * step];
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r > outer || r < inner {
                    continue;
                }
                text.push_str(&format!(
                    "ATOM  {:>5}  C   GLY A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C\n",
                    serial % 100_000,
                    (serial / 10) % 10_000,
                    p[0],
                    p[1],
                    p[2]
                ));
                serial += 1;
            }
        }
    }
    text.push_str("END\n");
    text
}
