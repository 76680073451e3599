use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cryoforge::apt::{verify_equivariance, AngularBasis, SteerableSelectionNet, VerifyConfig};
use cryoforge::geometry::{gso_to_matrix, rotation_error, svd_to_matrix, translation_error, NineMat, Quaternion, SixVec};
use cryoforge::io::{append_ndjson, read_mrc, read_ndjson, write_metadata, write_mrc, write_ndjson, SnrTag, SubtomogramRecord};
use cryoforge::nrcl::{infonce_loss, sinkhorn_wasserstein, sym_loss, EmbeddingBatch, LossConfig};
use cryoforge::pipeline::{config_hash, run_pipeline, PipelineConfig, ProvenanceRecord, RejectionRecord};
use cryoforge::recon::{wbp_reconstruct, ReconConfig};
use cryoforge::scene::{compose_sample, place_instances, ParticleInstance, PlacementConfig};
use cryoforge::structure::{densify, read_pdb, DensifyConfig};
use cryoforge::subtomo::{add_noise, add_noise_masked, extract, ExtractionConfig, NoiseSpec};
use cryoforge::tiltalign::{align_series, AlignmentResult};
use cryoforge::tiltsim::{simulate_tilt_series, view_records, TiltGeometry, TiltSeries, ViewRecord};
use cryoforge::Error;

#[derive(Parser)]
#[command(name = "cryoforge", version, about = "Synthetic cryo-ET subtomogram generation and verification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration for the chosen stage.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "CRYOFORGE_JOBS")]
    jobs: Option<usize>,
    /// Single worker, bit-exact output.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Atomic model (PDB) to density map (MRC).
    Densify {
        #[arg(long)]
        pdb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place particles and compose the sample volume.
    Place {
        /// `label=path.mrc`, one per class.
        #[arg(long = "density", required = true)]
        densities: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate a tilt series from a sample volume.
    Project {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recover per-view shifts and the tilt axis.
    Align {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
    },
    /// Weighted back-projection into a tomogram.
    Reconstruct {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        views: PathBuf,
        /// Alignment result; without it views are used as recorded.
        #[arg(long)]
        alignment: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tomogram depth; defaults to the configured output depth.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Crop subtomograms around placed particles.
    Extract {
        #[arg(long)]
        tomogram: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Add calibrated Gaussian noise to a volume.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        snr: f64,
        #[arg(long)]
        out: PathBuf,
        /// Measure the signal variance inside this mask only.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Every stage from a pipeline config.
    Pipeline {
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Equivariance, geometry and loss property suites.
    Verify {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Replace the angular basis with a non-steerable one.
        #[arg(long)]
        broken_kernel: bool,
    },
    /// Contrastive losses over embedding files (NDJSON, one vector per line).
    NrclEval {
        #[arg(long)]
        z: PathBuf,
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        noisy: Option<PathBuf>,
    },
    /// JSON Schema of the pipeline config.
    Schema,
    /// Default pipeline config.
    Defaults,
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Appends one provenance line next to the stage output.
fn provenance<C: Serialize>(
    dir: &Path,
    stage: &str,
    inputs: &[&Path],
    outputs: &[&Path],
    cfg: &C,
    seed: u64,
    started: Instant,
) -> CmdResult {
    let record = ProvenanceRecord {
        stage: stage.into(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        config_hash: config_hash(cfg),
        seed,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(append_ndjson(&record, dir.join("provenance.ndjson"))?)
}

fn parent(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_series(stack: &Path, views: &Path) -> Result<TiltSeries, Failure> {
    let vol = read_mrc(stack)?;
    let records: Vec<ViewRecord> = read_ndjson(views)?;
    let geometry = TiltGeometry {
        angles: records.iter().map(|r| r.angle_deg).collect(),
        ..TiltGeometry::default()
    };
    let shifts = records.iter().map(|r| r.applied_shift).collect();
    let mut series = TiltSeries::from_stack(&vol, geometry, shifts)?;
    if records.iter().all(|r| r.recovered_shift.is_some()) {
        series.recovered_shifts = Some(records.iter().map(|r| r.recovered_shift.unwrap()).collect());
    }
    Ok(series)
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    let cfg_path = g.config.as_deref();
    let t = Instant::now();
    match cli.command {
        Command::Densify { pdb, out } => {
            let cfg: DensifyConfig = load_config(cfg_path)?;
            let vol = densify(&read_pdb(&pdb)?, &cfg)?;
            write_mrc(&vol, &out)?;
            provenance(&parent(&out), "densify", &[&pdb], &[&out], &cfg, 0, t)
        }
        Command::Place { densities, out_dir } => {
            let mut cfg: PlacementConfig = load_config(cfg_path)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let mut by_class = BTreeMap::new();
            let mut inputs = Vec::new();
            for d in &densities {
                let (label, path) = d
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("--density expects label=path, got {d:?}")))?;
                inputs.push(PathBuf::from(path));
                by_class.insert(label.to_string(), read_mrc(path)?);
            }
            let labels: Vec<String> = by_class.keys().cloned().collect();
            let instances = place_instances(&cfg, &labels)?;
            let sample = compose_sample(&by_class, &instances, &cfg)?;
            mkdir(&out_dir)?;
            let inst_path = out_dir.join("instances.ndjson");
            let sample_path = out_dir.join("sample.mrc");
            write_ndjson(&instances, &inst_path)?;
            write_mrc(&sample, &sample_path)?;
            let ins: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            provenance(&out_dir, "place", &ins, &[&inst_path, &sample_path], &cfg, cfg.seed, t)
        }
        Command::Project { volume, out_dir } => {
            let mut geom: TiltGeometry = load_config(cfg_path)?;
            if let Some(s) = g.seed {
                geom.seed = s;
            }
            let vol = read_mrc(&volume)?;
            let series = simulate_tilt_series(&vol, &geom)?;
            mkdir(&out_dir)?;
            let stack_path = out_dir.join("stack.mrc");
            let views_path = out_dir.join("views.ndjson");
            write_mrc(&series.to_stack(vol.voxel_size)?, &stack_path)?;
            write_ndjson(&view_records(&series), &views_path)?;
            provenance(&out_dir, "project", &[&volume], &[&stack_path, &views_path], &geom, geom.seed, t)
        }
        Command::Align {
            stack,
            views,
            out,
            iterations,
        } => {
            let series = load_series(&stack, &views)?;
            let result = align_series(&series, iterations)?;
            write_json(&result, &out)?;
            provenance(&parent(&out), "align", &[&stack, &views], &[&out], &iterations, 0, t)
        }
        Command::Reconstruct {
            stack,
            views,
            alignment,
            out,
            depth,
        } => {
            let mut cfg: ReconConfig = load_config(cfg_path)?;
            let series = load_series(&stack, &views)?;
            let p = &series.projections[0];
            cfg.output_dims = [depth.unwrap_or(cfg.output_dims[0]), p.height(), p.width()];
            let align = match &alignment {
                Some(a) => read_json::<AlignmentResult>(a)?,
                None => AlignmentResult::identity(series.projections.len()),
            };
            let mut tomo = wbp_reconstruct(&series, &align, &cfg)?;
            tomo.voxel_size = read_mrc(&stack)?.voxel_size;
            write_mrc(&tomo, &out)?;
            let mut ins: Vec<&Path> = vec![&stack, &views];
            if let Some(a) = &alignment {
                ins.push(a);
            }
            provenance(&parent(&out), "reconstruct", &ins, &[&out], &cfg, 0, t)
        }
        Command::Extract {
            tomogram,
            instances,
            out_dir,
        } => {
            let mut cfg: ExtractionConfig = load_config(cfg_path)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let tomo = read_mrc(&tomogram)?;
            let inst: Vec<ParticleInstance> = read_ndjson(&instances)?;
            let ex = extract(&tomo, &inst, &cfg)?;
            mkdir(&out_dir)?;
            let mut records = Vec::new();
            for e in &ex.accepted {
                let rel = format!("{}/{:05}/clean.mrc", e.record.class_label, e.index);
                let path = out_dir.join(&rel);
                mkdir(&parent(&path))?;
                write_mrc(&e.volume, &path)?;
                records.push(SubtomogramRecord {
                    volume_path: rel,
                    snr_tag: SnrTag::Clean,
                    ..e.record.clone()
                });
            }
            let rejections: Vec<RejectionRecord> = ex
                .rejections
                .iter()
                .map(|r| RejectionRecord {
                    index: r.index,
                    class_label: r.class_label.clone(),
                    reason: r.reason.clone(),
                    detail: r.detail.clone(),
                })
                .collect();
            let meta = out_dir.join("metadata.ndjson");
            let rej = out_dir.join("rejections.ndjson");
            write_metadata(&records, &meta)?;
            write_ndjson(&rejections, &rej)?;
            println!("{} extracted, {} rejected", ex.accepted.len(), ex.rejections.len());
            provenance(&out_dir, "extract", &[&tomogram, &instances], &[&meta, &rej], &cfg, cfg.seed, t)
        }
        Command::Noise { input, snr, out, mask } => {
            let spec = NoiseSpec::new(snr, g.seed.unwrap_or(0));
            let vol = read_mrc(&input)?;
            let noisy = match &mask {
                Some(m) => add_noise_masked(&vol, &read_mrc(m)?, &spec)?,
                None => add_noise(&vol, &spec)?,
            };
            write_mrc(&noisy, &out)?;
            provenance(&parent(&out), "noise", &[&input], &[&out], &spec, spec.seed, t)
        }
        Command::Pipeline { out_dir } => {
            let path = cfg_path.ok_or_else(|| invalid("pipeline needs --config"))?;
            let mut cfg = PipelineConfig::from_json_file(path)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(d) = out_dir {
                cfg.output_dir = d;
            }
            if g.jobs.is_some() {
                cfg.jobs = g.jobs;
            }
            cfg.strict |= g.strict;
            let summary = run_pipeline(&cfg)?;
            println!(
                "{} placed, {} extracted, {} rejected, {} subtomograms written to {}",
                summary.placed,
                summary.accepted,
                summary.rejected,
                summary.records.len(),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Verify { trials, broken_kernel } => verify(trials, broken_kernel, g.seed.unwrap_or(0)),
        Command::NrclEval { z, pos, clean, noisy } => {
            let cfg: LossConfig = load_config(cfg_path)?;
            let batch = |p: &Path| -> Result<EmbeddingBatch, Failure> { Ok(EmbeddingBatch::new(read_ndjson(p)?)?) };
            let (zb, pb) = (batch(&z)?, batch(&pos)?);
            let mut out = serde_json::Map::new();
            out.insert("sym_loss".into(), sym_loss(&zb, &pb, &cfg)?.into());
            let (w, plan) = sinkhorn_wasserstein(&zb, &pb, &cfg)?;
            out.insert("wasserstein".into(), w.into());
            out.insert("sinkhorn_converged".into(), plan.converged.into());
            match (clean, noisy) {
                (Some(c), Some(n)) => {
                    out.insert("infonce".into(), infonce_loss(&zb, &batch(&c)?, &batch(&n)?, &cfg)?.into());
                }
                (None, None) => {}
                _ => return Err(invalid("--clean and --noisy go together")),
            }
            println!("{}", serde_json::Value::Object(out));
            Ok(())
        }
        Command::Schema => {
            let schema = schemars::schema_for!(PipelineConfig);
            println!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
            Ok(())
        }
        Command::Defaults => {
            println!("{}", serde_json::to_string_pretty(&PipelineConfig::default()).expect("serializable"));
            Ok(())
        }
    }
}

fn row(name: &str, passed: bool, detail: String) -> bool {
    println!("{:<34} {:<4}  {detail}", name, if passed { "PASS" } else { "FAIL" });
    passed
}

fn verify(trials: usize, broken_kernel: bool, seed: u64) -> CmdResult {
    let mut net = SteerableSelectionNet::random(seed);
    if broken_kernel {
        net = net.with_angular(AngularBasis::Broken);
    }
    let cfg = VerifyConfig {
        trials,
        seed,
        ..VerifyConfig::default()
    };
    let report = verify_equivariance(&net, &cfg)?;
    let mut ok = true;
    for p in &report.properties {
        ok &= row(
            &p.name,
            p.passed,
            format!("max dev {:.3e} (tol {:.0e}), {} mismatches", p.max_deviation, p.tolerance, p.mismatches),
        );
    }

    let mut rng = cryoforge::rng::substream(seed, 0x6e0);
    let (mut ortho, mut angle) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        use rand::Rng;
        let mut gauss = || rng.sample::<f64, _>(rand_distr::StandardNormal);
        let six = SixVec {
            nu1: [gauss(), gauss(), gauss()],
            nu2: [gauss(), gauss(), gauss()],
        };
        let nine = NineMat(cryoforge::geometry::Matrix3::from_fn(|_, _| gauss()));
        for r in [gso_to_matrix(six)?, svd_to_matrix(&nine)?] {
            let (o, d) = r.orthonormality_error();
            ortho = ortho.max(o).max(d);
        }
        let axis = [gauss(), gauss(), gauss()];
        let theta = rng.random_range(0.0..180.0f64);
        let gt = cryoforge::geometry::shoemake_quaternion(&mut rng).to_matrix();
        let est = Quaternion::from_axis_angle(axis, theta.to_radians()).to_matrix().mul(&gt);
        angle = angle.max((rotation_error(&est, &gt) - theta).abs());
    }
    ok &= row("rotation_decoders_orthonormal", ortho < 1e-9, format!("max error {ortho:.1e}"));
    ok &= row("rotation_error_recovers_angle", angle < 1e-9, format!("max error {angle:.1e} deg"));
    let t = translation_error([3.0, 4.0, 0.0], [0.0; 3]);
    ok &= row("translation_error_3_4_0", t == 5.0, format!("{t}"));

    let lc = LossConfig::default();
    let z = EmbeddingBatch::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let same = infonce_loss(&z, &z, &z, &lc)?;
    ok &= row("infonce_equal_views_is_ln2", same == 2f64.ln(), format!("{same}"));
    let (_, plan) = sinkhorn_wasserstein(&z, &z, &lc)?;
    let m = plan.marginal_error();
    ok &= row("sinkhorn_marginals", m <= lc.sinkhorn_tol, format!("max error {m:.1e}"));

    if ok {
        Ok(())
    } else {
        Err(invalid("property suite failed"))
    }
}

fn configure_threads(g: &Global) -> CmdResult {
    let n = if g.strict { Some(1) } else { g.jobs };
    if let Some(n) = n {
        if n == 0 {
            return Err(invalid("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("cannot start {n} workers: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads(&cli.global).and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
