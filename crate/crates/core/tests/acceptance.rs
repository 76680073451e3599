//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use cryoforge::apt::{verify_equivariance, EquivarianceReport, SteerableSelectionNet, VerifyConfig};
use cryoforge::geometry::{
    gso_to_matrix, rotation_error, shoemake_quaternion, svd_to_matrix, translation_error, NineMat, Quaternion, SixVec,
};
use cryoforge::io::{read_metadata, read_mrc, write_metadata, write_mrc, SnrTag, SubtomogramRecord};
use cryoforge::nrcl::{
    infonce_loss, infonce_term, nrcl_step, sinkhorn_wasserstein, sym_loss, anchor_scores, EmbeddingBatch,
    LinearProjectionEncoder, LossConfig,
};
use cryoforge::pipeline::{fixture_pdb, nearest_centroid_accuracy, run_pipeline, PipelineConfig, StructureInput};
use cryoforge::recon::{wbp_reconstruct, ReconConfig};
use cryoforge::rng::substream;
use cryoforge::scene::{poisson_disk_sample, PlacementConfig};
use cryoforge::subtomo::{add_noise, signal_variance, NoiseSpec};
use cryoforge::tiltalign::{align_series, phase_correlate, AlignmentResult};
use cryoforge::tiltsim::{fourier_shift, simulate_tilt_series, TiltGeometry};
use cryoforge::volume::{pearson, DensityVolume, Image2};
use cryoforge::{RigidTransform, RotationMatrix};
use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: u64, r: Outcome) -> Outcome {
    let t = elapsed.as_secs_f64();
    match r {
        Ok(m) if t <= limit_s as f64 => Ok(format!("{m}; {t:.1}s")),
        Ok(m) => Err(format!("{m}; {t:.1}s exceeds {limit_s}s")),
        Err(m) => Err(format!("{m}; {t:.1}s")),
    }
}

fn equivariance_report() -> (EquivarianceReport, Duration) {
    let t = Instant::now();
    let cfg = VerifyConfig {
        trials: 20,
        seed: 2024,
        volume_edge: 32,
        patch: 4,
        shifts_per_trial: None,
        randomize_weights: true,
    };
    let report = verify_equivariance(&SteerableSelectionNet::default(), &cfg).expect("verify runs");
    (report, t.elapsed())
}

fn property(report: &EquivarianceReport, name: &str) -> Outcome {
    let p = report.properties.iter().find(|p| p.name == name).expect("property present");
    check(
        p.passed,
        format!("{name}: max dev {:.3e} (tol {:.0e}), {} mismatches", p.max_deviation, p.tolerance, p.mismatches),
    )
}

fn c1(report: &EquivarianceReport, t: Duration) -> Outcome {
    within(t, 120, property(report, "translation_extraction"))
}

fn c2(report: &EquivarianceReport, t: Duration) -> Outcome {
    within(t, 120, property(report, "shift_probability_permutation"))
}

fn c3(report: &EquivarianceReport, t: Duration) -> Outcome {
    let parts = ["rotation_logit_invariance", "rotation_probability_invariance", "rotation_extraction"]
        .map(|n| property(report, n));
    let ok = parts.iter().all(|p| p.is_ok());
    let msg = parts.iter().map(|p| p.clone().unwrap_or_else(|e| e)).collect::<Vec<_>>().join("; ");
    within(t, 120, check(ok, msg))
}

fn smooth_volume(edge: usize, seed: u64) -> DensityVolume {
    let mut rng = substream(seed, 7);
    let blobs: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let c = [0; 3].map(|_: i32| rng.random_range(0.2 * edge as f64..0.8 * edge as f64));
            (c, rng.random_range(1.5..4.0), rng.random_range(0.5..2.0))
        })
        .collect();
    DensityVolume::from_fn([edge; 3], 10.0, |d, h, w| {
        blobs
            .iter()
            .map(|(c, s, a)| {
                let r2 = (w as f64 - c[0]).powi(2) + (h as f64 - c[1]).powi(2) + (d as f64 - c[2]).powi(2);
                a * (-r2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>() as f32
    })
}

fn c4() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for tag in SnrTag::ALL {
        let target = tag.value();
        let (mut sig, mut noise) = (0.0, 0.0);
        for seed in 0..10u64 {
            let clean = smooth_volume(32, seed);
            let noisy = add_noise(&clean, &NoiseSpec::new(target, 1000 + seed)).map_err(|e| e.to_string())?;
            sig += signal_variance(&clean, None).unwrap();
            let diff: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(a, b)| *a as f64 - *b as f64).collect();
            let m = diff.iter().sum::<f64>() / diff.len() as f64;
            noise += diff.iter().map(|v| (v - m).powi(2)).sum::<f64>() / diff.len() as f64;
        }
        let measured = sig / noise;
        let rel = (measured / target - 1.0).abs();
        worst = worst.max(rel);
        lines.push(format!("{target}→{measured:.4}"));
    }
    within(
        t.elapsed(),
        30,
        check(worst < 0.05, format!("worst relative error {:.2}% ({})", worst * 100.0, lines.join(", "))),
    )
}

fn phantom2(h: usize, w: usize, seed: u64) -> Image2 {
    let mut rng = substream(seed, 3);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(8.0..h as f64 - 8.0),
                rng.random_range(8.0..w as f64 - 8.0),
                rng.random_range(2.0..4.0),
                rng.random_range(0.5..1.5),
            )
        })
        .collect();
    Image2::from_fn(h, w, |y, x| {
        blobs
            .iter()
            .map(|(cy, cx, s, a)| a * (-((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    })
}

fn blob_volume(dims: [usize; 3], blobs: &[([f64; 3], f64, f64)]) -> DensityVolume {
    DensityVolume::from_fn(dims, 10.0, |d, h, w| {
        blobs
            .iter()
            .map(|(c, s, a)| {
                let r2 = (w as f64 - c[0]).powi(2) + (h as f64 - c[1]).powi(2) + (d as f64 - c[2]).powi(2);
                a * (-r2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>() as f32
    })
}

fn c5() -> Outcome {
    let t = Instant::now();
    let mut rng = substream(55, 0);
    let mut int_fail = 0;
    for trial in 0..50 {
        let a = phantom2(48, 64, trial);
        let (dy, dx) = (rng.random_range(-20i64..=20), rng.random_range(-28i64..=28));
        let b = a.circshift(dy, dx);
        if phase_correlate(&a, &b).map_err(|e| e.to_string())? != [dx as f64, dy as f64] {
            int_fail += 1;
        }
    }
    let mut sub_err = 0.0f64;
    for trial in 0..50 {
        let a = phantom2(48, 64, 100 + trial);
        let s = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let b = fourier_shift(&a, s);
        let d = phase_correlate(&a, &b).map_err(|e| e.to_string())?;
        sub_err = sub_err.max((d[0] - s[0]).abs()).max((d[1] - s[1]).abs());
    }
    let vol = blob_volume(
        [32, 64, 64],
        // on the tilt axis, so views differ only by the applied shifts
        &[([31.5, 31.5, 15.5], 3.0, 1.0), ([31.5, 44.0, 15.5], 2.0, 0.7), ([31.5, 20.0, 15.5], 2.5, 0.8)],
    );
    let geom = TiltGeometry {
        seed: 9,
        ..TiltGeometry::default()
    };
    let series = simulate_tilt_series(&vol, &geom).map_err(|e| e.to_string())?;
    let align = align_series(&series, 3).map_err(|e| e.to_string())?;
    let z = geom.zero_index();
    let a0 = series.applied_shifts[z];
    let mut align_err = 0.0f64;
    for (rec, app) in align.shifts.iter().zip(&series.applied_shifts) {
        for k in 0..2 {
            align_err = align_err.max((rec[k] + (app[k] - a0[k])).abs());
        }
    }
    within(
        t.elapsed(),
        60,
        check(
            int_fail == 0 && sub_err <= 0.1 && align_err <= 0.1,
            format!(
                "integer misses {int_fail}/50; sub-pixel max err {sub_err:.4} px; tilt-series max err {align_err:.4} px"
            ),
        ),
    )
}

fn central_pearson(a: &DensityVolume, b: &DensityVolume) -> f64 {
    let [d, h, w] = a.dims();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for k in d / 4..3 * d / 4 {
        for j in h / 4..3 * h / 4 {
            for i in w / 4..3 * w / 4 {
                x.push(a.get(k, j, i) as f64);
                y.push(b.get(k, j, i) as f64);
            }
        }
    }
    pearson(&x, &y)
}

fn c6() -> Outcome {
    let t = Instant::now();
    let truth = blob_volume(
        [64; 3],
        &[
            ([31.5, 31.5, 31.5], 3.5, 1.0),
            ([38.0, 27.0, 35.0], 2.5, 0.8),
            ([25.0, 36.0, 27.0], 3.0, 0.6),
        ],
    );
    let run = |geom: TiltGeometry| -> Result<f64, String> {
        let geom = TiltGeometry {
            shift_range: 0.0,
            projection_snr: None,
            ..geom
        };
        let series = simulate_tilt_series(&truth, &geom).map_err(|e| e.to_string())?;
        let cfg = ReconConfig {
            output_dims: [64; 3],
            ..ReconConfig::default()
        };
        let rec = wbp_reconstruct(&series, &AlignmentResult::identity(geom.angles.len()), &cfg)
            .map_err(|e| e.to_string())?;
        Ok(central_pearson(&rec, &truth))
    };
    let full = run(TiltGeometry::pretraining())?;
    let wedge = run(TiltGeometry::default())?;
    within(
        t.elapsed(),
        120,
        check(
            full >= 0.90 && wedge >= 0.70 && wedge < full,
            format!("Pearson ±90° {full:.4}, ±60° {wedge:.4}"),
        ),
    )
}

fn c7() -> Outcome {
    let t = Instant::now();
    let mut rng = substream(77, 0);
    let mut gauss = || -> f64 { rng.sample(StandardNormal) };
    let (mut ortho, mut det, mut idem) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100_000 {
        let six = SixVec {
            nu1: [gauss(), gauss(), gauss()],
            nu2: [gauss(), gauss(), gauss()],
        };
        let r = gso_to_matrix(six).map_err(|e| e.to_string())?;
        let (o, d) = r.orthonormality_error();
        ortho = ortho.max(o);
        det = det.max(d);
        let m = NineMat(Matrix3::from_fn(|_, _| gauss()));
        let r = svd_to_matrix(&m).map_err(|e| e.to_string())?;
        let (o, d) = r.orthonormality_error();
        ortho = ortho.max(o);
        det = det.max(d);
        let again = svd_to_matrix(&NineMat(r.0)).map_err(|e| e.to_string())?;
        idem = idem.max((again.0 - r.0).abs().max());
    }
    let mut angle_err = 0.0f64;
    for _ in 0..10_000 {
        let gt = shoemake_quaternion(&mut rng).to_matrix();
        let axis = [0; 3].map(|_: i32| rng.sample::<f64, _>(StandardNormal));
        let theta: f64 = rng.random_range(0.0..180.0);
        let est = Quaternion::from_axis_angle(axis, theta.to_radians()).to_matrix().mul(&gt);
        angle_err = angle_err.max((rotation_error(&est, &gt) - theta).abs());
    }
    let t5 = translation_error([3.0, 4.0, 0.0], [0.0, 0.0, 0.0]);
    within(
        t.elapsed(),
        30,
        check(
            ortho < 1e-9 && det < 1e-9 && idem < 1e-9 && angle_err < 1e-9 && t5 == 5.0,
            format!(
                "‖RᵀR−I‖ {ortho:.1e}, |det−1| {det:.1e}, SVD idempotence {idem:.1e}, angle err {angle_err:.1e}°, |(3,4,0)| = {t5}"
            ),
        ),
    )
}

fn unit_rows(rng: &mut impl Rng, b: usize, dim: usize) -> EmbeddingBatch {
    EmbeddingBatch::normalized((0..b).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect())
        .expect("finite rows")
}

fn lp_oracle(c: &[f64], b: usize) -> f64 {
    fn perms(k: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..k {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                perms(k, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut all = Vec::new();
    perms(b, &mut vec![false; b], &mut Vec::new(), &mut all);
    all.iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[i * b + j]).sum::<f64>() / b as f64)
        .fold(f64::INFINITY, f64::min)
}

fn c8() -> Outcome {
    let t = Instant::now();
    let cfg = LossConfig::default();
    let mut notes = Vec::new();
    let mut ok = true;

    let z = EmbeddingBatch::new(vec![vec![1.0, 0.0]]).unwrap();
    let noisy = EmbeddingBatch::new(vec![vec![0.9, 0.19f64.sqrt()]]).unwrap();
    let hand = infonce_loss(&z, &z, &noisy, &cfg).map_err(|e| e.to_string())?;
    let expect = (1.0 + (-1.0f64).exp()).ln();
    ok &= (hand - expect).abs() < 1e-9;
    notes.push(format!("hand case err {:.1e}", (hand - expect).abs()));

    let mut rng = substream(88, 0);
    let zb = unit_rows(&mut rng, 6, 16);
    let same = infonce_loss(&zb, &zb, &zb, &cfg).map_err(|e| e.to_string())?;
    ok &= same == 2f64.ln();
    notes.push(format!("clean==noisy {same}"));

    let (mut marg, mut lp) = (0.0f64, 0.0f64);
    let sharp = LossConfig {
        sinkhorn_epsilon: 0.001,
        sinkhorn_max_iter: 100_000,
        ..cfg
    };
    for b in 1..=4 {
        for _ in 0..25 {
            let a = unit_rows(&mut rng, b, 8);
            let p = unit_rows(&mut rng, b, 8);
            let (_, plan) = sinkhorn_wasserstein(&a, &p, &cfg).map_err(|e| e.to_string())?;
            marg = marg.max(plan.marginal_error());
            let (cost, plan) = sinkhorn_wasserstein(&a, &p, &sharp).map_err(|e| e.to_string())?;
            marg = marg.max(plan.marginal_error());
            let c = cryoforge::nrcl::cost_matrix(&a, &p);
            lp = lp.max((cost - lp_oracle(&c, b)).abs());
        }
    }
    ok &= marg < 1e-6 && lp < 1e-3;
    notes.push(format!("Sinkhorn marginals {marg:.1e}, LP gap {lp:.1e}"));

    let a = unit_rows(&mut rng, 8, 16);
    let p = unit_rows(&mut rng, 8, 16);
    let small = LossConfig { rince_c: 1e-7, ..cfg };
    let rince = sym_loss(&a, &p, &small).map_err(|e| e.to_string())?;
    let info: f64 = (0..8)
        .map(|i| {
            let (pos, negs) = anchor_scores(&a, &p, i, cfg.temperature);
            infonce_term(pos, &negs)
        })
        .sum::<f64>()
        / 8.0;
    ok &= (rince - info).abs() < 1e-3;
    notes.push(format!("c→0 gap {:.1e}", (rince - info).abs()));

    let vols: Vec<DensityVolume> = (0..4).map(|s| smooth_volume(12, s)).collect();
    let noisy_vols: Vec<DensityVolume> = vols
        .iter()
        .enumerate()
        .map(|(i, v)| add_noise(v, &NoiseSpec::new(0.1, i as u64)).unwrap())
        .collect();
    let ts: Vec<RigidTransform> = (0..4)
        .map(|_| RigidTransform {
            rotation: shoemake_quaternion(&mut rng).to_matrix(),
            translation: [rng.random_range(-1.0..1.0), 0.0, 0.0],
        })
        .collect();
    let tp: Vec<RigidTransform> = (0..4)
        .map(|_| RigidTransform {
            rotation: shoemake_quaternion(&mut rng).to_matrix(),
            translation: [0.0; 3],
        })
        .collect();
    let q = LinearProjectionEncoder { dim: 12, seed: 1 };
    let k = LinearProjectionEncoder { dim: 12, seed: 2 };
    let br = nrcl_step(&vols, &vols, &noisy_vols, &ts, &tp, &q, &k, &cfg).map_err(|e| e.to_string())?;
    let inst = br.sym_12 + cfg.lambda_w * br.wass_12 + br.sym_21 + cfg.lambda_w * br.wass_21;
    let add = (inst - br.instance).abs().max((br.instance + br.noise - br.total).abs());
    ok &= add < 1e-12;
    notes.push(format!("breakdown additivity {add:.1e}"));

    within(t.elapsed(), 60, check(ok, notes.join("; ")))
}

fn c9() -> Outcome {
    let t = Instant::now();
    let mut violations = 0usize;
    let mut placed = 0usize;
    let r_ex = PlacementConfig::default().exclusion_radius();
    for run in 0..1000u64 {
        let cfg = PlacementConfig {
            seed: run,
            ..PlacementConfig::default()
        };
        let pts = poisson_disk_sample(&cfg).map_err(|e| e.to_string())?;
        placed += pts.len();
        for i in 0..pts.len() {
            for j in 0..i {
                let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                if d2 < r_ex * r_ex {
                    violations += 1;
                }
            }
        }
    }
    let n = 50_000;
    let mut rng = substream(99, 0);
    let mut sums = [0.0f64; 9];
    let mut sq = [0.0f64; 9];
    let mut norm_err = 0.0f64;
    for _ in 0..n {
        let q = shoemake_quaternion(&mut rng);
        norm_err = norm_err.max((q.norm() - 1.0).abs());
        let r: RotationMatrix = q.to_matrix();
        for (k, v) in r.matrix().iter().enumerate() {
            sums[k] += v;
            sq[k] += v * v;
        }
    }
    let mut worst_z = 0.0f64;
    for k in 0..9 {
        let mean = sums[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        worst_z = worst_z.max(mean.abs() / se);
    }
    within(
        t.elapsed(),
        60,
        check(
            violations == 0 && norm_err < 1e-9 && worst_z < 3.0,
            format!(
                "R_ex {r_ex}: {violations} violations over {placed} points; max |‖q‖−1| {norm_err:.1e}; worst entry mean {worst_z:.2} SE"
            ),
        ),
    )
}

fn pipeline_config(dir: &std::path::Path, out: &str) -> Result<PipelineConfig, String> {
    let write = |name: &str, text: String| -> Result<std::path::PathBuf, String> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| e.to_string())?;
        Ok(p)
    };
    let small = write("ball.pdb", fixture_pdb("BALL", 40.0, 0.0, 4.0))?;
    let shell = write("shell.pdb", fixture_pdb("SHEL", 95.0, 75.0, 4.0))?;
    let mut cfg = PipelineConfig {
        structures: vec![
            StructureInput {
                label: "ball".into(),
                pdb: Some(small),
                density: None,
            },
            StructureInput {
                label: "shell".into(),
                pdb: Some(shell),
                density: None,
            },
        ],
        output_dir: dir.join(out),
        seed: 31,
        ..PipelineConfig::default()
    };
    cfg.placement.volume_dims = [48, 160, 160];
    cfg.placement.target_count = 10;
    cfg.snr_targets = vec![100.0];
    Ok(cfg)
}

fn c10() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = pipeline_config(dir.path(), "run1")?;
    let summary = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let samples: Vec<(String, DensityVolume)> = summary
        .clean_volumes
        .iter()
        .map(|(label, p)| Ok((label.clone(), read_mrc(p).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    let acc = nearest_centroid_accuracy(&samples).map_err(|e| e.to_string())?;
    let cfg2 = PipelineConfig {
        output_dir: dir.path().join("run2"),
        ..cfg.clone()
    };
    run_pipeline(&cfg2).map_err(|e| e.to_string())?;
    let m1 = std::fs::read(cfg.output_dir.join("metadata.ndjson")).map_err(|e| e.to_string())?;
    let m2 = std::fs::read(cfg2.output_dir.join("metadata.ndjson")).map_err(|e| e.to_string())?;
    let per_class = |c: &str| samples.iter().filter(|s| s.0 == c).count();
    within(
        t.elapsed(),
        600,
        check(
            acc >= 0.9 && m1 == m2 && !m1.is_empty() && summary.accepted == 10,
            format!(
                "{} placed, {} extracted (ball {}, shell {}), accuracy {:.0}%, metadata identical: {}",
                summary.placed,
                summary.accepted,
                per_class("ball"),
                per_class("shell"),
                acc * 100.0,
                m1 == m2
            ),
        ),
    )
}

fn c11() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = substream(111, 0);
    let mut dims: Vec<[usize; 3]> = (0..9)
        .map(|_| [0; 3].map(|_: i32| rng.random_range(1..40usize)))
        .collect();
    dims.push([200, 500, 500]);
    let mut mismatched = 0;
    for (i, d) in dims.iter().enumerate() {
        let n = d[0] * d[1] * d[2];
        let data: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * 100.0).collect();
        let vol = DensityVolume::from_vec(*d, data, 10.0).map_err(|e| e.to_string())?;
        let p = dir.path().join(format!("v{i}.mrc"));
        write_mrc(&vol, &p).map_err(|e| e.to_string())?;
        let back = read_mrc(&p).map_err(|e| e.to_string())?;
        let same = back.dims() == vol.dims()
            && back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatched += !same as usize;
    }
    let records: Vec<SubtomogramRecord> = (0..50)
        .map(|i| SubtomogramRecord {
            volume_path: format!("c{}/{i:05}/snr0.1.mrc", i % 3),
            class_label: format!("c{}", i % 3),
            center_offset: [0; 3].map(|_: i32| rng.random_range(-2.5..2.5)),
            orientation: shoemake_quaternion(&mut rng),
            snr_tag: SnrTag::ALL[i % 5],
            mask_path: if i % 2 == 0 { Some(format!("c{}/{i:05}/mask.mrc", i % 3)) } else { None },
        })
        .collect();
    let mp = dir.path().join("metadata.ndjson");
    write_metadata(&records, &mp).map_err(|e| e.to_string())?;
    let back = read_metadata(&mp).map_err(|e| e.to_string())?;
    within(
        t.elapsed(),
        60,
        check(
            mismatched == 0 && back == records,
            format!("{mismatched}/10 MRC mismatches (incl. 200×500×500); metadata equal: {}", back == records),
        ),
    )
}

fn main() {
    let (report, apt_time) = equivariance_report();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("Polyphase translation equivariance", Box::new(|| c1(&report, apt_time))),
        ("Selection-probability shift permutation", Box::new(|| c2(&report, apt_time))),
        ("Octahedral rotation invariance", Box::new(|| c3(&report, apt_time))),
        ("Noise calibration", Box::new(c4)),
        ("Phase correlation and tilt alignment", Box::new(c5)),
        ("WBP fidelity", Box::new(c6)),
        ("Rotation geometry", Box::new(c7)),
        ("NRCL losses", Box::new(c8)),
        ("Placement and rotation sampling", Box::new(c9)),
        ("Desk-scale pipeline", Box::new(c10)),
        ("MRC and metadata I/O", Box::new(c11)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        match f() {
            Ok(m) => println!("[PASS] {}. {name}: {m}", i + 1),
            Err(m) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {m}", i + 1)
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
