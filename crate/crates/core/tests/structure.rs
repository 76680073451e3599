use cryoforge::structure::{
    densify, gaussian_lowpass, gaussian_taps, grid_for, parse_pdb, splat_atoms, Atom, AtomicModel, DensifyConfig,
};
use cryoforge::{DensityVolume, Error};
use proptest::prelude::*;

fn atom_line(serial: usize, res: &str, xyz: [f64; 3], element: &str) -> String {
    format!(
        "ATOM  {:>5}  C   {res} A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {:>2}\n",
        serial, serial, xyz[0], xyz[1], xyz[2], element
    )
}

fn atom(element: &str, p: [f64; 3]) -> Atom {
    Atom {
        element: element.into(),
        position: p,
        occupancy: 1.0,
    }
}

fn no_lowpass() -> DensifyConfig {
    DensifyConfig {
        target_resolution: 0.0,
        ..DensifyConfig::default()
    }
}

#[test]
fn single_record() {
    let m = parse_pdb("ATOM      1  CA  ALA A   1      1.000   2.000   3.000  1.00  0.00           C\n").unwrap();
    assert_eq!(m.atoms.len(), 1);
    assert_eq!(m.atoms[0].element, "C");
    assert_eq!(m.atoms[0].position, [1.0, 2.0, 3.0]);
    assert_eq!(m.atoms[0].occupancy, 1.0);
}

#[test]
fn first_model_matches_text_scan() {
    let mut text = String::new();
    for model in 1..=2 {
        text.push_str(&format!("MODEL     {model:>4}\n"));
        for i in 0..10 {
            text.push_str(&atom_line(i + 1, "ALA", [i as f64, model as f64, 0.5], "C"));
        }
        text.push_str(&atom_line(11, "HOH", [0.0, 0.0, 0.0], "O").replacen("ATOM  ", "HETATM", 1));
        text.push_str("ENDMDL\n");
    }
    let first = text.split("ENDMDL").next().unwrap();
    let expected = first
        .lines()
        .filter(|l| (l.starts_with("ATOM") || l.starts_with("HETATM")) && !l.contains("HOH"))
        .count();
    let m = parse_pdb(&text).unwrap();
    assert_eq!(expected, 10);
    assert_eq!(m.atoms.len(), expected);
    assert!(m.atoms.iter().all(|a| a.position[1] == 1.0));
}

#[test]
fn no_atoms_and_bad_coordinates() {
    assert!(matches!(parse_pdb("HEADER x\nEND\n"), Err(Error::EmptyModel)));
    let bad = "HEADER\nATOM      1  CA  ALA A   1      1.000   abcde   3.000  1.00  0.00           C\n";
    assert!(matches!(parse_pdb(bad), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn single_carbon_peaks_at_nearest_voxel() {
    let m = AtomicModel::new(vec![atom("C", [3.0, -4.0, 12.0])], "t").unwrap();
    let cfg = no_lowpass();
    let v = densify(&m, &cfg).unwrap();
    assert_eq!(v.max(), 1.0);
    let g = grid_for(&m, &cfg);
    let idx = [2, 1, 0].map(|a| ((m.atoms[0].position[a] - g.origin[a]) / g.voxel_size).round() as usize);
    assert_eq!(v.get(idx[0], idx[1], idx[2]), 1.0);
}

#[test]
fn adjacent_pair_is_mirror_symmetric() {
    let cfg = DensifyConfig {
        voxel_size: 1.0,
        target_resolution: 3.0,
        ..DensifyConfig::default()
    };
    let m = AtomicModel::new(vec![atom("N", [0.0, 0.0, 0.0]), atom("N", [1.0, 0.0, 0.0])], "p").unwrap();
    let v = densify(&m, &cfg).unwrap();
    let [nd, nh, nw] = v.dims();
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                assert!((v.get(d, h, w) - v.get(d, h, nw - 1 - w)).abs() <= 1e-6);
            }
        }
    }
}

fn direct_blur(v: &DensityVolume, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as i64;
    let [nd, nh, nw] = v.dims();
    let mut out = vec![0.0; v.len()];
    for d in 0..nd as i64 {
        for h in 0..nh as i64 {
            for w in 0..nw as i64 {
                let mut s = 0.0;
                for a in -r..=r {
                    for b in -r..=r {
                        for c in -r..=r {
                            let (sd, sh, sw) = (d - a, h - b, w - c);
                            if sd < 0 || sh < 0 || sw < 0 || sd >= nd as i64 || sh >= nh as i64 || sw >= nw as i64 {
                                continue;
                            }
                            s += taps[(a + r) as usize] * taps[(b + r) as usize] * taps[(c + r) as usize]
                                * v.get(sd as usize, sh as usize, sw as usize) as f64;
                        }
                    }
                }
                out[((d * nh as i64 + h) * nw as i64 + w) as usize] = s;
            }
        }
    }
    out
}

#[test]
fn lowpass_matches_direct_convolution() {
    let m = AtomicModel::new(
        vec![atom("C", [0.0, 0.0, 0.0]), atom("S", [6.0, 3.0, -4.0]), atom("O", [-5.0, 2.0, 5.0])],
        "x",
    )
    .unwrap();
    let cfg = DensifyConfig {
        voxel_size: 1.5,
        ..no_lowpass()
    };
    let g = grid_for(&m, &cfg);
    assert!(g.n <= 16, "grid {}", g.n);
    let raw = splat_atoms(&m, &cfg, &g);
    for sigma in [0.8, 1.5] {
        let fft = gaussian_lowpass(&raw, sigma);
        let direct = direct_blur(&raw, sigma);
        let worst = fft
            .data()
            .iter()
            .zip(&direct)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "sigma {sigma}: {worst}");
    }
}

fn fwhm_along_w(v: &DensityVolume) -> f64 {
    let [nd, nh, nw] = v.dims();
    let (d, h) = (nd / 2, nh / 2);
    let row: Vec<f64> = (0..nw).map(|w| v.get(d, h, w) as f64).collect();
    let peak = row.iter().cloned().fold(0.0, f64::max);
    let half = peak / 2.0;
    let above: Vec<usize> = (0..nw).filter(|&w| row[w] >= half).collect();
    let (lo, hi) = (above[0], *above.last().unwrap());
    let left = lo as f64 - (row[lo] - half) / (row[lo] - row[lo - 1]);
    let right = hi as f64 + (row[hi] - half) / (row[hi] - row[hi + 1]);
    right - left
}

#[test]
fn broader_element_has_larger_fwhm() {
    let cfg = DensifyConfig {
        voxel_size: 0.1,
        peak_threshold_fraction: 0.0,
        ..no_lowpass()
    };
    let mut widths = Vec::new();
    for e in ["O", "N", "C", "P", "S"] {
        let m = AtomicModel::new(vec![atom(e, [0.0, 0.0, 0.0])], e).unwrap();
        widths.push(fwhm_along_w(&densify(&m, &cfg).unwrap()));
    }
    for pair in widths.windows(2) {
        assert!(pair[1] > pair[0], "{widths:?}");
    }
}

#[test]
fn zero_amplitude_and_coincident_atoms() {
    let mut cfg = DensifyConfig::default();
    cfg.element_sigma_table.get_mut("C").unwrap().amplitude = 0.0;
    let m = AtomicModel::new(vec![atom("C", [0.0; 3])], "z").unwrap();
    assert!(matches!(densify(&m, &cfg), Err(Error::Config(_))));
    let same = AtomicModel::new(vec![atom("C", [1.0; 3]); 4], "c").unwrap();
    assert_eq!(densify(&same, &DensifyConfig::default()).unwrap().max(), 1.0);
}

fn atoms_strategy() -> impl Strategy<Value = Vec<Atom>> {
    let el = prop::sample::select(vec!["C", "N", "O", "S", "P", "H", "FE"]);
    prop::collection::vec((el, proptest::array::uniform3(-30.0f64..30.0), 0.2f64..1.0), 1..12).prop_map(|v| {
        v.into_iter()
            .map(|(e, p, occ)| Atom {
                element: e.into(),
                position: p,
                occupancy: occ,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_normalized_and_thresholded(atoms in atoms_strategy(), thr in 0.0f64..0.2) {
        let cfg = DensifyConfig { peak_threshold_fraction: thr, ..DensifyConfig::default() };
        let v = densify(&AtomicModel::new(atoms, "p").unwrap(), &cfg).unwrap();
        prop_assert_eq!(v.max(), 1.0);
        prop_assert!(v.data().iter().all(|&x| x == 0.0 || (x as f64 >= thr && x <= 1.0)));
    }

    #[test]
    fn adding_an_atom_never_lowers_a_voxel(atoms in atoms_strategy(), extra in proptest::array::uniform3(-30.0f64..30.0)) {
        let cfg = DensifyConfig::default();
        let mut more = atoms.clone();
        more.push(atom("C", extra));
        let big = AtomicModel::new(more, "b").unwrap();
        let g = grid_for(&big, &cfg);
        let before = splat_atoms(&AtomicModel::new(atoms, "a").unwrap(), &cfg, &g);
        let after = splat_atoms(&big, &cfg, &g);
        prop_assert!(before.data().iter().zip(after.data()).all(|(a, b)| b >= a));
    }
}
