use cryoforge::tiltalign::{
    align_series, apply_shifts, axis_model, axis_mse, phase_correlate, refine_axis, AXIS_GRID_STEP, AXIS_GRID_STEPS,
};
use cryoforge::tiltsim::{angle_range, fourier_shift, simulate_tilt_series, TiltGeometry, TiltSeries};
use cryoforge::{DensityVolume, Error, Image2};
use proptest::prelude::*;

/// Smooth, asymmetric, band-limited test image.
fn image(h: usize, w: usize) -> Image2 {
    Image2::from_fn(h, w, |y, x| {
        let g = |cy: f64, cx: f64, s: f64| (-((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (2.0 * s * s)).exp();
        g(14.0, 18.0, 3.0) + 0.6 * g(22.0, 9.0, 2.0) - 0.3 * g(8.0, 26.0, 2.5)
    })
}

/// Features on the tilt axis, so views differ only by their drift.
fn on_axis_volume() -> DensityVolume {
    let spots = [(15.5, 8.0, 1.0), (15.5, 18.0, 0.7), (15.5, 25.0, 0.5)];
    DensityVolume::from_fn([16, 32, 32], 10.0, |d, h, w| {
        spots
            .iter()
            .map(|&(x, y, a)| {
                let r2 = (w as f64 - x).powi(2) + (h as f64 - y).powi(2) + (d as f64 - 7.5).powi(2);
                a * (-r2 / 4.5).exp()
            })
            .sum::<f64>() as f32
    })
}

fn series(shift_range: f64, seed: u64) -> TiltSeries {
    let g = TiltGeometry {
        angles: angle_range(-30.0, 30.0, 6.0),
        shift_range,
        seed,
        ..TiltGeometry::default()
    };
    simulate_tilt_series(&on_axis_volume(), &g).unwrap()
}

fn bare_series(angles: Vec<f64>) -> TiltSeries {
    let n = angles.len();
    TiltSeries {
        geometry: TiltGeometry {
            angles,
            ..TiltGeometry::default()
        },
        projections: vec![Image2::zeros(4, 4); n],
        applied_shifts: vec![[0.0; 2]; n],
        recovered_shifts: None,
    }
}

#[test]
fn identical_and_integer_cases() {
    let a = image(32, 32);
    assert_eq!(phase_correlate(&a, &a).unwrap(), [0.0, 0.0]);
    let b = a.circshift(-3, 5);
    assert_eq!(phase_correlate(&a, &b).unwrap(), [5.0, -3.0]);
}

#[test]
fn sub_pixel_fourier_shift() {
    let a = image(32, 32);
    let d = phase_correlate(&a, &fourier_shift(&a, [2.30, -1.70])).unwrap();
    assert!((d[0] - 2.30).abs() < 0.1 && (d[1] + 1.70).abs() < 0.1, "{d:?}");
}

#[test]
fn constant_and_mismatched_inputs() {
    let c = Image2::from_fn(16, 16, |_, _| 2.0);
    assert!(matches!(phase_correlate(&c, &image(16, 16)), Err(Error::Degenerate(_))));
    assert!(matches!(phase_correlate(&image(16, 16), &image(16, 18)), Err(Error::Shape(_))));
}

#[test]
fn null_series_recovers_nothing() {
    let r = align_series(&series(0.0, 0), 3).unwrap();
    for s in &r.shifts {
        assert!(s[0].abs() < 0.05 && s[1].abs() < 0.05, "{s:?}");
    }
}

#[test]
fn drifted_series_is_recovered_and_recentered() {
    let s = series(1.0, 8);
    let r = align_series(&s, 3).unwrap();
    let z = s.geometry.zero_index();
    let a0 = s.applied_shifts[z];
    for (got, app) in r.shifts.iter().zip(&s.applied_shifts) {
        let want = [-(app[0] - a0[0]), -(app[1] - a0[1])];
        assert!((got[0] - want[0]).abs() <= 0.1 && (got[1] - want[1]).abs() <= 0.1, "{got:?} vs {want:?}");
    }
    let aligned = apply_shifts(&s.projections, &r.shifts);
    for img in &aligned {
        let d = phase_correlate(&aligned[z], img).unwrap();
        assert!(d[0].abs() < 0.1 && d[1].abs() < 0.1, "{d:?}");
    }
    assert!(r.residual_mse >= 0.0);
    assert_eq!(r.shifts.len(), s.projections.len());
}

#[test]
fn iteration_updates_do_not_grow() {
    for seed in 0..4 {
        let r = align_series(&series(1.0, seed), 5).unwrap();
        for w in r.iteration_updates.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {:?}", r.iteration_updates);
        }
    }
}

#[test]
fn zero_iterations_rejected() {
    assert!(matches!(align_series(&series(0.0, 0), 0), Err(Error::Config(_))));
}

#[test]
fn axis_null_case() {
    let s = bare_series(angle_range(-60.0, 60.0, 2.0));
    let fit = refine_axis(&s, &vec![[0.0; 2]; 61]).unwrap();
    assert_eq!((fit.axis_angle, fit.axis_offset), (0.0, 0.0));
    assert!(fit.residual_mse < 1e-4);
}

#[test]
fn injected_axis_rotation_is_found() {
    let s = bare_series(angle_range(-60.0, 60.0, 2.0));
    let disp: Vec<[f64; 2]> = s.geometry.angles.iter().map(|&a| axis_model(a, 1.5, 3.0)).collect();
    let fit = refine_axis(&s, &disp).unwrap();
    assert!((fit.axis_angle - 1.5).abs() <= 0.1, "{fit:?}");
    assert!((fit.axis_offset - 3.0).abs() <= 0.1, "{fit:?}");
}

#[test]
fn too_few_views() {
    let s = bare_series(vec![-2.0, 0.0]);
    assert!(matches!(refine_axis(&s, &[[0.0; 2]; 2]), Err(Error::Underdetermined(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn correlation_is_antisymmetric(dx in -4.0f64..4.0, dy in -4.0f64..4.0) {
        let a = image(32, 32);
        let b = fourier_shift(&a, [dx, dy]);
        let f = phase_correlate(&a, &b).unwrap();
        let r = phase_correlate(&b, &a).unwrap();
        prop_assert!((f[0] + r[0]).abs() <= 0.02 && (f[1] + r[1]).abs() <= 0.02, "{f:?} {r:?}");
    }

    #[test]
    fn axis_fit_is_the_exact_grid_argmin(
        angle in -5.0f64..5.0, offset in -5.0f64..5.0,
        noise in proptest::collection::vec(proptest::array::uniform2(-0.3f64..0.3), 21),
    ) {
        let s = bare_series(angle_range(-60.0, 60.0, 6.0));
        let disp: Vec<[f64; 2]> = s.geometry.angles.iter().zip(&noise)
            .map(|(&a, n)| { let p = axis_model(a, angle, offset); [p[0] + n[0], p[1] + n[1]] })
            .collect();
        let fit = refine_axis(&s, &disp).unwrap();
        prop_assert_eq!(fit.residual_mse, axis_mse(&s.geometry.angles, &disp, fit.axis_angle, fit.axis_offset));
        for i in -AXIS_GRID_STEPS..=AXIS_GRID_STEPS {
            for j in -AXIS_GRID_STEPS..=AXIS_GRID_STEPS {
                let m = axis_mse(&s.geometry.angles, &disp, i as f64 * AXIS_GRID_STEP, j as f64 * AXIS_GRID_STEP);
                prop_assert!(fit.residual_mse <= m);
            }
        }
    }
}
