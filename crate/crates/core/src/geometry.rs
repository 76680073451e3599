//! Rotations and rigid transforms.
//!
//! Vectors are `(x, y, z)` column vectors and rotations act actively:
//! `p' = R p`. Euler angles compose as `R3(γ) R2(β) R1(α)` with `R1`, `R2`,
//! `R3` the right-handed rotations about the fixed x, y and z axes.

use std::f64::consts::PI;

pub use nalgebra::Matrix3;
use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::DensityVolume;

pub type Vec3 = [f64; 3];

/// Unit quaternion `(w, x, y, z)`; `q` and `-q` are the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = self.normalized();
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Recovers one of the two quaternions for `r` (Shepperd's method).
    pub fn from_matrix(r: &RotationMatrix) -> Self {
        let m = &r.0;
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Self::new(0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new((m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s)
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s)
        };
        q.normalized()
    }
}

/// Shoemake's uniform SO(3) sample from three uniforms in `[0, 1)`.
pub fn shoemake_from_uniforms(u1: f64, u2: f64, u3: f64) -> Quaternion {
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    // (x, y, z, w) = (a sin 2πu2, a cos 2πu2, b sin 2πu3, b cos 2πu3)
    Quaternion::new(b * c3, a * s2, a * c2, b * s3)
}

/// Draws a uniformly distributed rotation.
pub fn shoemake_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    shoemake_from_uniforms(u1, u2, u3)
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and orientation within 1e-9.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = Self(m);
        let (ortho, det) = r.orthonormality_error();
        if ortho > 1e-9 || det > 1e-9 {
            return Err(Error::Degenerate(format!(
                "not a rotation: |RᵀR - I|max = {ortho:e}, |det - 1| = {det:e}"
            )));
        }
        Ok(r)
    }

    pub fn about_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let r = self.0 * Vector3::from(v);
        [r[0], r[1], r[2]]
    }

    /// `(max |RᵀR − I|, |det R − 1|)`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = self.0.transpose() * self.0 - Matrix3::identity();
        (e.abs().max(), (self.0.determinant() - 1.0).abs())
    }
}

/// `(α, β, γ)` in radians, each in `[−π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha: wrap_angle(alpha),
            beta: wrap_angle(beta),
            gamma: wrap_angle(gamma),
        }
    }
}

pub fn euler_to_matrix(e: EulerAngles) -> RotationMatrix {
    RotationMatrix::about_z(e.gamma)
        .mul(&RotationMatrix::about_y(e.beta))
        .mul(&RotationMatrix::about_x(e.alpha))
}

/// Inverse of [`euler_to_matrix`] on the `β ∈ [−π/2, π/2]` branch; at
/// gimbal lock (`|cos β| < 1e-9`) `γ` is set to zero.
pub fn matrix_to_euler(r: &RotationMatrix) -> EulerAngles {
    let m = &r.0;
    let sb = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    if beta.cos().abs() < 1e-9 {
        let alpha = (-m[(1, 2)]).atan2(m[(1, 1)]);
        return EulerAngles::new(alpha, beta, 0.0);
    }
    let alpha = m[(2, 1)].atan2(m[(2, 2)]);
    let gamma = m[(1, 0)].atan2(m[(0, 0)]);
    EulerAngles::new(alpha, beta, gamma)
}

/// Two free 3-vectors decoded by Gram-Schmidt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixVec {
    pub nu1: Vec3,
    pub nu2: Vec3,
}

pub fn gso_to_matrix(v: SixVec) -> Result<RotationMatrix> {
    let n1 = norm(v.nu1);
    if n1 <= 1e-9 {
        return Err(Error::Degenerate(format!("first vector has norm {n1:e}")));
    }
    let n2 = norm(v.nu2);
    let cos = dot(v.nu1, v.nu2) / (n1 * n2.max(f64::MIN_POSITIVE));
    if n2 <= 1e-9 || cos.abs().min(1.0).acos().min(PI - cos.abs().min(1.0).acos()) <= 1e-6 {
        return Err(Error::Degenerate("second vector is (near-)parallel to the first".into()));
    }
    let v1 = scale(v.nu1, 1.0 / n1);
    let perp = sub(v.nu2, scale(v1, dot(v.nu2, v1)));
    let v2 = scale(perp, 1.0 / norm(perp));
    let v3 = cross(v1, v2);
    Ok(RotationMatrix(Matrix3::from_columns(&[
        Vector3::from(v1),
        Vector3::from(v2),
        Vector3::from(v3),
    ])))
}

/// Unconstrained 3×3 matrix decoded by SVD projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NineMat(pub Matrix3<f64>);

/// Closest rotation in Frobenius norm: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn svd_to_matrix(m: &NineMat) -> Result<RotationMatrix> {
    let svd = m.0.svd(true, true);
    let smin = svd.singular_values.min();
    if smin <= 1e-9 {
        return Err(Error::Degenerate(format!(
            "smallest singular value {smin:e}; projection is not unique"
        )));
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    // nalgebra sorts singular values in decreasing order, so the last column
    // pairs with the smallest one.
    let d = (u * vt).determinant().signum();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Ok(RotationMatrix(u * s * vt))
}

/// Geodesic angle between two rotations in degrees, within `[0, 180]`.
pub fn rotation_error(r_est: &RotationMatrix, r_gt: &RotationMatrix) -> f64 {
    // atan2 form of arccos((tr − 1) / 2); stays accurate near 0°
    let m = r_est.0.transpose() * r_gt.0;
    let skew = [m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]];
    norm(skew).atan2(m.trace() - 1.0).to_degrees()
}

/// Euclidean distance between two translations.
pub fn translation_error(t_est: Vec3, t_gt: Vec3) -> f64 {
    norm(sub(t_est, t_gt))
}

/// `x ↦ R (x − c) + c + t` about the volume center `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: t,
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul(&first.rotation),
            translation: add(self.rotation.apply(first.translation), self.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: scale(rt.apply(self.translation), -1.0),
        }
    }
}

/// Resamples `vol` under `t`: `out(x) = vol(R⁻¹(x − c − t) + c)`, trilinear,
/// zero outside.
pub fn apply_rigid(vol: &DensityVolume, t: &RigidTransform) -> DensityVolume {
    let c = vol.center_xyz();
    let rinv = t.rotation.transpose();
    let [nd, nh, nw] = vol.dims();
    let mut out = DensityVolume::zeros(vol.dims(), vol.voxel_size);
    out.origin = vol.origin;
    let data = out.data_mut();
    let mut i = 0;
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let rel = [
                    w as f64 - c[0] - t.translation[0],
                    h as f64 - c[1] - t.translation[1],
                    d as f64 - c[2] - t.translation[2],
                ];
                let s = add(rinv.apply(rel), c);
                data[i] = vol.sample_trilinear(s[0], s[1], s[2]) as f32;
                i += 1;
            }
        }
    }
    out
}

/// The 24 rotations mapping the cube onto itself, as signed permutation
/// matrices.
pub fn octahedral_rotations() -> Vec<RotationMatrix> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(RotationMatrix(m));
            }
        }
    }
    out
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: &RotationMatrix, b: &RotationMatrix, tol: f64) -> bool {
        (a.0 - b.0).abs().max() < tol
    }

    #[test]
    fn euler_single_axis_cases() {
        assert!(close(&euler_to_matrix(EulerAngles::new(0.0, 0.0, 0.0)), &RotationMatrix::identity(), 1e-15));
        let r = euler_to_matrix(EulerAngles::new(0.0, PI / 2.0, 0.0));
        let x = r.apply([1.0, 0.0, 0.0]);
        assert!((x[0]).abs() < 1e-15 && (x[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn euler_ambiguity_example_maps_to_same_matrix() {
        let a = euler_to_matrix(EulerAngles::new(0.0, PI / 2.0, 0.0));
        let b = euler_to_matrix(EulerAngles::new(-PI / 2.0, PI / 2.0, -PI / 2.0));
        assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn gimbal_lock_sets_gamma_to_zero() {
        let r = euler_to_matrix(EulerAngles::new(0.3, PI / 2.0, -0.4));
        let e = matrix_to_euler(&r);
        assert_eq!(e.gamma, 0.0);
        assert!(close(&euler_to_matrix(e), &r, 1e-7));
    }

    #[test]
    fn euler_angles_wrap_into_half_open_range() {
        let e = EulerAngles::new(PI, 3.0 * PI, -PI);
        assert_eq!(e.alpha, -PI);
        assert!(e.beta >= -PI && e.beta < PI);
    }

    #[test]
    fn gso_examples() {
        let id = gso_to_matrix(SixVec { nu1: [1.0, 0.0, 0.0], nu2: [0.0, 1.0, 0.0] }).unwrap();
        assert!(close(&id, &RotationMatrix::identity(), 1e-15));
        let id = gso_to_matrix(SixVec { nu1: [2.0, 0.0, 0.0], nu2: [1.0, 1.0, 0.0] }).unwrap();
        assert!(close(&id, &RotationMatrix::identity(), 1e-15));
        assert!(gso_to_matrix(SixVec { nu1: [0.0; 3], nu2: [0.0, 1.0, 0.0] }).is_err());
        assert!(gso_to_matrix(SixVec { nu1: [1.0, 0.0, 0.0], nu2: [-3.0, 0.0, 0.0] }).is_err());
    }

    #[test]
    fn svd_examples() {
        let id = svd_to_matrix(&NineMat(Matrix3::identity())).unwrap();
        assert!(close(&id, &RotationMatrix::identity(), 1e-12));
        let r = euler_to_matrix(EulerAngles::new(0.4, -0.2, 1.1));
        let back = svd_to_matrix(&NineMat(r.0 * 2.0)).unwrap();
        assert!(close(&back, &r, 1e-12));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let proj = svd_to_matrix(&NineMat(reflect)).unwrap();
        assert!(proj.orthonormality_error().1 < 1e-12);
        assert!(svd_to_matrix(&NineMat(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0))).is_err());
    }

    #[test]
    fn svd_projection_is_frobenius_optimal() {
        // Monte-Carlo optimality oracle: no random rotation is closer to M.
        let mut rng = substream(11, 0);
        for _ in 0..20 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = svd_to_matrix(&NineMat(m)).unwrap();
            let best = (f.0 - m).norm();
            for _ in 0..1000 {
                let q = shoemake_quaternion(&mut rng).to_matrix();
                assert!(best <= (q.0 - m).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn rotation_error_examples() {
        let id = RotationMatrix::identity();
        assert_eq!(rotation_error(&id, &id), 0.0);
        let rz = RotationMatrix::about_z(PI / 2.0);
        assert!((rotation_error(&rz, &id) - 90.0).abs() < 1e-12);
        assert_eq!(translation_error([3.0, 4.0, 0.0], [0.0; 3]), 5.0);
        assert_eq!(translation_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn quaternion_matrix_conventions_agree() {
        let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], PI / 2.0);
        assert!(close(&q.to_matrix(), &RotationMatrix::about_z(PI / 2.0), 1e-15));
        let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 0.7);
        assert!(close(&q.to_matrix(), &RotationMatrix::about_x(0.7), 1e-15));
    }

    #[test]
    fn shoemake_plug_in() {
        let q = shoemake_from_uniforms(0.0, 0.0, 0.0);
        assert_eq!((q.x, q.y, q.z, q.w), (0.0, 1.0, 0.0, 0.0));
        assert_eq!(q.norm(), 1.0);
    }

    #[test]
    fn octahedral_group_has_24_distinct_rotations() {
        let g = octahedral_rotations();
        assert_eq!(g.len(), 24);
        for (i, a) in g.iter().enumerate() {
            assert!(a.orthonormality_error().1 < 1e-15);
            for b in &g[i + 1..] {
                assert!(!close(a, b, 0.5));
            }
        }
    }

    fn smooth_blob(n: usize) -> DensityVolume {
        let c = (n as f64 - 1.0) / 2.0;
        DensityVolume::from_fn([n, n, n], 1.0, |d, h, w| {
            let r2 = (d as f64 - c - 1.0).powi(2) + (h as f64 - c + 0.5).powi(2) * 0.7 + (w as f64 - c).powi(2) * 1.3;
            (-r2 / 18.0).exp() as f32
        })
    }

    #[test]
    fn apply_rigid_identity_and_integer_translation() {
        let v = smooth_blob(12);
        let same = apply_rigid(&v, &RigidTransform::identity());
        assert_eq!(same.data(), v.data());
        let moved = apply_rigid(&v, &RigidTransform::translation([2.0, -1.0, 3.0]));
        for d in 3..12 {
            for h in 0..11 {
                for w in 2..12 {
                    assert_eq!(moved.get(d, h, w), v.get(d - 3, h + 1, w - 2));
                }
            }
        }
    }

    #[test]
    fn composed_transforms_match_sequential_resampling() {
        // Composed-transform oracle: the two-step error stays within twice
        // the single-step interpolation error, measured against exact
        // analytic resampling of the blob.
        let n = 24;
        let c = (n as f64 - 1.0) / 2.0;
        let f = |x: f64, y: f64, z: f64| (-((x - c).powi(2) + (y - c).powi(2) + (z - c).powi(2)) / 18.0).exp();
        let v = DensityVolume::from_fn([n, n, n], 1.0, |d, h, w| f(w as f64, h as f64, d as f64) as f32);
        let t1 = RigidTransform {
            rotation: euler_to_matrix(EulerAngles::new(0.3, 0.2, -0.5)),
            translation: [0.7, -0.4, 0.3],
        };
        let t2 = RigidTransform {
            rotation: euler_to_matrix(EulerAngles::new(-0.6, 0.1, 0.4)),
            translation: [-0.2, 0.5, 0.1],
        };
        let exact = |t: &RigidTransform| {
            let inv = t.inverse();
            DensityVolume::from_fn([n, n, n], 1.0, |d, h, w| {
                let p = add(inv.rotation.apply(sub([w as f64, h as f64, d as f64], [c; 3])), add([c; 3], inv.translation));
                f(p[0], p[1], p[2]) as f32
            })
        };
        let err = |a: &DensityVolume, b: &DensityVolume| {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
        };
        let composed = t2.compose(&t1);
        let single = err(&apply_rigid(&v, &composed), &exact(&composed));
        let twice = err(&apply_rigid(&apply_rigid(&v, &t1), &t2), &exact(&composed));
        let direct = err(&apply_rigid(&apply_rigid(&v, &t1), &t2), &apply_rigid(&v, &composed));
        assert!(single > 0.0);
        assert!(direct <= 2.0 * single + twice, "direct {direct} single {single} twice {twice}");
        assert!(twice <= 3.0 * single, "twice {twice} single {single}");
    }

    proptest! {
        #[test]
        fn decoders_land_in_so3(v in prop::array::uniform9(-1.0f64..1.0)) {
            let m = Matrix3::from_row_slice(&v);
            if let Ok(r) = svd_to_matrix(&NineMat(m)) {
                let (o, d) = r.orthonormality_error();
                prop_assert!(o < 1e-9 && d < 1e-9);
                let again = svd_to_matrix(&NineMat(r.0)).unwrap();
                prop_assert!((again.0 - r.0).abs().max() < 1e-9);
            }
            let six = SixVec { nu1: [v[0], v[1], v[2]], nu2: [v[3], v[4], v[5]] };
            if let Ok(r) = gso_to_matrix(six) {
                let (o, d) = r.orthonormality_error();
                prop_assert!(o < 1e-9 && d < 1e-9);
            }
        }

        #[test]
        fn euler_round_trip_at_matrix_level(a in -PI..PI, b in -PI..PI, g in -PI..PI) {
            let r = euler_to_matrix(EulerAngles::new(a, b, g));
            let back = euler_to_matrix(matrix_to_euler(&r));
            prop_assert!((r.0 - back.0).abs().max() < 1e-9);
        }

        #[test]
        fn quaternion_double_cover_round_trip(u1 in 0.0f64..1.0, u2 in 0.0f64..1.0, u3 in 0.0f64..1.0) {
            let q = shoemake_from_uniforms(u1, u2, u3);
            let p = Quaternion::from_matrix(&q.to_matrix());
            let dm = ((q.w - p.w).powi(2) + (q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2)).sqrt();
            let dp = ((q.w + p.w).powi(2) + (q.x + p.x).powi(2) + (q.y + p.y).powi(2) + (q.z + p.z).powi(2)).sqrt();
            prop_assert!(dm.min(dp) < 1e-9);
        }

        #[test]
        fn rotation_error_is_symmetric_and_recovers_angles(
            u in prop::array::uniform3(0.0f64..1.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            theta in 0.01f64..179.99,
        ) {
            prop_assume!(norm(axis) > 1e-3);
            let gt = shoemake_from_uniforms(u[0], u[1], u[2]).to_matrix();
            let est = Quaternion::from_axis_angle(axis, theta.to_radians()).to_matrix().mul(&gt);
            prop_assert!((rotation_error(&est, &gt) - theta).abs() < 1e-6);
            prop_assert!((rotation_error(&est, &gt) - rotation_error(&gt, &est)).abs() < 1e-12);
            prop_assert!(rotation_error(&gt, &gt) < 1e-6);
        }

        #[test]
        fn translation_error_matches_sum_of_squares(a in prop::array::uniform3(-100.0f64..100.0), b in prop::array::uniform3(-100.0f64..100.0)) {
            let oracle = ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt();
            prop_assert!((translation_error(a, b) - oracle).abs() < 1e-12);
        }
    }
}
