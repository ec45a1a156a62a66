//! Euler-angle rotation math.
//!
//! Convention: intrinsic Z-Y-X. An angle vector `r = (roll, pitch, yaw)`
//! holds rotations about x, y and z, and maps to `R = Rz(yaw) Ry(pitch) Rx(roll)`.

use crate::error::{Error, Result};
use crate::real::Real;

pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

/// Pitch values within this distance of ±π/2 are treated as gimbal lock.
pub const GIMBAL_EPS: f64 = 1e-9;

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[j][i];
        }
    }
    out
}

/// `aᵀ b` without forming the transpose.
pub fn mat_tmul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[0][i] * b[0][j] + a[1][i] * b[1][j] + a[2][i] * b[2][j];
        }
    }
    out
}

pub fn mat_vec<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// `aᵀ v`.
pub fn mat_tvec<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
        a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
        a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
    ]
}

pub fn determinant<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn frobenius_distance<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut acc = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            let d = a[i][j] - b[i][j];
            acc += d * d;
        }
    }
    acc.sqrt()
}

fn rot_x<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, c, -s], [z, s, c]]
}

fn rot_y<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, z, s], [z, o, z], [-s, z, c]]
}

fn rot_z<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

fn d_rot_x<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[z, z, z], [z, -s, -c], [z, c, -s]]
}

fn d_rot_y<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[-s, z, c], [z, z, z], [-c, z, -s]]
}

fn d_rot_z<T: Real>(a: T) -> Mat3<T> {
    let (s, c) = a.sin_cos();
    let z = T::zero();
    [[-s, -c, z], [c, -s, z], [z, z, z]]
}

pub fn euler_to_rotation<T: Real>(r: &Vec3<T>) -> Mat3<T> {
    mat_mul(&rot_z(r[2]), &mat_mul(&rot_y(r[1]), &rot_x(r[0])))
}

/// `∂R/∂r_k` for k = roll, pitch, yaw.
pub fn euler_to_rotation_derivs<T: Real>(r: &Vec3<T>) -> [Mat3<T>; 3] {
    let (rx, ry, rz) = (rot_x(r[0]), rot_y(r[1]), rot_z(r[2]));
    [
        mat_mul(&rz, &mat_mul(&ry, &d_rot_x(r[0]))),
        mat_mul(&rz, &mat_mul(&d_rot_y(r[1]), &rx)),
        mat_mul(&d_rot_z(r[2]), &mat_mul(&ry, &rx)),
    ]
}

/// Rotation-matrix check: `‖RᵀR − I‖_F` and `|det R − 1|` within `tol`.
pub fn check_rotation<T: Real>(m: &Mat3<T>, tol: T) -> Result<()> {
    let ortho = frobenius_distance(&mat_tmul(m, m), &identity());
    let det = determinant(m);
    if !(ortho <= tol) || !((det - T::one()).abs() <= tol) {
        return Err(Error::NotOrthonormal(format!(
            "‖RᵀR−I‖={ortho}, det={det}"
        )));
    }
    Ok(())
}

/// Extracts Euler angles from a matrix assumed to be a rotation.
///
/// At gimbal lock roll is set to 0 and the remaining freedom goes to yaw.
pub fn euler_from_rotation_unchecked<T: Real>(m: &Mat3<T>) -> Vec3<T> {
    let cp = (m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt();
    let pitch = (-m[2][0]).atan2(cp);
    if cp < T::lit(GIMBAL_EPS) {
        let yaw = (-m[0][1]).atan2(m[1][1]);
        return [T::zero(), pitch, yaw];
    }
    let roll = m[2][1].atan2(m[2][2]);
    let yaw = m[1][0].atan2(m[0][0]);
    [roll, pitch, yaw]
}

/// Inverse of [`euler_to_rotation`]; rejects matrices that are not rotations.
pub fn rotation_to_euler<T: Real>(m: &Mat3<T>) -> Result<Vec3<T>> {
    check_rotation(m, T::ortho_tol())?;
    Ok(euler_from_rotation_unchecked(m))
}

/// True when the pitch of `m` is too close to ±π/2 for a stable angle Jacobian.
pub fn near_gimbal_lock<T: Real>(m: &Mat3<T>, margin: T) -> bool {
    let cp = (m[0][0] * m[0][0] + m[1][0] * m[1][0]).sqrt();
    // cos(π/2 − margin) = sin(margin)
    cp <= margin.sin()
}

/// Partial derivatives of the extracted angles with respect to each matrix
/// entry, `out[k][i][j] = ∂r_k / ∂m_ij`. Valid away from gimbal lock.
pub fn euler_extraction_jacobian<T: Real>(m: &Mat3<T>) -> [Mat3<T>; 3] {
    let mut out = [[[T::zero(); 3]; 3]; 3];
    // roll = atan2(m21, m22)
    let n = m[2][1] * m[2][1] + m[2][2] * m[2][2];
    out[0][2][1] = m[2][2] / n;
    out[0][2][2] = -m[2][1] / n;
    // pitch = atan2(−m20, sqrt(m00² + m10²))
    let q = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let cp = q.sqrt();
    let d = q + m[2][0] * m[2][0];
    out[1][2][0] = -cp / d;
    out[1][0][0] = m[2][0] * m[0][0] / (cp * d);
    out[1][1][0] = m[2][0] * m[1][0] / (cp * d);
    // yaw = atan2(m10, m00)
    out[2][1][0] = m[0][0] / q;
    out[2][0][0] = -m[1][0] / q;
    out
}

/// Geodesic angle between two rotations, in [0, π].
pub fn geodesic_angle<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let rel = mat_tmul(a, b);
    let tr = rel[0][0] + rel[1][1] + rel[2][2];
    let c = ((tr - T::one()) / T::lit(2.0)).max(-T::one()).min(T::one());
    c.acos()
}
