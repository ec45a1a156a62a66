//! Relative attributes `φ(a_v, a_v')` between ordered slot pairs.
//!
//! Layout of the 15-dim edge vector: nine pairwise scale differences
//! (`s_v[i] − s_v'[j]` at index `3i + j`), the Euler angles of `R_vᵀ R_v'`,
//! and `R_vᵀ (t_v' − t_v)`.

use crate::real::Real;
use crate::rotation::{
    euler_extraction_jacobian, euler_from_rotation_unchecked, euler_to_rotation, euler_to_rotation_derivs,
    mat_tmul, mat_tvec, near_gimbal_lock, Mat3,
};
use crate::scene::{ObjectAttributes, SceneLayout, ATTR_DIM, ROTATION, SIZE, TRANSLATION};

pub const EDGE_DIM: usize = 15;
pub const E_SCALE: usize = 0;
pub const E_ROTATION: usize = 9;
pub const E_TRANSLATION: usize = 12;

/// Margin from ±π/2 pitch below which the analytic angle Jacobian is not used.
pub const JACOBIAN_SINGULAR_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RelativeAttributes<T> {
    pub scale_diffs: [T; 9],
    pub rel_rotation: [T; 3],
    pub rel_translation: [T; 3],
}

impl<T: Real> RelativeAttributes<T> {
    pub fn to_array(&self) -> [T; EDGE_DIM] {
        let mut out = [T::zero(); EDGE_DIM];
        out[..9].copy_from_slice(&self.scale_diffs);
        out[E_ROTATION..E_ROTATION + 3].copy_from_slice(&self.rel_rotation);
        out[E_TRANSLATION..].copy_from_slice(&self.rel_translation);
        out
    }

    pub fn from_array(a: &[T; EDGE_DIM]) -> Self {
        let mut s = [T::zero(); 9];
        s.copy_from_slice(&a[..9]);
        Self {
            scale_diffs: s,
            rel_rotation: [a[9], a[10], a[11]],
            rel_translation: [a[12], a[13], a[14]],
        }
    }
}

/// Rotation matrix and its angle derivatives for one object, reused across edges.
#[derive(Clone, Copy, Debug)]
pub struct PoseCache<T> {
    pub rot: Mat3<T>,
    pub d_rot: [Mat3<T>; 3],
}

impl<T: Real> PoseCache<T> {
    pub fn new(a: &ObjectAttributes<T>) -> Self {
        Self {
            rot: euler_to_rotation(&a.rotation),
            d_rot: euler_to_rotation_derivs(&a.rotation),
        }
    }
}

fn phi_from_rot<T: Real>(a: &ObjectAttributes<T>, ra: &Mat3<T>, b: &ObjectAttributes<T>, rb: &Mat3<T>) -> RelativeAttributes<T> {
    let mut s = [T::zero(); 9];
    for i in 0..3 {
        for j in 0..3 {
            s[3 * i + j] = a.size[i] - b.size[j];
        }
    }
    let re = mat_tmul(ra, rb);
    let dt = [
        b.translation[0] - a.translation[0],
        b.translation[1] - a.translation[1],
        b.translation[2] - a.translation[2],
    ];
    RelativeAttributes {
        scale_diffs: s,
        rel_rotation: euler_from_rotation_unchecked(&re),
        rel_translation: mat_tvec(ra, &dt),
    }
}

/// Relative attributes of `b` seen from `a`.
pub fn phi<T: Real>(a: &ObjectAttributes<T>, b: &ObjectAttributes<T>) -> RelativeAttributes<T> {
    phi_from_rot(a, &euler_to_rotation(&a.rotation), b, &euler_to_rotation(&b.rotation))
}

/// `∂φ/∂(a_v, a_v')` as a 15 × 24 matrix; columns 0..12 belong to `a_v`.
#[derive(Clone, Debug)]
pub struct PhiJacobian<T> {
    pub rows: [[T; 2 * ATTR_DIM]; EDGE_DIM],
    /// Set when the relative pose was near gimbal lock and finite differences were used.
    pub used_finite_differences: bool,
}

pub fn phi_jacobian<T: Real>(a: &ObjectAttributes<T>, b: &ObjectAttributes<T>) -> PhiJacobian<T> {
    phi_and_jacobian(a, &PoseCache::new(a), b, &PoseCache::new(b)).1
}

/// φ and its Jacobian from precomputed pose data.
pub fn phi_and_jacobian<T: Real>(
    a: &ObjectAttributes<T>,
    ca: &PoseCache<T>,
    b: &ObjectAttributes<T>,
    cb: &PoseCache<T>,
) -> (RelativeAttributes<T>, PhiJacobian<T>) {
    let value = phi_from_rot(a, &ca.rot, b, &cb.rot);
    let re = mat_tmul(&ca.rot, &cb.rot);
    if near_gimbal_lock(&re, T::lit(JACOBIAN_SINGULAR_MARGIN)) {
        log::debug!("relative pose near gimbal lock; using finite-difference Jacobian");
        return (value, finite_difference_jacobian(a, b));
    }

    let mut rows = [[T::zero(); 2 * ATTR_DIM]; EDGE_DIM];
    let b0 = ATTR_DIM;

    for i in 0..3 {
        for j in 0..3 {
            rows[3 * i + j][SIZE + i] = T::one();
            rows[3 * i + j][b0 + SIZE + j] = -T::one();
        }
    }

    let dt = [
        b.translation[0] - a.translation[0],
        b.translation[1] - a.translation[1],
        b.translation[2] - a.translation[2],
    ];
    for m in 0..3 {
        for k in 0..3 {
            // t_e = R_aᵀ dt
            rows[E_TRANSLATION + m][b0 + TRANSLATION + k] = ca.rot[k][m];
            rows[E_TRANSLATION + m][TRANSLATION + k] = -ca.rot[k][m];
        }
    }
    for k in 0..3 {
        let dtk = mat_tvec(&ca.d_rot[k], &dt);
        for m in 0..3 {
            rows[E_TRANSLATION + m][ROTATION + k] = dtk[m];
        }
    }

    // r_e = euler(R_aᵀ R_b)
    let ej = euler_extraction_jacobian(&re);
    const USED: [(usize, usize); 5] = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)];
    let tm_entry = |x: &Mat3<T>, y: &Mat3<T>, i: usize, j: usize| x[0][i] * y[0][j] + x[1][i] * y[1][j] + x[2][i] * y[2][j];
    for k in 0..3 {
        for m in 0..3 {
            let mut da = T::zero();
            let mut db = T::zero();
            for &(i, j) in &USED {
                let e = ej[m][i][j];
                if e != T::zero() {
                    da += e * tm_entry(&ca.d_rot[k], &cb.rot, i, j);
                    db += e * tm_entry(&ca.rot, &cb.d_rot[k], i, j);
                }
            }
            rows[E_ROTATION + m][ROTATION + k] = da;
            rows[E_ROTATION + m][b0 + ROTATION + k] = db;
        }
    }

    (
        value,
        PhiJacobian {
            rows,
            used_finite_differences: false,
        },
    )
}

/// Step used by central differences at this precision.
pub fn fd_step<T: Real>() -> T {
    T::lit(1e-6).max(T::epsilon().cbrt())
}

/// Central-difference Jacobian of φ, with angle outputs differenced on the circle.
pub fn finite_difference_jacobian<T: Real>(a: &ObjectAttributes<T>, b: &ObjectAttributes<T>) -> PhiJacobian<T> {
    let mut rows = [[T::zero(); 2 * ATTR_DIM]; EDGE_DIM];
    let xa = a.to_array();
    let xb = b.to_array();
    let h = fd_step::<T>();
    for col in 0..2 * ATTR_DIM {
        let eval = |delta: T| {
            let (mut pa, mut pb) = (xa, xb);
            if col < ATTR_DIM {
                pa[col] += delta;
            } else {
                pb[col - ATTR_DIM] += delta;
            }
            phi(&ObjectAttributes::from_array(&pa), &ObjectAttributes::from_array(&pb)).to_array()
        };
        let (p, m) = (eval(h), eval(-h));
        for r in 0..EDGE_DIM {
            let mut d = p[r] - m[r];
            if (E_ROTATION..E_ROTATION + 3).contains(&r) {
                d = crate::real::wrap_angle(d);
            }
            rows[r][col] = d / (h + h);
        }
    }
    PhiJacobian {
        rows,
        used_finite_differences: true,
    }
}

/// Dense `(n × n × 15)` tensor of ordered-pair relative attributes; zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeTensor<T> {
    n: usize,
    data: Vec<[T; EDGE_DIM]>,
}

impl<T: Real> RelativeTensor<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![[T::zero(); EDGE_DIM]; n * n],
        }
    }

    pub fn from_flat(n: usize, flat: &[T]) -> Option<Self> {
        if flat.len() != n * n * EDGE_DIM {
            return None;
        }
        let data = flat
            .chunks_exact(EDGE_DIM)
            .map(|c| {
                let mut e = [T::zero(); EDGE_DIM];
                e.copy_from_slice(c);
                e
            })
            .collect();
        Some(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.n, EDGE_DIM]
    }

    pub fn get(&self, v: usize, w: usize) -> &[T; EDGE_DIM] {
        &self.data[v * self.n + w]
    }

    pub fn set(&mut self, v: usize, w: usize, e: [T; EDGE_DIM]) {
        self.data[v * self.n + w] = e;
    }

    /// Row-major flattening.
    pub fn flat(&self) -> Vec<T> {
        self.data.iter().flat_map(|e| e.iter().copied()).collect()
    }

    pub fn cast<U: Real>(&self) -> RelativeTensor<U> {
        RelativeTensor {
            n: self.n,
            data: self.data.iter().map(|e| e.map(|x| U::from(x).expect("castable scalar"))).collect(),
        }
    }
}

/// φ over every ordered slot pair, regardless of indicators.
pub fn build_relative_tensor<T: Real>(scene: &SceneLayout<T>) -> RelativeTensor<T> {
    let n = scene.len();
    let rots: Vec<Mat3<T>> = scene.slots.iter().map(|s| euler_to_rotation(&s.attrs.rotation)).collect();
    let mut out = RelativeTensor::zeros(n);
    for v in 0..n {
        for w in 0..n {
            if v != w {
                let e = phi_from_rot(&scene.slots[v].attrs, &rots[v], &scene.slots[w].attrs, &rots[w]);
                out.set(v, w, e.to_array());
            }
        }
    }
    out
}
