//! Fixed-size 3×3 / 2×2 helpers used by projection and its backward pass.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];
pub type Mat2<T> = [[T; 2]; 2];

pub fn quat_to_mat<T: Real>(w: T, x: T, y: T, z: T) -> Mat3<T> {
    let one = T::one();
    let two = T::one() + T::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Partial derivatives of [`quat_to_mat`] with respect to (w, x, y, z).
pub fn quat_to_mat_grad<T: Real>(w: T, x: T, y: T, z: T) -> [Mat3<T>; 4] {
    let z0 = T::zero();
    let two = T::one() + T::one();
    let four = two + two;
    [
        [
            [z0, -two * z, two * y],
            [two * z, z0, -two * x],
            [-two * y, two * x, z0],
        ],
        [
            [z0, two * y, two * z],
            [two * y, -four * x, -two * w],
            [two * z, two * w, -four * x],
        ],
        [
            [-four * y, two * x, two * w],
            [two * x, z0, two * z],
            [-two * w, two * z, -four * y],
        ],
        [
            [-four * z, -two * w, two * x],
            [two * w, -four * z, two * y],
            [two * x, two * y, z0],
        ],
    ]
}

pub fn mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// A·Bᵀ
pub fn mul_abt<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1] + a[i][2] * b[j][2];
        }
    }
    out
}

/// A·diag(d)
pub fn mul_diag<T: Real>(a: &Mat3<T>, d: Vec3<T>) -> Mat3<T> {
    let mut out = *a;
    for row in out.iter_mut() {
        for (v, &s) in row.iter_mut().zip(&d) {
            *v *= s;
        }
    }
    out
}

pub fn mat_vec<T: Real>(a: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Aᵀ·v
pub fn mat_t_vec<T: Real>(a: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
        a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
        a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
    ]
}

pub fn frobenius_dot<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut acc = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            acc += a[i][j] * b[i][j];
        }
    }
    acc
}

pub fn det2<T: Real>(m: &Mat2<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}
