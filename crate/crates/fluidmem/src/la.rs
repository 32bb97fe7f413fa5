//! Small fixed-size vector/tensor helpers.
//!
//! All geometry lives in `[f64; 3]`, padded with zeros when the spatial
//! dimension is 2. This keeps the d=2 and d=3 code paths identical.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO_VEC: Vec3 = [0.0; 3];
pub const ZERO_MAT: Mat3 = [[0.0; 3]; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn axpy(s: f64, a: Vec3, b: Vec3) -> Vec3 {
    [s * a[0] + b[0], s * a[1] + b[1], s * a[2] + b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(1.0 / n, a)
}

/// Rotate a vector in the xy-plane by +90 degrees: (x, y) -> (-y, x).
///
/// Maps the tangent of an oriented curve onto its normal; a closed curve
/// stored clockwise gets outward normals (the segment (0,0) -> (1,0) has
/// normal (0,1)).
#[inline]
pub fn curve_normal_dir(a: Vec3) -> Vec3 {
    [-a[1], a[0], 0.0]
}

#[inline]
pub fn outer(a: Vec3, b: Vec3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

#[inline]
pub fn mat_add(a: Mat3, b: Mat3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i][j] + b[i][j];
        }
    }
    m
}

#[inline]
pub fn mat_scale(s: f64, a: Mat3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = s * a[i][j];
        }
    }
    m
}

#[inline]
pub fn mat_vec(a: Mat3, x: Vec3) -> Vec3 {
    [dot(a[0], x), dot(a[1], x), dot(a[2], x)]
}

/// x^T A, i.e. A^T x.
#[inline]
pub fn vec_mat(x: Vec3, a: Mat3) -> Vec3 {
    let mut r = ZERO_VEC;
    for j in 0..3 {
        r[j] = a[0][j] * x[0] + a[1][j] * x[1] + a[2][j] * x[2];
    }
    r
}

#[inline]
pub fn transpose(a: Mat3) -> Mat3 {
    let mut m = ZERO_MAT;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

/// Frobenius inner product A : B.
#[inline]
pub fn mat_ddot(a: Mat3, b: Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

#[inline]
pub fn mat_frob2(a: Mat3) -> f64 {
    mat_ddot(a, a)
}

/// Solve a small dense system in place by partial-pivoted Gaussian
/// elimination. `a` is row-major n x n, `b` the right-hand side.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let inv = 1.0 / a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for j in col + 1..n {
            s -= a[col * n + j] * b[j];
        }
        b[col] = s / a[col * n + col];
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_and_rot() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(cross(e1, e2), [0.0, 0.0, 1.0]);
        // tangent +x maps to normal +y
        assert_eq!(curve_normal_dir(e1), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn dense_solve_roundtrip() {
        let a0 = [4.0, 1.0, 2.0, 1.0, 5.0, 1.0, 2.0, 1.0, 6.0];
        let x_true = [1.0, -2.0, 3.0];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a0[i * 3 + j] * x_true[j];
            }
        }
        let mut a = a0;
        solve_dense(&mut a, &mut b, 3).unwrap();
        for i in 0..3 {
            assert!((b[i] - x_true[i]).abs() < 1e-13);
        }
    }
}
