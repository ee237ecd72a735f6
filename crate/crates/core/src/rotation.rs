//! SU(2) ↔ SO(3) correspondence and proper-rotation factorizations.

use nalgebra::{Matrix3, Vector3};

use crate::qcore::{c, pauli, Mat2, C64};

/// Rotation `R` with `V σ_j V† = Σ_i R_ij σ_i`.
pub fn rotation_of_unitary(v: &Mat2) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| 0.5 * (pauli(i) * v * pauli(j) * v.adjoint()).trace().re)
}

/// `exp(−i θ/2 n̂·σ⃗)` for the rotation vector `θ n̂`.
pub fn unitary_from_rotation_vector(w: &Vector3<f64>) -> Mat2 {
    let theta = w.norm();
    let (s, co) = (0.5 * theta).sin_cos();
    let n = if theta > 0.0 { w / theta } else { Vector3::zeros() };
    let mut v = Mat2::identity() * c(co, 0.0);
    for j in 0..3 {
        v -= pauli(j) * c(0.0, s * n[j]);
    }
    v
}

/// Lift of a proper rotation to SU(2), phase-fixed so the first nonzero
/// entry of the first row is real and nonnegative.
pub fn unitary_from_rotation(r: &Matrix3<f64>) -> Mat2 {
    // Shepperd's method on the largest diagonal combination.
    let tr = r.trace();
    let (w, x, y, z);
    if tr >= r[(0, 0)] && tr >= r[(1, 1)] && tr >= r[(2, 2)] {
        let s = (1.0 + tr).max(0.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] >= r[(1, 1)] && r[(0, 0)] >= r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] >= r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).max(0.0).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    let (w, x, y, z) = (w / norm, x / norm, y / norm, z / norm);
    let v = Mat2::new(c(w, -z), c(-y, -x), c(y, -x), c(w, z));
    fix_phase(&v)
}

/// Multiplies by a global phase so the first entry of the first row with
/// modulus above 1e-12 becomes real and nonnegative.
pub fn fix_phase(v: &Mat2) -> Mat2 {
    let pivot = [v[(0, 0)], v[(0, 1)]].into_iter().find(|z| z.norm() > 1e-12).unwrap_or(C64::new(1.0, 0.0));
    v * (pivot.conj() / pivot.norm())
}

/// Singular value decomposition `m = left · diag(values) · right` with both
/// factors proper rotations and values sorted descending.
///
/// When `det m < 0` no such factorization exists with nonnegative values;
/// the smallest value is then returned negated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperSvd {
    pub left: Matrix3<f64>,
    pub values: Vector3<f64>,
    pub right: Matrix3<f64>,
}

pub fn proper_svd(m: &Matrix3<f64>) -> ProperSvd {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut left = Matrix3::zeros();
    let mut right = Matrix3::zeros();
    let mut values = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u.column(src).into_owned();
        let mut vrow = vt.row(src).into_owned();
        // Deterministic sign: first entry of the right vector above 1e-12 is positive.
        if let Some(first) = vrow.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                ucol = -ucol;
                vrow = -vrow;
            }
        }
        left.set_column(dst, &ucol);
        right.set_row(dst, &vrow);
        values[dst] = svd.singular_values[src];
    }

    let (dl, dr) = (left.determinant(), right.determinant());
    if dl < 0.0 && dr < 0.0 {
        left.set_column(2, &(-left.column(2)));
        right.set_row(2, &(-right.row(2)));
    } else if dl < 0.0 {
        left.set_column(2, &(-left.column(2)));
        values[2] = -values[2];
    } else if dr < 0.0 {
        right.set_row(2, &(-right.row(2)));
        values[2] = -values[2];
    }
    ProperSvd { left, values, right }
}

/// Orthogonal polar factor with determinant correction: the closest proper
/// rotation in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = proper_svd(m);
    svd.left * svd.right
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Rodrigues formula for `exp([w]×)`.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}
