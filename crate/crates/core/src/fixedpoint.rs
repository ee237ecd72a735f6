//! The induced memory channel and its fixed points.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qcore::{memory_channel, BlochAffineMap, QubitState, TestEnsemble, TwoQubitUnitary};

/// Default band `|σ| ≤ band` for counting singular values of `T − I` as zero.
pub const EIGENVALUE_BAND: f64 = 1e-7;

/// Memory channel `ξ ↦ Tr_S[U (ξ ⊗ ϱ̄) U†]` for the average test state `ϱ̄`.
pub fn memory_map(u: &TwoQubitUnitary, ensemble: &TestEnsemble) -> BlochAffineMap {
    memory_channel(u, &ensemble.average_state())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// Minimum-norm fixed point.
    pub fixed_point: QubitState,
    pub unique: bool,
    /// Dimension of the affine fixed set in Bloch coordinates.
    pub fixed_set_dim: usize,
    /// Eigenvalues of the Bloch matrix `T`.
    pub spectral_data: Vec<Complex64>,
}

/// Fixed-point analysis of `r ↦ T r + t` with the default band.
pub fn fixed_points(map: &BlochAffineMap) -> Result<FixedPointReport> {
    fixed_points_with_band(map, EIGENVALUE_BAND)
}

pub fn fixed_points_with_band(map: &BlochAffineMap, band: f64) -> Result<FixedPointReport> {
    let a = map.linear - Matrix3::identity();
    let svd = a.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let rhs = -map.translation;

    let mut solution = Vector3::zeros();
    let mut nullity = 0;
    for i in 0..3 {
        let s = svd.singular_values[i];
        if s <= band {
            nullity += 1;
        } else {
            let coeff = u.column(i).dot(&rhs) / s;
            solution += vt.row(i).transpose() * coeff;
        }
    }
    let residual = (a * solution - rhs).norm();
    if residual > band.max(1e-9) * 10.0 || solution.norm() > 1.0 + 1e-6 {
        return Err(Error::NoFixedPoint { residual });
    }
    let spectral_data = map.linear.complex_eigenvalues().iter().copied().collect();
    Ok(FixedPointReport {
        fixed_point: QubitState::from_bloch(solution),
        unique: nullity == 0,
        fixed_set_dim: nullity,
        spectral_data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iteration {
    pub state: QubitState,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration `r_{k+1} = T r_k + t` until successive iterates differ by
/// at most `tol`. Returns the last iterate with `converged = false` when
/// `max_iters` is exhausted.
pub fn iterate_to_fixed_point(map: &BlochAffineMap, start: &QubitState, tol: f64, max_iters: usize) -> Iteration {
    let mut r = start.bloch();
    for k in 0..max_iters {
        let next = map.apply(&r);
        let step = (next - r).norm();
        r = next;
        if step <= tol {
            return Iteration {
                state: QubitState::from_bloch(r),
                iterations: k + 1,
                converged: true,
            };
        }
    }
    Iteration {
        state: QubitState::from_bloch(r),
        iterations: max_iters,
        converged: false,
    }
}

/// Time average `(1/h) Σ_{j<h} 𝒞^j(ξ₀)` of the memory trajectory.
pub fn cesaro_average(map: &BlochAffineMap, start: &QubitState, horizon: usize) -> QubitState {
    let mut r = start.bloch();
    let mut sum = Vector3::zeros();
    for _ in 0..horizon.max(1) {
        sum += r;
        r = map.apply(&r);
    }
    QubitState::from_bloch(sum / horizon.max(1) as f64)
}
