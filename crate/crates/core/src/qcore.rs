//! Finite-dimensional qubit primitives.
//!
//! Two-qubit operators act on `memory ⊗ system`; the row/column index of a
//! 4×4 matrix is `2·m + s`. Bloch vectors and Pauli-basis matrices use the
//! order `(σx, σy, σz)`.

use nalgebra::{Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Global tolerance for validity checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Probabilities below this are treated as impossible outcomes.
pub const PROBABILITY_FLOOR: f64 = 1e-14;

const UNITARITY_TOLERANCE: f64 = 1e-10;

pub(crate) const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity2() -> Mat2 {
    Mat2::identity()
}

/// Pauli matrix `σ_j` for `j ∈ {0, 1, 2}` (x, y, z).
pub fn pauli(j: usize) -> Mat2 {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match j {
        0 => Mat2::new(z, o, o, z),
        1 => Mat2::new(z, -i, i, z),
        2 => Mat2::new(o, z, z, -o),
        _ => panic!("pauli index {j} out of range"),
    }
}

/// `σ_0 = I` followed by the three Pauli matrices.
fn pauli_basis(mu: usize) -> Mat2 {
    if mu == 0 {
        identity2()
    } else {
        pauli(mu - 1)
    }
}

pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

fn trace2(m: &Mat2) -> C64 {
    m[(0, 0)] + m[(1, 1)]
}

pub fn bloch_to_density(r: &Vector3<f64>) -> Mat2 {
    let half = c(0.5, 0.0);
    let mut rho = identity2() * half;
    for j in 0..3 {
        rho += pauli(j) * c(0.5 * r[j], 0.0);
    }
    rho
}

/// Pauli coefficients `r_j = Re Tr(ρ σ_j)` of a trace-one operator.
pub fn density_to_bloch(rho: &Mat2) -> Vector3<f64> {
    Vector3::from_fn(|j, _| trace2(&(rho * pauli(j))).re)
}

/// Largest entrywise deviation of `m · m†` from the identity.
pub fn unitarity_deviation4(m: &Mat4) -> f64 {
    (m * m.adjoint() - Mat4::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unitarity_deviation2(m: &Mat2) -> f64 {
    (m * m.adjoint() - Mat2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Density operator of one qubit, stored as its Bloch vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    bloch: Vector3<f64>,
}

impl QubitState {
    /// Accepts any vector; physicality is checked separately.
    pub fn from_bloch(bloch: Vector3<f64>) -> Self {
        Self { bloch }
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::from_bloch(Vector3::new(x, y, z))
    }

    pub fn maximally_mixed() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_density(rho: &Mat2) -> Self {
        Self::from_bloch(density_to_bloch(rho))
    }

    pub fn bloch(&self) -> Vector3<f64> {
        self.bloch
    }

    pub fn density(&self) -> Mat2 {
        bloch_to_density(&self.bloch)
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.bloch.norm() <= 1.0 + tol
    }

    pub fn trace_distance(&self, other: &QubitState) -> f64 {
        0.5 * (self.bloch - other.bloch).norm()
    }

    pub fn conjugated(&self, v: &Mat2) -> Self {
        Self::from_density(&(v * self.density() * v.adjoint()))
    }
}

/// 4×4 unitary acting on `memory ⊗ system`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitUnitary {
    matrix: Mat4,
}

impl TwoQubitUnitary {
    pub fn new(matrix: Mat4) -> Result<Self> {
        let deviation = unitarity_deviation4(&matrix);
        if deviation > UNITARITY_TOLERANCE {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(Self { matrix })
    }

    /// Skips the unitarity check. Callers guarantee the argument is unitary.
    pub(crate) fn from_matrix_unchecked(matrix: Mat4) -> Self {
        Self { matrix }
    }

    pub fn identity() -> Self {
        Self::from_matrix_unchecked(Mat4::identity())
    }

    pub fn swap() -> Self {
        let mut m = Mat4::zeros();
        for a in 0..2 {
            for b in 0..2 {
                m[(2 * a + b, 2 * b + a)] = c(1.0, 0.0);
            }
        }
        Self::from_matrix_unchecked(m)
    }

    /// `|0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ target` with the memory as control.
    pub fn memory_controlled(target: &Mat2) -> Self {
        let p0 = Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let p1 = Mat2::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0));
        Self::from_matrix_unchecked(kron(&p0, &identity2()) + kron(&p1, target))
    }

    pub fn controlled_not() -> Self {
        Self::memory_controlled(&pauli(0))
    }

    pub fn controlled_z() -> Self {
        Self::memory_controlled(&pauli(2))
    }

    pub fn local(memory: &Mat2, system: &Mat2) -> Self {
        Self::from_matrix_unchecked(kron(memory, system))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self::from_matrix_unchecked(self.matrix.adjoint())
    }

    pub fn then(&self, next: &TwoQubitUnitary) -> Self {
        Self::from_matrix_unchecked(next.matrix * self.matrix)
    }

    /// `(v ⊗ I) U (v† ⊗ I)`: the memory-side gauge action.
    pub fn memory_conjugated(&self, v: &Mat2) -> Self {
        let left = kron(v, &identity2());
        Self::from_matrix_unchecked(left * self.matrix * left.adjoint())
    }

    /// Interaction with the roles of memory and system exchanged.
    pub fn exchanged(&self) -> Self {
        let s = *Self::swap().matrix();
        Self::from_matrix_unchecked(s * self.matrix * s)
    }
}

/// A qubit POVM `{E_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    effects: Vec<Mat2>,
}

impl Povm {
    pub fn new(effects: Vec<Mat2>) -> Result<Self> {
        Self::with_tolerance(effects, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(effects: Vec<Mat2>, tol: f64) -> Result<Self> {
        if effects.is_empty() {
            return Err(Error::InvalidPovm("no effects".into()));
        }
        let mut total = Mat2::zeros();
        for (k, e) in effects.iter().enumerate() {
            let herm = (e - e.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if herm > tol {
                return Err(Error::InvalidPovm(format!("effect {k} is not Hermitian")));
            }
            let eig = SymmetricEigen::new(*e).eigenvalues;
            if eig.iter().any(|&l| l < -tol || l > 1.0 + tol) {
                return Err(Error::InvalidPovm(format!("effect {k} has eigenvalues outside [0, 1]: {:?}", eig.as_slice())));
            }
            total += e;
        }
        let dev = (total - Mat2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > UNITARITY_TOLERANCE.max(tol) {
            return Err(Error::InvalidPovm(format!("effects sum to identity only within {dev:.3e}")));
        }
        Ok(Self { effects })
    }

    /// Builds effects `E = ½(a·I + b⃗·σ⃗)` from `(a, b⃗)` rows.
    pub fn from_pauli_coefficients(rows: &[[f64; 4]]) -> Result<Self> {
        let effects = rows
            .iter()
            .map(|row| {
                let mut e = identity2() * c(0.5 * row[0], 0.0);
                for j in 0..3 {
                    e += pauli(j) * c(0.5 * row[j + 1], 0.0);
                }
                e
            })
            .collect();
        Self::new(effects)
    }

    /// Four-outcome tetrahedral (SIC) POVM, `E_k = ¼(I + n⃗_k·σ⃗)`.
    pub fn tetrahedral() -> Self {
        let s = 1.0 / 3f64.sqrt();
        let dirs = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
        let rows: Vec<[f64; 4]> = dirs.iter().map(|d| [0.5, 0.5 * d[0], 0.5 * d[1], 0.5 * d[2]]).collect();
        Self::from_pauli_coefficients(&rows).expect("tetrahedral POVM is valid")
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn effects(&self) -> &[Mat2] {
        &self.effects
    }

    pub fn effect(&self, k: usize) -> &Mat2 {
        &self.effects[k]
    }

    /// `(Tr E_k / 2, Tr(E_k σ⃗) / 2)` so that `Tr(E_k ρ) = a + b⃗·r⃗`.
    pub fn affine_coefficients(&self, k: usize) -> (f64, Vector3<f64>) {
        let e = &self.effects[k];
        let a = 0.5 * trace2(e).re;
        let b = Vector3::from_fn(|j, _| 0.5 * trace2(&(e * pauli(j))).re);
        (a, b)
    }

    pub fn probability(&self, k: usize, state: &QubitState) -> f64 {
        let (a, b) = self.affine_coefficients(k);
        a + b.dot(&state.bloch())
    }
}

/// Weighted list of qubit test states.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEnsemble {
    entries: Vec<(QubitState, f64)>,
}

impl TestEnsemble {
    pub fn new(entries: Vec<(QubitState, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidEnsemble("no test states".into()));
        }
        if let Some((i, _)) = entries.iter().enumerate().find(|(_, (_, q))| !(*q > 0.0 && *q <= 1.0)) {
            return Err(Error::InvalidEnsemble(format!("weight of state {i} is outside (0, 1]")));
        }
        if let Some((i, _)) = entries.iter().enumerate().find(|(_, (s, _))| !s.is_physical(DEFAULT_TOLERANCE)) {
            return Err(Error::InvalidEnsemble(format!("state {i} lies outside the Bloch ball")));
        }
        let total: f64 = entries.iter().map(|(_, q)| q).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!("weights sum to {total}")));
        }
        Ok(Self { entries })
    }

    /// The six Pauli eigenstates `+x, −x, +y, −y, +z, −z`, uniformly weighted.
    pub fn pauli6() -> Self {
        let mut entries = Vec::with_capacity(6);
        for j in 0..3 {
            for sign in [1.0, -1.0] {
                let mut r = Vector3::zeros();
                r[j] = sign;
                entries.push((QubitState::from_bloch(r), 1.0 / 6.0));
            }
        }
        Self::new(entries).expect("pauli6 ensemble is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(QubitState, f64)] {
        &self.entries
    }

    pub fn state(&self, x: usize) -> &QubitState {
        &self.entries[x].0
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.entries[x].1
    }

    pub fn average_state(&self) -> QubitState {
        QubitState::from_bloch(self.entries.iter().map(|(s, q)| s.bloch() * *q).sum())
    }

    /// Whether the Bloch vectors span ℝ³.
    pub fn spans_bloch_space(&self) -> bool {
        let mut gram = Matrix3::zeros();
        for (s, _) in &self.entries {
            gram += s.bloch() * s.bloch().transpose();
        }
        gram.singular_values().min() > 1e-9
    }

    pub fn is_unital_average(&self, tol: f64) -> bool {
        self.average_state().bloch().norm() <= tol
    }
}

/// Qubit channel in Bloch form, `r⃗ ↦ T·r⃗ + t⃗`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochAffineMap {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl BlochAffineMap {
    pub fn new(linear: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { linear, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn constant(target: &QubitState) -> Self {
        Self::new(Matrix3::zeros(), target.bloch())
    }

    /// Bloch form of a linear, trace-preserving operator map.
    pub fn from_operator_map(f: impl Fn(&Mat2) -> Mat2) -> Self {
        let ptm = pauli_transfer(f);
        Self::from_pauli_transfer(&ptm)
    }

    pub(crate) fn from_pauli_transfer(ptm: &Matrix4<f64>) -> Self {
        let linear = ptm.fixed_view::<3, 3>(1, 1).into_owned();
        let translation = ptm.fixed_view::<3, 1>(1, 0).into_owned();
        Self::new(linear, translation)
    }

    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.linear * r + self.translation
    }

    pub fn apply_state(&self, s: &QubitState) -> QubitState {
        QubitState::from_bloch(self.apply(&s.bloch()))
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &BlochAffineMap) -> Self {
        Self::new(other.linear * self.linear, other.linear * self.translation + other.translation)
    }

    /// Frobenius norm of the difference of the `[T | t]` blocks.
    pub fn distance(&self, other: &BlochAffineMap) -> f64 {
        ((self.linear - other.linear).norm_squared() + (self.translation - other.translation).norm_squared()).sqrt()
    }

    /// Choi matrix `Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)` (input ⊗ output).
    pub fn choi(&self) -> Mat4 {
        let mut choi = Mat4::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let mut unit = Mat2::zeros();
                unit[(i, j)] = c(1.0, 0.0);
                let out = self.apply_operator(&unit);
                for a in 0..2 {
                    for b in 0..2 {
                        choi[(2 * i + a, 2 * j + b)] = out[(a, b)];
                    }
                }
            }
        }
        choi
    }

    /// Smallest Choi eigenvalue; negative values flag an unphysical map.
    pub fn choi_min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.choi()).eigenvalues.min()
    }

    /// Linear extension of the map to arbitrary 2×2 operators.
    pub fn apply_operator(&self, x: &Mat2) -> Mat2 {
        let coeffs = Vector4::from_fn(|mu, _| trace2(&(pauli_basis(mu) * x)));
        let mut out = Mat2::zeros();
        // σ_0 component maps to I + t⃗·σ⃗; σ_k maps to (T e_k)·σ⃗.
        out += (identity2() + sum_pauli(&self.translation)) * (coeffs[0] * 0.5);
        for k in 0..3 {
            let col = self.linear.column(k).into_owned();
            out += sum_pauli(&col) * (coeffs[k + 1] * 0.5);
        }
        out
    }
}

fn sum_pauli(v: &Vector3<f64>) -> Mat2 {
    (0..3).fold(Mat2::zeros(), |acc, j| acc + pauli(j) * c(v[j], 0.0))
}

/// Pauli transfer matrix `P_μν = ½ Re Tr(σ_μ f(σ_ν))` with `σ_0 = I`.
pub fn pauli_transfer(f: impl Fn(&Mat2) -> Mat2) -> Matrix4<f64> {
    let mut ptm = Matrix4::zeros();
    for nu in 0..4 {
        let out = f(&pauli_basis(nu));
        for mu in 0..4 {
            ptm[(mu, nu)] = 0.5 * trace2(&(pauli_basis(mu) * out)).re;
        }
    }
    ptm
}

/// Which factor of `memory ⊗ system` to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Memory,
    System,
}

pub fn partial_trace_operator(joint: &Mat4, keep: Subsystem) -> Mat2 {
    let mut out = Mat2::zeros();
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..2 {
                out[(a, b)] += match keep {
                    Subsystem::System => joint[(2 * k + a, 2 * k + b)],
                    Subsystem::Memory => joint[(2 * a + k, 2 * b + k)],
                };
            }
        }
    }
    out
}

pub fn partial_trace(joint: &Mat4, keep: Subsystem) -> QubitState {
    QubitState::from_density(&partial_trace_operator(joint, keep))
}

/// Joint output `U (ξ ⊗ ρ) U†` before any trace.
pub fn apply_dilation(u: &TwoQubitUnitary, memory: &QubitState, system: &QubitState) -> Mat4 {
    dilate_operator(u, &memory.density(), &system.density())
}

fn dilate_operator(u: &TwoQubitUnitary, memory: &Mat2, system: &Mat2) -> Mat4 {
    u.matrix() * kron(memory, system) * u.matrix().adjoint()
}

/// Unnormalized conditional memory operator `Tr_S[(I ⊗ E) U (ξ ⊗ ρ) U†]`.
fn instrument_operator(u: &TwoQubitUnitary, memory: &Mat2, system: &Mat2, effect: &Mat2) -> Mat2 {
    let joint = kron(&identity2(), effect) * dilate_operator(u, memory, system);
    partial_trace_operator(&joint, Subsystem::Memory)
}

/// Probability of observing `effect` and the post-measurement memory state.
pub fn instrument_update(u: &TwoQubitUnitary, memory: &QubitState, input: &QubitState, effect: &Mat2) -> Result<(f64, QubitState)> {
    let out = instrument_operator(u, &memory.density(), &input.density(), effect);
    let prob = trace2(&out).re;
    if prob < PROBABILITY_FLOOR {
        return Err(Error::ZeroProbabilityBranch {
            step: 0,
            outcome: 0,
            probability: prob,
        });
    }
    Ok((prob, QubitState::from_density(&(out / c(prob, 0.0)))))
}

/// Average system channel `ρ ↦ Tr_M[U (ξ ⊗ ρ) U†]`.
pub fn channel_from_dilation(u: &TwoQubitUnitary, memory: &QubitState) -> BlochAffineMap {
    let xi = memory.density();
    BlochAffineMap::from_operator_map(|x| partial_trace_operator(&dilate_operator(u, &xi, x), Subsystem::System))
}

/// Memory channel `ξ ↦ Tr_S[U (ξ ⊗ ρ) U†]` for a fixed system input.
pub fn memory_channel(u: &TwoQubitUnitary, input: &QubitState) -> BlochAffineMap {
    let rho = input.density();
    BlochAffineMap::from_operator_map(|x| partial_trace_operator(&dilate_operator(u, x, &rho), Subsystem::Memory))
}

/// Pauli transfer matrices of the memory instrument, one per `(setting, outcome)`.
///
/// Acting on `(1, m⃗)` for memory `½(I + m⃗·σ⃗)`, entry 0 of the result is the
/// outcome probability and entries 1..4 are the unnormalized post-measurement
/// Bloch vector.
#[derive(Debug, Clone)]
pub struct InstrumentTable {
    transfers: Vec<Vec<Matrix4<f64>>>,
}

impl InstrumentTable {
    pub fn new(u: &TwoQubitUnitary, ensemble: &TestEnsemble, povm: &Povm) -> Self {
        let transfers = ensemble
            .entries()
            .iter()
            .map(|(state, _)| {
                let rho = state.density();
                povm.effects().iter().map(|e| pauli_transfer(|x| instrument_operator(u, x, &rho, e))).collect()
            })
            .collect();
        Self { transfers }
    }

    pub fn transfer(&self, setting: usize, outcome: usize) -> &Matrix4<f64> {
        &self.transfers[setting][outcome]
    }

    pub fn outcomes(&self) -> usize {
        self.transfers.first().map_or(0, Vec::len)
    }

    /// Outcome probability given memory Bloch vector `m`.
    pub fn probability(&self, setting: usize, outcome: usize, m: &Vector3<f64>) -> f64 {
        let p = &self.transfers[setting][outcome];
        p[(0, 0)] + p[(0, 1)] * m[0] + p[(0, 2)] * m[1] + p[(0, 3)] * m[2]
    }

    /// Post-measurement memory Bloch vector; `prob` must be the matching probability.
    pub fn update(&self, setting: usize, outcome: usize, m: &Vector3<f64>, prob: f64) -> Vector3<f64> {
        let p = &self.transfers[setting][outcome];
        let v = Vector4::new(1.0, m[0], m[1], m[2]);
        let out = p * v;
        Vector3::new(out[1], out[2], out[3]) / prob
    }
}
