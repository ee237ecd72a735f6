//! Cartan (KAK) parametrization of two-qubit interactions.
//!
//! Interactions are written `U = (W₂ ⊗ V₂) D(α⃗) (W₁ ⊗ V₁)` with
//! `D(α⃗) = exp{(i/2) Σ_j α_j σ_j ⊗ σ_j}`. The memory-side gauge is fixed by
//! `W₁ = I`. The canonical chamber is `0 ≤ |α_z| ≤ α_y ≤ α_x ≤ π/2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::qcore::{c, identity2, kron, pauli, unitarity_deviation2, Mat2, Mat4, TwoQubitUnitary, C64};
use crate::rotation::{rotation_of_unitary, unitary_from_rotation_vector};

const CHAMBER_TOLERANCE: f64 = 1e-12;

/// Margin for regular instances: at least 0.1 and large enough that every
/// `sin α_i ≥ 0.1` (`asin 0.1`).
pub const REGULAR_MARGIN: f64 = 0.100_167_421_161_559_8;

/// Interaction content `D(α⃗)`.
pub fn d_matrix(alpha: &Vector3<f64>) -> TwoQubitUnitary {
    let mut d = Mat4::identity();
    for j in 0..3 {
        let (s, co) = (0.5 * alpha[j]).sin_cos();
        let sigma = pauli(j);
        d *= Mat4::identity() * c(co, 0.0) + kron(&sigma, &sigma) * c(0.0, s);
    }
    TwoQubitUnitary::from_matrix_unchecked(d)
}

/// Gauge-fixed Cartan parameters (`W₁ = I`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartanParams {
    pub w2: Mat2,
    pub v2: Mat2,
    pub alpha: Vector3<f64>,
    pub v1: Mat2,
}

impl CartanParams {
    pub fn new(w2: Mat2, v2: Mat2, alpha: Vector3<f64>, v1: Mat2) -> Result<Self> {
        for m in [&w2, &v2, &v1] {
            let deviation = unitarity_deviation2(m);
            if deviation > 1e-10 {
                return Err(Error::NotUnitary { deviation });
            }
        }
        Ok(Self { w2, v2, alpha, v1 })
    }

    /// Local-free interaction `D(α⃗)`.
    pub fn pure(alpha: Vector3<f64>) -> Self {
        Self {
            w2: identity2(),
            v2: identity2(),
            alpha,
            v1: identity2(),
        }
    }

    pub fn assemble(&self) -> TwoQubitUnitary {
        let post = kron(&self.w2, &self.v2);
        let pre = kron(&identity2(), &self.v1);
        TwoQubitUnitary::from_matrix_unchecked(post * d_matrix(&self.alpha).matrix() * pre)
    }

    pub fn is_canonical(&self, tol: f64) -> bool {
        in_chamber(&self.alpha, tol)
    }

    /// Haar-random locals and `α⃗` drawn uniformly from the chamber interior,
    /// shrunk by `margin` on every boundary; `|α_z| ≥ margin` as well.
    pub fn random_regular<R: Rng + ?Sized>(rng: &mut R, margin: f64) -> Self {
        let lo = margin;
        let hi = FRAC_PI_2 - margin;
        let mut a = [0.0; 3];
        for v in &mut a {
            *v = rng.random_range(lo..hi);
        }
        a.sort_by(|x, y| y.total_cmp(x));
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        Self {
            w2: random_su2(rng),
            v2: random_su2(rng),
            alpha: Vector3::new(a[0], a[1], sign * a[2]),
            v1: random_su2(rng),
        }
    }

    /// Haar-random locals with `α⃗` uniform over the whole chamber.
    pub fn random_canonical<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = Self::random_regular(rng, 0.0);
        let z = rng.random_range(-p.alpha[1]..=p.alpha[1]);
        p.alpha[2] = z;
        p
    }
}

pub fn in_chamber(alpha: &Vector3<f64>, tol: f64) -> bool {
    alpha[2].abs() <= alpha[1] + tol && alpha[1] <= alpha[0] + tol && alpha[0] <= FRAC_PI_2 + tol && alpha[1] >= -tol
}

/// Haar-random element of SU(2) (Shoemake's quaternion construction).
pub fn random_su2<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = [
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    ];
    quaternion_unitary(&q)
}

/// `q₀ I − i (q₁ σx + q₂ σy + q₃ σz)`.
fn quaternion_unitary(q: &[f64; 4]) -> Mat2 {
    let mut v = identity2() * c(q[0], 0.0);
    for j in 0..3 {
        v -= pauli(j) * c(0.0, q[j + 1]);
    }
    v
}

/// `U = phase · (post_m ⊗ post_s) D(α⃗) (pre_m ⊗ pre_s)` before gauge fixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KakForm {
    pub phase: C64,
    pub post: (Mat2, Mat2),
    pub alpha: Vector3<f64>,
    pub pre: (Mat2, Mat2),
}

impl KakForm {
    pub fn matrix(&self) -> Mat4 {
        kron(&self.post.0, &self.post.1) * d_matrix(&self.alpha).matrix() * kron(&self.pre.0, &self.pre.1) * self.phase
    }

    /// `α_j ↦ α_j + nπ`, using `D(α⃗ + π e⃗_j) = D(α⃗)·i σ_j⊗σ_j`.
    fn shift(&mut self, j: usize, n: i64) {
        if n == 0 {
            return;
        }
        self.alpha[j] += n as f64 * PI;
        if n.rem_euclid(2) == 1 {
            let s = pauli(j);
            self.pre = (s * self.pre.0, s * self.pre.1);
        }
        self.phase *= C64::new(0.0, -1.0).powi(n.rem_euclid(4) as i32);
    }

    /// Negates the two components other than `keep` via `σ_keep ⊗ I` conjugation.
    fn negate_pair(&mut self, keep: usize) {
        let s = pauli(keep);
        for j in 0..3 {
            if j != keep {
                self.alpha[j] = -self.alpha[j];
            }
        }
        self.post.0 *= s;
        self.pre.0 = s * self.pre.0;
    }

    /// Exchanges components `j` and `k` via a local Clifford `C ⊗ C`.
    fn swap_axes(&mut self, j: usize, k: usize) {
        let l = 3 - j - k;
        let mut axis = Vector3::zeros();
        if l == 1 {
            // x ↔ z: π rotation about (x + z)/√2.
            axis[0] = PI / 2f64.sqrt();
            axis[2] = PI / 2f64.sqrt();
        } else {
            axis[l] = FRAC_PI_2;
        }
        let cl = unitary_from_rotation_vector(&axis);
        let cd = cl.adjoint();
        self.alpha.swap_rows(j, k);
        self.post = (self.post.0 * cd, self.post.1 * cd);
        self.pre = (cl * self.pre.0, cl * self.pre.1);
    }

    /// Gauge-fixes the memory-side pre-local into the post-local.
    pub fn gauge_fixed(&self) -> KakDecomposition {
        let w1 = self.pre.0;
        KakDecomposition {
            params: CartanParams {
                w2: w1 * self.post.0,
                v2: self.post.1,
                alpha: self.alpha,
                v1: self.pre.1,
            },
            memory_gauge: w1,
            phase: self.phase,
        }
    }
}

/// Result of [`kak_decompose`]:
/// `U = phase · (W₁† ⊗ I) · assemble(params) · (W₁ ⊗ I)` with `W₁ = memory_gauge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KakDecomposition {
    pub params: CartanParams,
    pub memory_gauge: Mat2,
    pub phase: C64,
}

impl KakDecomposition {
    pub fn reconstruct(&self) -> Mat4 {
        let g = kron(&self.memory_gauge, &identity2());
        g.adjoint() * self.params.assemble().matrix() * g * self.phase
    }
}

/// Reflects a raw decomposition into the canonical chamber. The operator
/// `form.matrix()` is unchanged.
pub fn canonicalize(form: &KakForm) -> KakForm {
    let mut f = *form;
    for j in 0..3 {
        let n = (f.alpha[j] / PI).round() as i64;
        f.shift(j, -n);
        if f.alpha[j] <= -FRAC_PI_2 + CHAMBER_TOLERANCE {
            f.shift(j, 1);
        }
    }
    // |α| descending; three compare-exchange steps sort three entries.
    for (j, k) in [(0, 1), (1, 2), (0, 1)] {
        if f.alpha[j].abs() < f.alpha[k].abs() {
            f.swap_axes(j, k);
        }
    }
    match (f.alpha[0] < 0.0, f.alpha[1] < 0.0) {
        (true, true) => f.negate_pair(2),
        (true, false) => f.negate_pair(1),
        (false, true) => f.negate_pair(0),
        (false, false) => {}
    }
    // On the α_x = π/2 face, (π/2, α_y, α_z) ≡ (π/2, α_y, −α_z).
    if (f.alpha[0] - FRAC_PI_2).abs() <= CHAMBER_TOLERANCE && f.alpha[2] < 0.0 {
        f.shift(0, -1);
        f.negate_pair(1);
    }
    for a in f.alpha.iter_mut() {
        if *a == 0.0 {
            *a = 0.0;
        }
    }
    f
}

/// Magic (Bell) basis: local SU(2)⊗SU(2) becomes real SO(4) and `D(α⃗)` diagonal.
fn magic_basis() -> Mat4 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (o, z, i) = (c(s, 0.0), c(0.0, 0.0), c(0.0, s));
    Mat4::new(o, i, z, z, z, z, i, o, z, z, i, -o, o, -i, z, z)
}

/// Eigenvalues of `σ_j ⊗ σ_j` on each magic-basis vector, rows = j.
fn magic_signatures() -> [[f64; 4]; 3] {
    let b = magic_basis();
    let mut out = [[0.0; 4]; 3];
    for (j, row) in out.iter_mut().enumerate() {
        let d = b.adjoint() * kron(&pauli(j), &pauli(j)) * b;
        for (col, v) in row.iter_mut().enumerate() {
            *v = d[(col, col)].re;
        }
    }
    out
}

/// Splits `K = A ⊗ B` into its factors.
fn split_kron(k: &Mat4) -> (Mat2, Mat2) {
    let block = |i: usize, j: usize| Mat2::from_fn(|a, b| k[(2 * i + a, 2 * j + b)]);
    let (mut bi, mut bj, mut best) = (0, 0, -1.0);
    for i in 0..2 {
        for j in 0..2 {
            let n = block(i, j).norm();
            if n > best {
                (bi, bj, best) = (i, j, n);
            }
        }
    }
    let blk = block(bi, bj);
    let bmat = blk / blk.determinant().sqrt();
    let a = Mat2::from_fn(|i, j| (bmat.adjoint() * block(i, j)).trace() * 0.5);
    (a, bmat)
}

/// Simultaneous orthogonal diagonalization of the commuting real and
/// imaginary parts of a complex symmetric unitary matrix.
fn diagonalize_symmetric_unitary(m: &Mat4) -> Result<(Matrix4<f64>, Vector4<C64>)> {
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    let mut best_residual = f64::INFINITY;
    for (a, b) in [
        (1.0, 0.0),
        (0.8736, 0.4867),
        (0.3192, 0.9477),
        (-0.5514, 0.8342),
        (0.9871, -0.1603),
        (0.1234, -0.9924),
        (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    ] {
        let eig = SymmetricEigen::new(re * a + im * b);
        let p = eig.eigenvectors;
        let d = p.transpose().map(|x| c(x, 0.0)) * m * p.map(|x| c(x, 0.0));
        let mut off = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    off = off.max(d[(i, j)].norm());
                }
            }
        }
        if off < 1e-11 {
            let mut cols: Vec<(f64, Vector4<f64>, C64)> = (0..4).map(|i| (d[(i, i)].arg(), p.column(i).into_owned(), d[(i, i)])).collect();
            cols.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut p_sorted = Matrix4::zeros();
            let mut diag = Vector4::zeros();
            for (i, (_, mut v, z)) in cols.into_iter().enumerate() {
                if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                    if *first < 0.0 {
                        v = -v;
                    }
                }
                p_sorted.set_column(i, &v);
                diag[i] = z;
            }
            if p_sorted.determinant() < 0.0 {
                p_sorted.set_column(3, &(-p_sorted.column(3)));
            }
            return Ok((p_sorted, diag));
        }
        best_residual = best_residual.min(off);
    }
    Err(Error::stage("kak", "simultaneous diagonalization failed", best_residual))
}

/// Raw (non-canonical) magic-basis decomposition.
pub fn kak_raw(u: &TwoQubitUnitary) -> Result<KakForm> {
    let det = u.matrix().determinant();
    let g = det.powf(0.25);
    let u4 = u.matrix() / g;
    let b = magic_basis();
    let up = b.adjoint() * u4 * b;
    let m = up.transpose() * up;
    let (p, d) = diagonalize_symmetric_unitary(&m)?;

    let mut theta = Vector4::from_fn(|i, _| 0.5 * d[i].arg());
    let pc = p.map(|x| c(x, 0.0));
    let phases = |th: &Vector4<f64>| Matrix4::from_diagonal(&th.map(|t| C64::from_polar(1.0, -t)));
    let mut k1 = up * pc * phases(&theta);
    if k1.map(|z| z.re).determinant() < 0.0 {
        theta[0] += PI;
        k1 = up * pc * phases(&theta);
    }
    let imag = k1.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-7 {
        return Err(Error::stage("kak", "left factor is not real orthogonal", imag));
    }
    let k1 = k1.map(|z| c(z.re, 0.0));
    let k2 = pc.transpose();

    let post = split_kron(&(b * k1 * b.adjoint()));
    let pre = split_kron(&(b * k2 * b.adjoint()));

    // θ_col = Σ_j a_j λ_j(col) + φ; the signature matrix is ±1 Hadamard.
    let sig = magic_signatures();
    let lam = Matrix4::from_fn(|col, j| if j < 3 { sig[j][col] } else { 1.0 });
    let solved = lam.try_inverse().expect("magic signatures are invertible") * theta;
    let alpha = Vector3::new(2.0 * solved[0], 2.0 * solved[1], 2.0 * solved[2]);
    let phase = g * C64::from_polar(1.0, solved[3]);

    Ok(KakForm { phase, post, alpha, pre })
}

/// Full KAK decomposition into gauge-fixed canonical parameters.
pub fn kak_decompose(u: &TwoQubitUnitary) -> Result<KakDecomposition> {
    let deviation = crate::qcore::unitarity_deviation4(u.matrix());
    if deviation > 1e-10 {
        return Err(Error::NotUnitary { deviation });
    }
    let form = canonicalize(&kak_raw(u)?);
    let residual = (form.matrix() - u.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if residual > 1e-8 {
        return Err(Error::stage("kak", "reassembly does not reproduce the input", residual));
    }
    Ok(form.gauge_fixed())
}

/// Controlled-unitary form `e^{iβ} P₊ ⊗ V₊ + e^{−iβ} P₋ ⊗ V₋` with memory
/// projectors `P± = ½(I ± n̂·σ⃗)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlledUnitaryForm {
    pub axis: Vector3<f64>,
    pub beta: f64,
    pub v_plus: Mat2,
    pub v_minus: Mat2,
}

impl ControlledUnitaryForm {
    pub fn projectors(&self) -> (Mat2, Mat2) {
        let mut n = Mat2::zeros();
        for j in 0..3 {
            n += pauli(j) * c(self.axis[j], 0.0);
        }
        let half = c(0.5, 0.0);
        ((identity2() + n) * half, (identity2() - n) * half)
    }

    pub fn assemble(&self) -> Mat4 {
        let (pp, pm) = self.projectors();
        kron(&pp, &self.v_plus) * C64::from_polar(1.0, self.beta) + kron(&pm, &self.v_minus) * C64::from_polar(1.0, -self.beta)
    }

    /// Controlled form of params with `α_y = α_z = 0` and `W₂` a rotation
    /// about x; `None` otherwise.
    pub fn from_cartan(params: &CartanParams, tol: f64) -> Option<Self> {
        if params.alpha[1].abs() > tol || params.alpha[2].abs() > tol {
            return None;
        }
        let o2 = rotation_of_unitary(&params.w2);
        if (o2.column(0) - Vector3::x()).norm() > tol {
            return None;
        }
        let x = pauli(0);
        let a = params.w2.trace() * 0.5;
        let b = (x * params.w2).trace() * C64::new(0.0, -0.5);
        let gamma = if a.norm() >= b.norm() { a.arg() } else { b.arg() };
        let unphase = C64::from_polar(1.0, -gamma);
        let beta = (b * unphase).re.atan2((a * unphase).re);
        let half = 0.5 * params.alpha[0];
        let rot = |sign: f64| identity2() * c(half.cos(), 0.0) + x * c(0.0, sign * half.sin());
        Some(Self {
            axis: Vector3::x(),
            beta,
            v_plus: params.v2 * rot(1.0) * params.v1,
            v_minus: params.v2 * rot(-1.0) * params.v1,
        })
    }
}

/// Optimal memory-side alignment of one interaction onto another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeAlignment {
    pub distance: f64,
    pub memory_unitary: Mat2,
    pub phase: C64,
}

/// `min_{V, φ} ‖U_a − e^{iφ} (V ⊗ I) U_b (V† ⊗ I)‖_F` over `V ∈ SU(2)`.
///
/// Writing `V = Σ q_μ τ_μ` with a real unit quaternion `q`, the overlap
/// `Tr(U_a† (V⊗I) U_b (V†⊗I))` is a complex quadratic form `qᵀ M q`. For a
/// fixed phase the optimum over SU(2) is the top eigenvector of
/// `Re(e^{iφ} M)`, so the search is a scan over the phase circle followed by
/// alternating phase/eigenvector refinement.
pub fn gauge_alignment(a: &TwoQubitUnitary, b: &TwoQubitUnitary) -> GaugeAlignment {
    let taus: [Mat2; 4] = [identity2(), pauli(0) * c(0.0, -1.0), pauli(1) * c(0.0, -1.0), pauli(2) * c(0.0, -1.0)];
    let ad = a.matrix().adjoint();
    let bm = b.matrix();
    let mut m = Matrix4::<C64>::zeros();
    for mu in 0..4 {
        let left = ad * kron(&taus[mu], &identity2());
        for nu in 0..4 {
            let right = kron(&taus[nu].adjoint(), &identity2());
            m[(mu, nu)] = (left * bm * right).trace();
        }
    }
    let ms = (m + m.transpose()) * c(0.5, 0.0);
    let top = |phi: f64| {
        let h = (ms * C64::from_polar(1.0, phi)).map(|z| z.re);
        let eig = SymmetricEigen::new(h);
        let i = eig.eigenvalues.imax();
        (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())
    };

    const GRID: usize = 720;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..GRID {
        let phi = 2.0 * PI * step as f64 / GRID as f64;
        let (val, _) = top(phi);
        if val > best.0 {
            best = (val, phi);
        }
    }
    let mut q = top(best.1).1;
    for _ in 0..50 {
        let g = (q.transpose().map(|x| c(x, 0.0)) * ms * q.map(|x| c(x, 0.0)))[(0, 0)];
        let next_phi = -g.arg();
        let next_q = top(next_phi).1;
        let moved = (next_q - q).norm().min((next_q + q).norm());
        q = next_q;
        if moved < 1e-15 {
            break;
        }
    }

    let v = quaternion_unitary(&[q[0], q[1], q[2], q[3]]);
    let aligned = b.memory_conjugated(&v);
    let overlap = (a.matrix().adjoint() * aligned.matrix()).trace();
    let phase = if overlap.norm() > 0.0 {
        overlap.conj() / overlap.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let distance = (a.matrix() - aligned.matrix() * phase).norm();
    GaugeAlignment {
        distance,
        memory_unitary: v,
        phase,
    }
}

pub fn gauge_distance(a: &TwoQubitUnitary, b: &TwoQubitUnitary) -> f64 {
    gauge_alignment(a, b).distance
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64) -> CartanParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = CartanParams::random_canonical(&mut rng).alpha;
        CartanParams::new(random_su2(&mut rng), random_su2(&mut rng), alpha, random_su2(&mut rng)).unwrap()
    }

    proptest! {
        #[test]
        fn d_matrix_commutes_with_the_exchange(ax in -3.2..3.2f64, ay in -3.2..3.2f64, az in -3.2..3.2f64) {
            let d = d_matrix(&Vector3::new(ax, ay, az));
            prop_assert!((d.exchanged().matrix() - d.matrix()).norm() <= 1e-12);
        }

        #[test]
        fn decomposition_returns_the_angles(seed in any::<u64>()) {
            let p = random_params(seed);
            let k = kak_decompose(&p.assemble()).unwrap();
            prop_assert!((k.params.alpha - p.alpha).norm() <= 1e-8, "{} vs {}", k.params.alpha, p.alpha);
        }

        #[test]
        fn canonicalize_stays_on_the_gauge_orbit(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = TwoQubitUnitary::new(kron(&random_su2(&mut rng), &random_su2(&mut rng)) * random_params(seed ^ 1).assemble().matrix()).unwrap();
            let raw = kak_raw(&u).unwrap();
            let canonical = canonicalize(&raw);
            prop_assert!(in_chamber(&canonical.alpha, 1e-9));
            let before = TwoQubitUnitary::new(raw.matrix()).unwrap();
            let after = TwoQubitUnitary::new(canonical.matrix()).unwrap();
            prop_assert!(gauge_distance(&before, &after) <= 1e-8);
        }
    }
}
