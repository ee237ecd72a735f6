//! Recovery of the interaction from single-use and conditional channels.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, SymmetricEigen, Vector3};

use crate::cartan::{kak_decompose, CartanParams};
use crate::error::{Error, Result};
use crate::fixedpoint::{fixed_points, memory_map};
use crate::qcore::{channel_from_dilation, memory_channel, BlochAffineMap, InstrumentTable, Mat2, Povm, QubitState, TestEnsemble};
use crate::rotation::{nearest_rotation, proper_svd, rotation_exp, rotation_of_unitary, skew, unitary_from_rotation, unitary_from_rotation_vector};
use crate::simulator::Dataset;
use crate::tomography::{reconstruct_weighted, unitarity_score, Observations, WeightedFrequencies, MIN_CONDITIONAL_PAIRS};

/// Decision thresholds of the recovery pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Minimum unitarity score for the controlled branch.
    pub unitary: f64,
    /// Maximum `‖t‖` of the single-use channel in the generic branch.
    pub t_unital_tol: f64,
    /// Most negative `det T` still accepted.
    pub det_tol: f64,
    /// Products of cosines (and `|α_z|`) at or below this are degenerate.
    pub degenerate_tol: f64,
    pub s_min: f64,
    pub m_min: f64,
    pub min_pairs: u64,
}

impl Thresholds {
    /// Tolerances for infinite-data input.
    pub fn exact() -> Self {
        Self {
            unitary: 1.0 - 1e-6,
            t_unital_tol: 1e-6,
            det_tol: 1e-9,
            degenerate_tol: 1e-3,
            s_min: 0.05,
            m_min: 1e-6,
            min_pairs: 0,
        }
    }

    /// Tolerances scaled to the sampling noise of an `n`-step run.
    pub fn sampled(n: u64) -> Self {
        let n = n.max(1) as f64;
        Self {
            unitary: 1.0 - (35.0 / n.sqrt()).min(0.5),
            t_unital_tol: 0.02 * (1e5 / n).sqrt().max(1.0),
            det_tol: 0.05,
            degenerate_tol: 1e-3,
            s_min: 0.05,
            m_min: 0.05,
            min_pairs: MIN_CONDITIONAL_PAIRS,
        }
    }

    pub fn for_observations(obs: &Observations) -> Self {
        obs.sample_size.map_or_else(Self::exact, Self::sampled)
    }
}

/// `T = r2 · diag(products) · r1` with proper rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSvd {
    pub r2: Matrix3<f64>,
    pub products: Vector3<f64>,
    pub r1: Matrix3<f64>,
    pub residual: f64,
}

pub fn split_svd(e1: &BlochAffineMap, det_tol: f64) -> Result<SplitSvd> {
    let t = &e1.linear;
    let det = t.determinant();
    if det < -det_tol {
        return Err(Error::stage("split_svd", "negative determinant is inconsistent with the model", det));
    }
    let svd = proper_svd(t);
    let products = svd.values.map(|v| v.clamp(0.0, 1.0));
    let residual = (svd.left * Matrix3::from_diagonal(&products) * svd.right - t).norm();
    Ok(SplitSvd {
        r2: svd.left,
        products,
        r1: svd.right,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    /// `(|α_x|, |α_y|, |α_z|)`.
    pub magnitudes: Vector3<f64>,
    pub cosines: Vector3<f64>,
    /// Set when some product is at or below the degeneracy tolerance.
    pub degenerate: bool,
}

/// Inverts `(c₂c₃, c₁c₃, c₁c₂)` for the cosines `c_i = cos α_i`.
pub fn alpha_from_products(products: &Vector3<f64>, degenerate_tol: f64) -> AlphaEstimate {
    let (px, py, pz) = (products[0], products[1], products[2]);
    let degenerate = products.min() <= degenerate_tol;
    let cosines = if !degenerate {
        Vector3::new((py * pz / px).sqrt(), (px * pz / py).sqrt(), (px * py / pz).sqrt())
    } else if px > degenerate_tol {
        // c₁ ≈ 0: only c₂c₃ is known; split it evenly (smallest α_y).
        let c23 = px.sqrt();
        Vector3::new((py * pz / px).max(0.0).sqrt(), c23, c23)
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let cosines = cosines.map(|c| c.clamp(0.0, 1.0));
    AlphaEstimate {
        magnitudes: cosines.map(f64::acos),
        cosines,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaZSign {
    Positive,
    Negative,
    Undetermined,
}

impl AlphaZSign {
    pub fn factor(self) -> f64 {
        match self {
            AlphaZSign::Negative => -1.0,
            _ => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlphaZSign::Positive => "+1",
            AlphaZSign::Negative => "-1",
            AlphaZSign::Undetermined => "undetermined",
        }
    }
}

/// Channel on the input following one conditioning input `input`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMap {
    pub setting: usize,
    pub input: Vector3<f64>,
    pub map: BlochAffineMap,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryLocal {
    /// Rotation of the memory-side local.
    pub rotation: Matrix3<f64>,
    pub sign: AlphaZSign,
    /// Some `sin α_i` products fall below `s_min`.
    pub partial: bool,
    /// No conditioning input reaches `|m_z| ≥ m_min`.
    pub sign_weak: bool,
    /// Least-squares estimate of the sign factor; ±1 on exact input.
    pub sign_statistic: f64,
    pub max_abs_mz: f64,
    /// `‖t − A r‖` summed over conditioning inputs.
    pub translation_residual: f64,
    /// `‖B − |S| O |S|‖_F` at the optimum.
    pub rotation_residual: f64,
    /// Condition number of `|S|`.
    pub s_condition: f64,
}

fn sine_products(alpha_abs: &Vector3<f64>) -> Vector3<f64> {
    let s = alpha_abs.map(f64::sin);
    Vector3::new(s[1] * s[2], s[0] * s[2], s[0] * s[1])
}

/// Minimizes `‖B − S O S‖_F` over proper rotations `O` by damped Gauss-Newton
/// from several starts.
fn fit_scaled_rotation(b: &Matrix3<f64>, s: &Vector3<f64>) -> (Matrix3<f64>, f64) {
    let sd = Matrix3::from_diagonal(s);
    let inv = Matrix3::from_diagonal(&s.map(|x| if x > 1e-12 { 1.0 / x } else { 0.0 }));
    let init = nearest_rotation(&(inv * b * inv));
    let cost = |o: &Matrix3<f64>| (b - sd * o * sd).norm_squared();
    let flips = [
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, -1.0, -1.0),
        Vector3::new(-1.0, 1.0, -1.0),
        Vector3::new(-1.0, -1.0, 1.0),
    ];
    let mut best = (init, cost(&init));
    for f in flips {
        let mut o = init * Matrix3::from_diagonal(&f);
        let mut c = cost(&o);
        let mut lambda = 1e-3;
        for _ in 0..200 {
            let resid = b - sd * o * sd;
            let jac: [Matrix3<f64>; 3] = std::array::from_fn(|k| sd * o * skew(&Vector3::ith(k, 1.0)) * sd);
            let mut g = Matrix3::zeros();
            let mut h = Vector3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    g[(i, j)] = jac[i].dot(&jac[j]);
                }
                h[i] = jac[i].dot(&resid);
            }
            let damped = g + Matrix3::from_diagonal(&g.diagonal()) * lambda + Matrix3::identity() * 1e-15;
            let Some(step) = damped.lu().solve(&h) else { break };
            let candidate = o * rotation_exp(&step);
            let cc = cost(&candidate);
            if cc < c {
                let gain = c - cc;
                o = candidate;
                c = cc;
                lambda = (lambda * 0.3).max(1e-12);
                if gain <= 1e-30 || step.norm() < 1e-15 {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e8 {
                    break;
                }
            }
        }
        if c < best.1 {
            best = (o, c);
        }
    }
    (best.0, best.1.sqrt())
}

/// Recovers the memory-side rotation and the sign of `α_z` from conditional
/// channels, given the single-use factorization.
pub fn recover_memory_local(
    cond: &[ConditionalMap],
    r1: &Matrix3<f64>,
    r2: &Matrix3<f64>,
    alpha_abs: &Vector3<f64>,
    thresholds: &Thresholds,
) -> Result<MemoryLocal> {
    let mut design = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for c in cond {
        design += c.input * c.input.transpose() * c.weight;
        cross += c.map.translation * c.input.transpose() * c.weight;
    }
    let eig = SymmetricEigen::new(design);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if hi <= 0.0 || lo <= 1e-9 * hi {
        return Err(Error::stage("recover_memory_local", "conditioning inputs do not span the Bloch space", lo));
    }
    let a = cross * design.try_inverse().expect("positive definite");
    let translation_residual = cond.iter().map(|c| (c.map.translation - a * c.input).norm()).sum();

    let s_abs = sine_products(alpha_abs);
    let partial = alpha_abs.map(f64::sin).min() < thresholds.s_min;
    let b = r2.transpose() * a * r1.transpose();
    let (o_prime, rotation_residual) = fit_scaled_rotation(&b, &s_abs);

    let (c1, c2) = (alpha_abs[0].cos(), alpha_abs[1].cos());
    let s3 = alpha_abs[2].sin();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut max_abs_mz: f64 = 0.0;
    let sd = Matrix3::from_diagonal(&s_abs);
    for c in cond {
        let f = r2.transpose() * c.map.linear * r1.transpose();
        let mz = (o_prime * sd * r1 * c.input)[2];
        max_abs_mz = max_abs_mz.max(mz.abs());
        let (g21, g12) = (-mz * c1 * s3, mz * c2 * s3);
        num += c.weight * (f[(1, 0)] * g21 + f[(0, 1)] * g12);
        den += c.weight * (g21 * g21 + g12 * g12);
    }
    let sign_statistic = if den > 0.0 { num / den } else { 0.0 };
    let sign = if alpha_abs[2] <= thresholds.degenerate_tol || den <= 0.0 {
        AlphaZSign::Undetermined
    } else if sign_statistic < 0.0 {
        AlphaZSign::Negative
    } else {
        AlphaZSign::Positive
    };
    let p = Matrix3::from_diagonal(&Vector3::new(sign.factor(), sign.factor(), 1.0));
    let s_condition = if s_abs.min() > 0.0 { s_abs.max() / s_abs.min() } else { f64::INFINITY };
    Ok(MemoryLocal {
        rotation: p * o_prime * p,
        sign,
        partial,
        sign_weak: max_abs_mz < thresholds.m_min,
        sign_statistic,
        max_abs_mz,
        translation_residual,
        rotation_residual,
        s_condition,
    })
}

/// The one unitary branch visible in a single run of a controlled interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedBranch {
    pub unitary: Mat2,
    pub rotation: Matrix3<f64>,
    pub score: f64,
}

impl ObservedBranch {
    /// Index of the candidate unitary whose rotation is closest to the observed one.
    pub fn closest(&self, candidates: &[Mat2]) -> Option<usize> {
        candidates
            .iter()
            .map(|v| (rotation_of_unitary(v) - self.rotation).norm())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Controlled-unitary branch: the single-use channel is (close to) unitary,
/// and its rotation is one branch `V_l` of the interaction.
pub fn classify_and_extract_controlled(e1: &BlochAffineMap, thresholds: &Thresholds) -> Result<ObservedBranch> {
    let score = unitarity_score(e1);
    if score < thresholds.unitary {
        return Err(Error::stage("classify_controlled", "single-use channel is not unitary", score));
    }
    let rotation = nearest_rotation(&e1.linear);
    Ok(ObservedBranch {
        unitary: unitary_from_rotation(&rotation),
        rotation,
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericEstimate {
    pub params: CartanParams,
    pub sign: AlphaZSign,
    /// Set when some parameter was not identifiable from the data.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Generic(GenericEstimate),
    Controlled(ObservedBranch),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub sample_size: Option<u64>,
    pub unitarity_score: f64,
    pub single_channel: Option<BlochAffineMap>,
    pub translation_norm: f64,
    pub svd_residual: Option<f64>,
    pub products: Option<Vector3<f64>>,
    pub alpha_degenerate: bool,
    pub conditioning_settings: Vec<usize>,
    pub memory: Option<MemoryLocal>,
    /// Largest `‖[T|t]‖` mismatch between observed and predicted conditional channels.
    pub model_residual: Option<f64>,
    pub fixed_point_unique: Option<bool>,
    /// Weighted frequency misfit before and after joint refinement.
    pub fit_initial_cost: Option<f64>,
    pub fit_final_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub branch: Branch,
    pub diagnostics: Diagnostics,
}

impl RecoveryResult {
    pub fn generic(&self) -> Option<&GenericEstimate> {
        match &self.branch {
            Branch::Generic(g) => Some(g),
            Branch::Controlled(_) => None,
        }
    }

    pub fn controlled(&self) -> Option<&ObservedBranch> {
        match &self.branch {
            Branch::Controlled(c) => Some(c),
            Branch::Generic(_) => None,
        }
    }
}

fn conditional_maps(obs: &Observations, ensemble: &TestEnsemble, povm: &Povm, thresholds: &Thresholds) -> Result<Vec<ConditionalMap>> {
    let mut maps = Vec::new();
    let mut shortfall = None;
    for (setting, freqs) in &obs.conditional {
        let weight = freqs.total_weight();
        if weight <= 0.0 || (obs.sample_size.is_some() && (weight as u64) < thresholds.min_pairs) {
            shortfall.get_or_insert((*setting, weight as u64));
            continue;
        }
        maps.push(ConditionalMap {
            setting: *setting,
            input: ensemble.state(*setting).bloch(),
            map: reconstruct_weighted(freqs, ensemble, povm)?,
            weight,
        });
    }
    if maps.len() < 3 {
        let (setting, found) = shortfall.unwrap_or((0, 0));
        return Err(Error::InsufficientPairs {
            setting,
            found,
            required: thresholds.min_pairs.max(1),
        });
    }
    Ok(maps)
}

/// Weighted squared residuals of the model `params` against all observed
/// outcome frequencies. Weights are `N / max(p̃, floor)`.
struct FrequencyFit<'a> {
    obs: &'a Observations,
    ensemble: &'a TestEnsemble,
    povm: &'a Povm,
    settings: Vec<usize>,
}

const FIT_PROBABILITY_FLOOR: f64 = 1e-3;

impl FrequencyFit<'_> {
    fn residuals(&self, params: &CartanParams) -> Vec<f64> {
        let u = params.assemble();
        let xi_bar = fixed_points(&memory_map(&u, self.ensemble)).map_or_else(|_| QubitState::maximally_mixed(), |r| r.fixed_point);
        let table = InstrumentTable::new(&u, self.ensemble, self.povm);
        let mut out = Vec::new();
        let mut push = |freqs: &WeightedFrequencies, memory: &Vector3<f64>| {
            for (x, (w, row)) in freqs.weights.iter().zip(&freqs.probs).enumerate() {
                for (k, observed) in row.iter().enumerate() {
                    let scale = (w / observed.max(FIT_PROBABILITY_FLOOR)).sqrt();
                    out.push(scale * (observed - table.probability(x, k, memory)));
                }
            }
        };
        push(&self.obs.single, &xi_bar.bloch());
        for (setting, freqs) in &self.obs.conditional {
            if self.settings.contains(setting) {
                let after = memory_channel(&u, self.ensemble.state(*setting)).apply(&xi_bar.bloch());
                push(freqs, &after);
            }
        }
        out
    }

    fn cost(&self, params: &CartanParams) -> f64 {
        self.residuals(params).iter().map(|r| r * r).sum()
    }

    /// Twelve-parameter chart around `base`: angles plus right-multiplied
    /// rotation vectors on each local.
    fn chart(base: &CartanParams, delta: &SVector<f64, 12>) -> CartanParams {
        let local = |m: &Mat2, o: usize| m * unitary_from_rotation_vector(&Vector3::new(delta[o], delta[o + 1], delta[o + 2]));
        CartanParams {
            w2: local(&base.w2, 3),
            v2: local(&base.v2, 6),
            alpha: base.alpha + Vector3::new(delta[0], delta[1], delta[2]),
            v1: local(&base.v1, 9),
        }
    }

    /// Levenberg-Marquardt with central-difference Jacobians.
    fn refine(&self, start: &CartanParams) -> (CartanParams, f64) {
        let mut current = *start;
        let mut res = DVector::from_vec(self.residuals(&current));
        let mut cost = res.norm_squared();
        let mut lambda = 1e-3;
        const H: f64 = 1e-6;
        for _ in 0..100 {
            let mut jac = DMatrix::zeros(res.len(), 12);
            for j in 0..12 {
                let mut d = SVector::<f64, 12>::zeros();
                d[j] = H;
                let plus = DVector::from_vec(self.residuals(&Self::chart(&current, &d)));
                let minus = DVector::from_vec(self.residuals(&Self::chart(&current, &(-d))));
                jac.set_column(j, &((plus - minus) / (2.0 * H)));
            }
            let jt = jac.transpose();
            let g = &jt * &jac;
            let h = -(&jt * &res);
            let mut improved = false;
            while lambda < 1e10 {
                let damped = &g + DMatrix::from_diagonal(&g.diagonal()) * lambda + DMatrix::identity(12, 12) * 1e-14;
                let Some(step) = damped.lu().solve(&h) else { break };
                let step = SVector::<f64, 12>::from_column_slice(step.as_slice());
                let candidate = Self::chart(&current, &step);
                let cres = DVector::from_vec(self.residuals(&candidate));
                let ccost = cres.norm_squared();
                if ccost < cost {
                    let gain = cost - ccost;
                    current = candidate;
                    res = cres;
                    cost = ccost;
                    lambda = (lambda * 0.2).max(1e-12);
                    improved = step.norm() > 1e-12 && gain > 1e-14 * cost.max(1e-300);
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (current, cost)
    }
}

/// Canonical-chamber representative of a gauge-fixed estimate.
fn canonical(params: CartanParams) -> CartanParams {
    if params.is_canonical(1e-12) {
        return params;
    }
    kak_decompose(&params.assemble()).map_or(params, |k| k.params)
}

/// Full pipeline on (sampled or exact) observations.
pub fn estimate_from_observations(obs: &Observations, ensemble: &TestEnsemble, povm: &Povm, thresholds: &Thresholds) -> Result<RecoveryResult> {
    let e1 = reconstruct_weighted(&obs.single, ensemble, povm)?;
    let mut diag = Diagnostics {
        sample_size: obs.sample_size,
        unitarity_score: unitarity_score(&e1),
        single_channel: Some(e1),
        translation_norm: e1.translation.norm(),
        ..Diagnostics::default()
    };
    if let Ok(observed) = classify_and_extract_controlled(&e1, thresholds) {
        return Ok(RecoveryResult {
            branch: Branch::Controlled(observed),
            diagnostics: diag,
        });
    }
    if diag.translation_norm > thresholds.t_unital_tol {
        return Err(Error::stage("split_svd", "single-use channel is not unital", diag.translation_norm));
    }
    let split = split_svd(&e1, thresholds.det_tol)?;
    diag.svd_residual = Some(split.residual);
    diag.products = Some(split.products);
    let alpha = alpha_from_products(&split.products, thresholds.degenerate_tol);
    diag.alpha_degenerate = alpha.degenerate;

    let cond = conditional_maps(obs, ensemble, povm, thresholds)?;
    diag.conditioning_settings = cond.iter().map(|c| c.setting).collect();
    let memory = recover_memory_local(&cond, &split.r1, &split.r2, &alpha.magnitudes, thresholds)?;
    diag.memory = Some(memory);

    let assemble_with = |sign: f64, rotation: &Matrix3<f64>| {
        let mut signed = alpha.magnitudes;
        signed[2] *= sign;
        CartanParams::new(
            unitary_from_rotation(rotation),
            unitary_from_rotation(&split.r2),
            signed,
            unitary_from_rotation(&split.r1),
        )
    };
    let mut params = assemble_with(memory.sign.factor(), &memory.rotation)?;
    let mut sign = memory.sign;

    if obs.sample_size.is_some() {
        let fit = FrequencyFit {
            obs,
            ensemble,
            povm,
            settings: diag.conditioning_settings.clone(),
        };
        diag.fit_initial_cost = Some(fit.cost(&params));
        let (mut best, mut best_cost) = fit.refine(&params);
        if sign != AlphaZSign::Undetermined {
            let flip = -memory.sign.factor();
            let p = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
            let (alt, alt_cost) = fit.refine(&assemble_with(flip, &(p * memory.rotation * p))?);
            if alt_cost < best_cost {
                (best, best_cost) = (alt, alt_cost);
            }
        }
        params = canonical(best);
        diag.fit_final_cost = Some(best_cost);
        if sign != AlphaZSign::Undetermined {
            sign = if params.alpha[2] < 0.0 { AlphaZSign::Negative } else { AlphaZSign::Positive };
        }
    }
    let u = params.assemble();
    let xi_bar = fixed_points(&memory_map(&u, ensemble)).ok();
    diag.fixed_point_unique = xi_bar.as_ref().map(|r| r.unique);
    if let Some(report) = &xi_bar {
        let residual = cond
            .iter()
            .map(|c| {
                let after = memory_channel(&u, ensemble.state(c.setting)).apply_state(&report.fixed_point);
                channel_from_dilation(&u, &after).distance(&c.map)
            })
            .fold(0.0, f64::max);
        diag.model_residual = Some(residual);
    }
    Ok(RecoveryResult {
        branch: Branch::Generic(GenericEstimate {
            params,
            sign,
            partial: alpha.degenerate || memory.partial,
        }),
        diagnostics: diag,
    })
}

/// Tally, reconstruct and recover from a randomized-settings dataset.
pub fn estimate_interaction(dataset: &Dataset, ensemble: &TestEnsemble, povm: &Povm, thresholds: &Thresholds) -> Result<RecoveryResult> {
    let obs = Observations::from_dataset(dataset, ensemble, povm)?;
    estimate_from_observations(&obs, ensemble, povm, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::{d_matrix, gauge_distance, random_su2};
    use crate::qcore::{pauli, TwoQubitUnitary};
    use crate::simulator::{exact_observations, run_experiment, ExperimentConfig, Interaction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn rz(theta: f64) -> Matrix3<f64> {
        rotation_exp(&Vector3::new(0.0, 0.0, theta))
    }

    fn exact(u: &TwoQubitUnitary) -> Observations {
        exact_observations(u, &QubitState::maximally_mixed(), &TestEnsemble::pauli6(), &Povm::tetrahedral(), 10_000)
    }

    fn estimate_exact(u: &TwoQubitUnitary) -> Result<RecoveryResult> {
        estimate_from_observations(&exact(u), &TestEnsemble::pauli6(), &Povm::tetrahedral(), &Thresholds::exact())
    }

    #[test]
    fn split_svd_examples() {
        let s = split_svd(&BlochAffineMap::identity(), 1e-9).unwrap();
        assert!((s.r1 - Matrix3::identity()).norm() < 1e-12 && (s.r2 - Matrix3::identity()).norm() < 1e-12);
        assert_eq!(s.products, Vector3::new(1.0, 1.0, 1.0));

        let t = rz(FRAC_PI_2) * Matrix3::from_diagonal(&Vector3::new(0.8, 0.5, 0.4));
        let s = split_svd(&BlochAffineMap::new(t, Vector3::zeros()), 1e-9).unwrap();
        assert!((s.products - Vector3::new(0.8, 0.5, 0.4)).norm() < 1e-12);
        assert!((s.r2 * Matrix3::from_diagonal(&s.products) * s.r1 - t).norm() < 1e-12);
        assert!((s.r1.determinant() - 1.0).abs() < 1e-12 && (s.r2.determinant() - 1.0).abs() < 1e-12);
        // Up to a pair of sign flips shared between the factors.
        let q = s.r2.transpose() * rz(FRAC_PI_2);
        assert!((q.abs() - Matrix3::identity()).norm() < 1e-12);

        let s = split_svd(
            &BlochAffineMap::new(Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)), Vector3::zeros()),
            1e-9,
        )
        .unwrap();
        assert_eq!(s.products, Vector3::new(1.0, 0.0, 0.0));
        assert!(s.residual < 1e-12);
        let again = split_svd(
            &BlochAffineMap::new(Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)), Vector3::zeros()),
            1e-9,
        )
        .unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn split_svd_rejects_reflections() {
        let t = Matrix3::from_diagonal(&Vector3::new(0.9, 0.5, -0.3));
        assert!(matches!(
            split_svd(&BlochAffineMap::new(t, Vector3::zeros()), 1e-9),
            Err(Error::Stage { stage: "split_svd", .. })
        ));
    }

    #[test]
    fn alpha_from_products_examples() {
        let a = alpha_from_products(&Vector3::new(1.0, 1.0, 1.0), 1e-3);
        assert!(a.magnitudes.norm() < 1e-12 && !a.degenerate);

        let a = alpha_from_products(&Vector3::new(0.25, 0.25, 0.25), 1e-3);
        assert!((a.cosines - Vector3::new(0.5, 0.5, 0.5)).norm() < 1e-12);
        assert!((a.magnitudes - Vector3::repeat(PI / 3.0)).norm() < 1e-12);

        let h = 0.5f64.sqrt();
        let a = alpha_from_products(&Vector3::new(h, h, 0.5), 1e-3);
        assert!((a.cosines - Vector3::new(h, h, 1.0)).norm() < 1e-12);
        assert!((a.magnitudes - Vector3::new(FRAC_PI_4, FRAC_PI_4, 0.0)).norm() < 1e-7);
        // Forward check through the single-use channel of D(α⃗).
        let e = channel_from_dilation(&d_matrix(&a.magnitudes), &QubitState::maximally_mixed());
        assert!((e.linear.diagonal() - Vector3::new(h, h, 0.5)).norm() < 1e-12);

        let a = alpha_from_products(&Vector3::new(1.0, 0.0, 0.0), 1e-3);
        assert!(a.degenerate);
        assert!((a.magnitudes - Vector3::new(FRAC_PI_2, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn conditional_map_has_the_expected_structure() {
        let alpha = Vector3::new(1.1f64, 0.7, -0.4);
        let w2 = unitary_from_rotation_vector(&Vector3::new(0.4, -1.0, 0.3));
        let v2 = unitary_from_rotation_vector(&Vector3::new(-0.2, 0.5, 0.9));
        let v1 = unitary_from_rotation_vector(&Vector3::new(0.7, 0.1, -0.6));
        let p = CartanParams::new(w2, v2, alpha, v1).unwrap();
        let u = p.assemble();
        let (r1, r2, o2) = (rotation_of_unitary(&v1), rotation_of_unitary(&v2), rotation_of_unitary(&w2));
        let (s, c) = (alpha.map(f64::sin), alpha.map(f64::cos));
        let sm = Matrix3::from_diagonal(&Vector3::new(s[1] * s[2], s[0] * s[2], s[0] * s[1]));
        for x in TestEnsemble::pauli6().entries() {
            let r = x.0.bloch();
            let m = memory_channel(&u, &x.0).apply(&Vector3::zeros());
            assert!((m - o2 * sm * r1 * r).norm() < 1e-12);
            let cond = channel_from_dilation(&u, &QubitState::from_bloch(m));
            assert!((cond.translation - r2 * sm * o2 * sm * r1 * r).norm() < 1e-12);
            let f = r2.transpose() * cond.linear * r1.transpose();
            assert!((f[(1, 0)] + m[2] * c[0] * s[2]).abs() < 1e-12);
            assert!((f[(0, 1)] - m[2] * c[1] * s[2]).abs() < 1e-12);
            assert!((f.diagonal() - Vector3::new(c[1] * c[2], c[0] * c[2], c[0] * c[1])).norm() < 1e-12);
        }
    }

    #[test]
    fn memory_local_with_trivial_w2() {
        let p = CartanParams::new(
            Mat2::identity(),
            unitary_from_rotation_vector(&Vector3::new(0.2, 0.3, 0.1)),
            Vector3::new(1.0, 0.7, 0.3),
            unitary_from_rotation_vector(&Vector3::new(-0.5, 0.0, 0.8)),
        )
        .unwrap();
        let r = estimate_exact(&p.assemble()).unwrap();
        let m = r.diagnostics.memory.unwrap();
        let g = r.generic().unwrap();
        assert_eq!(g.sign, AlphaZSign::Positive);
        assert!(gauge_distance(&g.params.assemble(), &p.assemble()) < 1e-6);
        assert!(m.rotation_residual < 1e-9);
    }

    #[test]
    fn memory_local_with_random_w2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w2 = random_su2(&mut rng);
        let p = CartanParams::new(w2, random_su2(&mut rng), Vector3::new(1.0, 0.7, 0.3), random_su2(&mut rng)).unwrap();
        let r = estimate_exact(&p.assemble()).unwrap();
        let g = r.generic().unwrap();
        assert_eq!(g.sign, AlphaZSign::Positive);
        assert!((g.params.alpha - p.alpha).norm() < 1e-6);
        assert!(gauge_distance(&g.params.assemble(), &p.assemble()) < 1e-6);
        assert!(r.diagnostics.model_residual.unwrap() < 1e-9);
        assert_eq!(r.diagnostics.fixed_point_unique, Some(true));
    }

    #[test]
    fn negative_alpha_z_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = CartanParams::new(random_su2(&mut rng), random_su2(&mut rng), Vector3::new(1.2, 0.9, -0.5), random_su2(&mut rng)).unwrap();
        let g = *estimate_exact(&p.assemble()).unwrap().generic().unwrap();
        assert_eq!(g.sign, AlphaZSign::Negative);
        assert!(gauge_distance(&g.params.assemble(), &p.assemble()) < 1e-6);
    }

    #[test]
    fn vanishing_alpha_z_leaves_sign_undetermined() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = CartanParams::new(random_su2(&mut rng), random_su2(&mut rng), Vector3::new(1.2, 0.6, 0.0), random_su2(&mut rng)).unwrap();
        let r = estimate_exact(&p.assemble()).unwrap();
        let g = r.generic().unwrap();
        assert_eq!(g.sign, AlphaZSign::Undetermined);
        assert!(g.partial);
        assert!(g.params.alpha[2].abs() < 1e-6);
    }

    #[test]
    fn controlled_interactions_take_the_controlled_branch() {
        for u in [TwoQubitUnitary::controlled_z(), TwoQubitUnitary::controlled_not()] {
            let obs = exact_observations(&u, &QubitState::new(0.0, 0.0, 1.0), &TestEnsemble::pauli6(), &Povm::tetrahedral(), 100);
            let r = estimate_from_observations(&obs, &TestEnsemble::pauli6(), &Povm::tetrahedral(), &Thresholds::exact()).unwrap();
            let b = r.controlled().expect("controlled branch");
            assert!((b.rotation - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn controlled_not_branches_from_sampled_runs() {
        let cases = [(QubitState::new(0.0, 0.0, 1.0), 0usize), (QubitState::new(0.0, 0.0, -1.0), 1)];
        for (memory, expected) in cases {
            let cfg = ExperimentConfig::preset(Interaction::Unitary(TwoQubitUnitary::controlled_not()), memory, 10_000, 3);
            let d = run_experiment(&cfg).unwrap();
            let r = estimate_interaction(&d, &cfg.ensemble, &cfg.povm, &Thresholds::sampled(10_000)).unwrap();
            let b = r.controlled().expect("controlled branch");
            assert_eq!(b.closest(&[Mat2::identity(), pauli(0)]), Some(expected));
        }
    }

    #[test]
    fn classify_rejects_noisy_channels() {
        let map = BlochAffineMap::new(Matrix3::from_diagonal(&Vector3::new(1.0, 0.8, 0.8)), Vector3::zeros());
        assert!(classify_and_extract_controlled(&map, &Thresholds::sampled(10_000)).is_err());
        let rot = rotation_exp(&Vector3::new(0.3, -0.2, 0.5));
        let b = classify_and_extract_controlled(&BlochAffineMap::new(rot, Vector3::zeros()), &Thresholds::exact()).unwrap();
        assert!((rotation_of_unitary(&b.unitary) - rot).norm() < 1e-12);
    }

    #[test]
    fn non_unital_single_channel_aborts() {
        let u = CartanParams::pure(Vector3::new(1.0, 0.5, 0.2)).assemble();
        let e = TestEnsemble::new(vec![
            (QubitState::new(1.0, 0.0, 0.0), 0.25),
            (QubitState::new(0.0, 1.0, 0.0), 0.25),
            (QubitState::new(0.0, 0.0, 1.0), 0.25),
            (QubitState::new(0.0, 0.0, -1.0), 0.25),
        ])
        .unwrap();
        let obs = exact_observations(&u, &QubitState::maximally_mixed(), &e, &Povm::tetrahedral(), 100);
        let err = estimate_from_observations(&obs, &e, &Povm::tetrahedral(), &Thresholds::exact()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "split_svd", .. }), "{err}");
    }

    #[test]
    fn sampled_thresholds_scale_with_n() {
        assert!((Thresholds::sampled(10_000).unitary - 0.65).abs() < 1e-12);
        assert!(Thresholds::sampled(1_000_000).unitary > 0.96);
        assert_eq!(Thresholds::sampled(10).unitary, 0.5);
        assert!(Thresholds::sampled(1_000).t_unital_tol > Thresholds::sampled(1_000_000).t_unital_tol);
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    proptest! {
        #[test]
        fn products_invert_on_the_chamber_interior(ax in 0.01..FRAC_PI_2 - 0.01, fy in 0.01..0.99f64, fz in -0.99..0.99f64) {
            let alpha = Vector3::new(ax, ax * fy, ax * fy * fz);
            let c = alpha.map(f64::cos);
            let est = alpha_from_products(&Vector3::new(c[1] * c[2], c[0] * c[2], c[0] * c[1]), 1e-3);
            prop_assert!(!est.degenerate);
            prop_assert!((est.magnitudes - alpha.abs()).norm() <= 1e-10);
        }
    }
}
