//! Frequency tallies and linear-inversion channel reconstruction.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::qcore::{BlochAffineMap, Povm, TestEnsemble};
use crate::simulator::Dataset;

/// Default minimum number of conditioned pairs for a conditional estimate.
pub const MIN_CONDITIONAL_PAIRS: u64 = 1000;

/// Outcome counts `N_xk` per setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<Vec<u64>>,
}

impl FrequencyTable {
    pub fn zeros(settings: usize, outcomes: usize) -> Self {
        Self {
            counts: vec![vec![0; outcomes]; settings],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, x: usize, k: usize) -> u64 {
        self.counts[x][k]
    }

    pub fn n_setting(&self, x: usize) -> u64 {
        self.counts[x].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.counts.len()).map(|x| self.n_setting(x)).sum()
    }

    /// `p̃(k|x) = N_xk / N_x`; `None` for a setting that never occurred.
    pub fn freq(&self, x: usize, k: usize) -> Option<f64> {
        let n = self.n_setting(x);
        (n > 0).then(|| self.counts[x][k] as f64 / n as f64)
    }

    pub fn row(&self, x: usize) -> Option<Vec<f64>> {
        let n = self.n_setting(x);
        (n > 0).then(|| self.counts[x].iter().map(|&c| c as f64 / n as f64).collect())
    }

    pub fn empty_settings(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&x| self.n_setting(x) == 0).collect()
    }

    pub fn increment(&mut self, x: usize, k: usize) {
        self.counts[x][k] += 1;
    }

    /// Adds another table of the same shape.
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    /// Weights `N_x` with rows `p̃(·|x)`; empty rows get weight zero.
    pub fn weighted(&self) -> WeightedFrequencies {
        let weights = (0..self.counts.len()).map(|x| self.n_setting(x) as f64).collect();
        let probs = (0..self.counts.len())
            .map(|x| self.row(x).unwrap_or_else(|| vec![0.0; self.counts[x].len()]))
            .collect();
        WeightedFrequencies::new(weights, probs)
    }
}

/// Outcome distributions per setting with least-squares weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFrequencies {
    pub weights: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

impl WeightedFrequencies {
    pub fn new(weights: Vec<f64>, probs: Vec<Vec<f64>>) -> Self {
        Self { weights, probs }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_record(dataset: &Dataset, index: usize, settings: usize, outcomes: usize) -> Result<()> {
    let r = dataset.records[index];
    if r.setting >= settings || r.outcome >= outcomes {
        return Err(Error::RecordOutOfRange {
            index,
            setting: r.setting,
            outcome: r.outcome,
            settings,
            outcomes,
        });
    }
    Ok(())
}

pub fn tally(dataset: &Dataset, ensemble_size: usize, povm_size: usize) -> Result<FrequencyTable> {
    let mut table = FrequencyTable::zeros(ensemble_size, povm_size);
    for (i, r) in dataset.records.iter().enumerate() {
        check_record(dataset, i, ensemble_size, povm_size)?;
        table.increment(r.setting, r.outcome);
    }
    Ok(table)
}

/// Tallies step `j + 1` over all consecutive pairs whose step `j` used
/// `conditioning`. Pairs overlap, so every step is reused.
pub fn tally_conditional(dataset: &Dataset, ensemble_size: usize, povm_size: usize, conditioning: usize) -> Result<FrequencyTable> {
    let mut table = FrequencyTable::zeros(ensemble_size, povm_size);
    for i in 0..dataset.records.len() {
        check_record(dataset, i, ensemble_size, povm_size)?;
    }
    for pair in dataset.records.windows(2) {
        if pair[0].setting == conditioning {
            table.increment(pair[1].setting, pair[1].outcome);
        }
    }
    Ok(table)
}

/// Tallies `(step j+1 | setting at step j)` for every conditioning setting in one pass.
pub fn tally_all_conditional(dataset: &Dataset, ensemble_size: usize, povm_size: usize) -> Result<Vec<FrequencyTable>> {
    let mut tables = vec![FrequencyTable::zeros(ensemble_size, povm_size); ensemble_size];
    for i in 0..dataset.records.len() {
        check_record(dataset, i, ensemble_size, povm_size)?;
    }
    for pair in dataset.records.windows(2) {
        tables[pair[0].setting].increment(pair[1].setting, pair[1].outcome);
    }
    Ok(tables)
}

pub fn reconstruct_single(freqs: &FrequencyTable, ensemble: &TestEnsemble, povm: &Povm) -> Result<BlochAffineMap> {
    reconstruct_weighted(&freqs.weighted(), ensemble, povm)
}

/// Weighted least-squares inversion of `p(k|x) = a_k + b⃗_k·(T r⃗_x + t⃗)`
/// over the twelve entries of `[T | t]`.
pub fn reconstruct_weighted(freqs: &WeightedFrequencies, ensemble: &TestEnsemble, povm: &Povm) -> Result<BlochAffineMap> {
    let coeffs: Vec<(f64, Vector3<f64>)> = (0..povm.len()).map(|k| povm.affine_coefficients(k)).collect();
    let mut gram = SMatrix::<f64, 12, 12>::zeros();
    let mut rhs = SVector::<f64, 12>::zeros();
    for (x, (&w, row)) in freqs.weights.iter().zip(&freqs.probs).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let r = ensemble.state(x).bloch();
        for (k, (a, b)) in coeffs.iter().enumerate() {
            let mut phi = SVector::<f64, 12>::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    phi[3 * i + j] = b[i] * r[j];
                }
                phi[9 + i] = b[i];
            }
            let y = row[k] - a;
            gram += phi * phi.transpose() * w;
            rhs += phi * (y * w);
        }
    }
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max().max(0.0);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-10 * max && max > 0.0).count();
    if rank < 12 {
        return Err(Error::IllPosed { rank, required: 12 });
    }
    let theta = eig.eigenvectors * SVector::<f64, 12>::from_fn(|i, _| eig.eigenvectors.column(i).dot(&rhs) / eig.eigenvalues[i]);
    let linear = Matrix3::from_fn(|i, j| theta[3 * i + j]);
    let translation = Vector3::new(theta[9], theta[10], theta[11]);
    Ok(BlochAffineMap::new(linear, translation))
}

/// Channel on step `j + 1` restricted to steps following `conditioning`.
pub fn reconstruct_conditional(dataset: &Dataset, ensemble: &TestEnsemble, povm: &Povm, conditioning: usize, min_pairs: u64) -> Result<BlochAffineMap> {
    let table = tally_conditional(dataset, ensemble.len(), povm.len(), conditioning)?;
    let found = table.total();
    if found < min_pairs {
        return Err(Error::InsufficientPairs {
            setting: conditioning,
            found,
            required: min_pairs,
        });
    }
    reconstruct_single(&table, ensemble, povm)
}

/// `1 − max(‖TᵀT − I‖₂, |det T − 1|, ‖t‖)` clamped to `[0, 1]`.
pub fn unitarity_score(map: &BlochAffineMap) -> f64 {
    let t = &map.linear;
    let gram = t.transpose() * t - Matrix3::identity();
    let orth = SymmetricEigen::new(gram).eigenvalues.amax();
    let det = (t.determinant() - 1.0).abs();
    let shift = map.translation.norm();
    (1.0 - orth.max(det).max(shift)).clamp(0.0, 1.0)
}

/// Everything the recovery pipeline reads from an experiment: the
/// single-step statistics and the conditional statistics per conditioning
/// setting. `sample_size` is `None` for infinite-data input.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub single: WeightedFrequencies,
    pub conditional: Vec<(usize, WeightedFrequencies)>,
    pub sample_size: Option<u64>,
}

impl Observations {
    pub fn from_dataset(dataset: &Dataset, ensemble: &TestEnsemble, povm: &Povm) -> Result<Self> {
        let single = tally(dataset, ensemble.len(), povm.len())?;
        let conditional = tally_all_conditional(dataset, ensemble.len(), povm.len())?
            .into_iter()
            .enumerate()
            .map(|(c, t)| (c, t.weighted()))
            .collect();
        Ok(Self {
            single: single.weighted(),
            conditional,
            sample_size: Some(dataset.records.len() as u64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::d_matrix;
    use crate::qcore::{channel_from_dilation, QubitState, TwoQubitUnitary};
    use crate::simulator::Record;

    fn dataset(records: &[(usize, usize)]) -> Dataset {
        Dataset {
            records: records
                .iter()
                .enumerate()
                .map(|(i, &(setting, outcome))| Record {
                    step: i as u64,
                    setting,
                    outcome,
                })
                .collect(),
            fingerprint: "test".into(),
            memory_trajectory: None,
        }
    }

    /// Frequencies predicted by a known affine map, used as exact input.
    fn exact_freqs(map: &BlochAffineMap, ensemble: &TestEnsemble, povm: &Povm) -> WeightedFrequencies {
        let weights = ensemble.entries().iter().map(|(_, q)| *q).collect();
        let probs = ensemble
            .entries()
            .iter()
            .map(|(s, _)| {
                let out = map.apply_state(s);
                (0..povm.len()).map(|k| povm.probability(k, &out)).collect()
            })
            .collect();
        WeightedFrequencies::new(weights, probs)
    }

    #[test]
    fn tally_examples() {
        let t = tally(&dataset(&[(0, 2); 4]), 2, 4).unwrap();
        assert_eq!(t.n_setting(0), 4);
        assert_eq!(t.freq(0, 2), Some(1.0));
        assert_eq!(t.n_setting(1), 0);
        assert_eq!(t.freq(1, 0), None);
        assert_eq!(t.empty_settings(), vec![1]);
        assert_eq!(t.total(), 4);
    }

    #[test]
    fn tally_rejects_out_of_range_ids() {
        assert!(matches!(
            tally(&dataset(&[(0, 0), (3, 1)]), 3, 4),
            Err(Error::RecordOutOfRange { index: 1, .. })
        ));
        assert!(tally(&dataset(&[(0, 4)]), 3, 4).is_err());
    }

    #[test]
    fn merge_is_additive() {
        let a = tally(&dataset(&[(0, 1), (1, 2)]), 2, 3).unwrap();
        let b = tally(&dataset(&[(0, 1), (0, 0)]), 2, 3).unwrap();
        let mut m = a.clone();
        m.merge(&b);
        assert_eq!(m, tally(&dataset(&[(0, 1), (1, 2), (0, 1), (0, 0)]), 2, 3).unwrap());
    }

    #[test]
    fn conditional_tally_uses_overlapping_pairs() {
        let d = dataset(&[(0, 0), (0, 1), (1, 2), (0, 3), (1, 0)]);
        let t = tally_conditional(&d, 2, 4, 0).unwrap();
        // Pairs starting at steps 0, 1, 3.
        assert_eq!(t.total(), 3);
        assert_eq!(t.count(0, 1), 1);
        assert_eq!(t.count(1, 2), 1);
        assert_eq!(t.count(1, 0), 1);
        let all = tally_all_conditional(&d, 2, 4).unwrap();
        assert_eq!(all[0], t);
        assert_eq!(all[1].total(), 1);
    }

    #[test]
    fn reconstruct_identity_exactly() {
        let e = TestEnsemble::pauli6();
        let povm = Povm::tetrahedral();
        let map = reconstruct_weighted(&exact_freqs(&BlochAffineMap::identity(), &e, &povm), &e, &povm).unwrap();
        assert!(map.distance(&BlochAffineMap::identity()) < 1e-12);
    }

    #[test]
    fn reconstruct_cnot_like_average_channel() {
        let e = TestEnsemble::pauli6();
        let povm = Povm::tetrahedral();
        let truth = channel_from_dilation(&d_matrix(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0)), &QubitState::maximally_mixed());
        let expected = BlochAffineMap::new(Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)), Vector3::zeros());
        assert!(truth.distance(&expected) < 1e-14);
        let map = reconstruct_weighted(&exact_freqs(&truth, &e, &povm), &e, &povm).unwrap();
        assert!(map.distance(&expected) < 1e-12);
    }

    #[test]
    fn reconstruct_constant_map() {
        let e = TestEnsemble::pauli6();
        let povm = Povm::tetrahedral();
        let xi = QubitState::new(0.2, -0.6, 0.1);
        let truth = channel_from_dilation(&TwoQubitUnitary::swap(), &xi);
        let map = reconstruct_weighted(&exact_freqs(&truth, &e, &povm), &e, &povm).unwrap();
        assert!(map.linear.norm() < 1e-12);
        assert!((map.translation - xi.bloch()).norm() < 1e-12);
    }

    #[test]
    fn ill_posed_designs_are_rejected() {
        let povm = Povm::tetrahedral();
        let z_only = TestEnsemble::new(vec![(QubitState::new(0.0, 0.0, 1.0), 0.5), (QubitState::new(0.0, 0.0, -1.0), 0.5)]).unwrap();
        let f = exact_freqs(&BlochAffineMap::identity(), &z_only, &povm);
        assert!(matches!(reconstruct_weighted(&f, &z_only, &povm), Err(Error::IllPosed { .. })));

        let e = TestEnsemble::pauli6();
        let z_povm = Povm::new(vec![QubitState::new(0.0, 0.0, 1.0).density(), QubitState::new(0.0, 0.0, -1.0).density()]).unwrap();
        let f = exact_freqs(&BlochAffineMap::identity(), &e, &z_povm);
        assert!(reconstruct_weighted(&f, &e, &z_povm).is_err());
    }

    #[test]
    fn conditional_requires_enough_pairs() {
        let d = dataset(&[(0, 0), (1, 1), (0, 2)]);
        let err = reconstruct_conditional(&d, &TestEnsemble::pauli6(), &Povm::tetrahedral(), 0, 10).unwrap_err();
        assert_eq!(
            err,
            Error::InsufficientPairs {
                setting: 0,
                found: 1,
                required: 10
            }
        );
    }

    #[test]
    fn unitarity_score_examples() {
        assert_eq!(unitarity_score(&BlochAffineMap::identity()), 1.0);
        assert_eq!(unitarity_score(&BlochAffineMap::new(Matrix3::zeros(), Vector3::zeros())), 0.0);
        // ‖TᵀT − I‖₂ = 0.36 and |det T − 1| = 0.36.
        let s = unitarity_score(&BlochAffineMap::new(Matrix3::from_diagonal(&Vector3::new(1.0, 0.8, 0.8)), Vector3::zeros()));
        assert!((s - 0.64).abs() < 1e-12);
        assert!(s < 0.7);
        let rot = crate::rotation::rotation_exp(&Vector3::new(0.3, 0.2, 0.1));
        assert!((unitarity_score(&BlochAffineMap::new(rot, Vector3::zeros())) - 1.0).abs() < 1e-12);
        let shifted = BlochAffineMap::new(rot, Vector3::new(0.0, 0.1, 0.0));
        assert!((unitarity_score(&shifted) - 0.9).abs() < 1e-12);
    }
}
