//! The delay (SWAP) channel probed in ordered and randomized fashion.

use nalgebra::Matrix3;

use crate::error::Result;
use crate::kv::{natural_value, naturals, reals, KeyValues};
use crate::qcore::{BlochAffineMap, Mat2, Povm, QubitState, TestEnsemble, TwoQubitUnitary};
use crate::report::{rotation_value, unitary_value};
use crate::rotation::{nearest_rotation, unitary_from_rotation};
use crate::simulator::{run_experiment, Dataset, ExperimentConfig, Interaction, Mode};
use crate::tomography::{reconstruct_single, tally, unitarity_score, FrequencyTable};

pub fn spectral_norm(m: &Matrix3<f64>) -> f64 {
    m.singular_values().max()
}

/// Tally of every step except the first of each ordered block.
pub fn block_interior_table(dataset: &Dataset, ensemble_size: usize, povm_size: usize, block_size: u64) -> Result<FrequencyTable> {
    // Validate ids once through the plain tally.
    tally(dataset, ensemble_size, povm_size)?;
    let mut table = FrequencyTable::zeros(ensemble_size, povm_size);
    for r in dataset.records.iter().filter(|r| r.step % block_size != 0) {
        table.increment(r.setting, r.outcome);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftAnalysis {
    /// Per setting `x`: TV between outcomes at step `j + 1` following `x` at
    /// step `j`, and `Tr(E_k ρ_x)`.
    pub tv: Vec<f64>,
    pub pairs: Vec<u64>,
    /// `3/√n` for an `n`-step dataset.
    pub bound: f64,
}

impl ShiftAnalysis {
    pub fn within_bound(&self) -> bool {
        self.tv.iter().all(|&d| d <= self.bound)
    }
}

/// Pairs each outcome with the previous step's input.
pub fn shift_by_one(dataset: &Dataset, ensemble: &TestEnsemble, povm: &Povm) -> Result<ShiftAnalysis> {
    tally(dataset, ensemble.len(), povm.len())?;
    let mut table = FrequencyTable::zeros(ensemble.len(), povm.len());
    for pair in dataset.records.windows(2) {
        table.increment(pair[0].setting, pair[1].outcome);
    }
    let tv = (0..ensemble.len())
        .map(|x| match table.row(x) {
            Some(row) => {
                0.5 * row
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (p - povm.probability(k, ensemble.state(x))).abs())
                    .sum::<f64>()
            }
            None => 1.0,
        })
        .collect();
    Ok(ShiftAnalysis {
        tv,
        pairs: (0..ensemble.len()).map(|x| table.n_setting(x)).collect(),
        bound: 3.0 / (dataset.len().max(1) as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSummary {
    pub channel: BlochAffineMap,
    pub unitarity_score: f64,
    /// Spectral norm of the linear part.
    pub linear_norm: f64,
    pub observed_unitary: Mat2,
    /// `‖R̂ − I‖_F` for the nearest rotation `R̂`.
    pub identity_deviation: f64,
    pub steps_used: u64,
}

fn summarize(table: &FrequencyTable, ensemble: &TestEnsemble, povm: &Povm) -> Result<ModeSummary> {
    let channel = reconstruct_single(table, ensemble, povm)?;
    let rotation = nearest_rotation(&channel.linear);
    Ok(ModeSummary {
        channel,
        unitarity_score: unitarity_score(&channel),
        linear_norm: spectral_norm(&channel.linear),
        observed_unitary: unitary_from_rotation(&rotation),
        identity_deviation: (rotation - Matrix3::identity()).norm(),
        steps_used: table.total(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayDemo {
    pub n_steps: u64,
    pub seed: u64,
    pub block_size: u64,
    pub random: ModeSummary,
    pub ordered: ModeSummary,
    pub shift: ShiftAnalysis,
}

/// Runs the SWAP interaction in random and ordered mode under one seed.
pub fn run_delay_demo(n_steps: u64, seed: u64, block_size: u64) -> Result<DelayDemo> {
    let random_cfg = ExperimentConfig::preset(Interaction::Unitary(TwoQubitUnitary::swap()), QubitState::maximally_mixed(), n_steps, seed);
    let ordered_cfg = ExperimentConfig {
        mode: Mode::Ordered { block_size },
        ..random_cfg.clone()
    };
    ordered_cfg.validate()?;
    let (e, p) = (&random_cfg.ensemble, &random_cfg.povm);
    let random_data = run_experiment(&random_cfg)?;
    let ordered_data = run_experiment(&ordered_cfg)?;
    Ok(DelayDemo {
        n_steps,
        seed,
        block_size,
        random: summarize(&tally(&random_data, e.len(), p.len())?, e, p)?,
        ordered: summarize(&block_interior_table(&ordered_data, e.len(), p.len(), block_size)?, e, p)?,
        shift: shift_by_one(&random_data, e, p)?,
    })
}

impl DelayDemo {
    pub fn random_is_maximal_noise(&self) -> bool {
        self.random.linear_norm <= 0.05
    }

    pub fn ordered_is_noiseless(&self) -> bool {
        self.ordered.unitarity_score >= 0.95
    }

    fn mode_report(kv: &mut KeyValues, prefix: &str, m: &ModeSummary) {
        kv.set(&format!("{prefix}.steps_used"), natural_value(m.steps_used));
        kv.set(&format!("{prefix}.linear"), rotation_value(&m.channel.linear));
        kv.set(&format!("{prefix}.translation"), reals(m.channel.translation.iter()));
        kv.set(&format!("{prefix}.linear_norm"), m.linear_norm);
        kv.set(&format!("{prefix}.unitarity_score"), m.unitarity_score);
        kv.set(&format!("{prefix}.observed_unitary"), unitary_value(&m.observed_unitary));
        kv.set(&format!("{prefix}.identity_deviation"), m.identity_deviation);
    }

    pub fn report(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("report.schema", "memchan-demo-delay v1");
        kv.set("run.n_steps", natural_value(self.n_steps));
        kv.set("run.seed", natural_value(self.seed));
        kv.set("run.block_size", natural_value(self.block_size));
        Self::mode_report(&mut kv, "random", &self.random);
        Self::mode_report(&mut kv, "ordered", &self.ordered);
        kv.set("shift.tv", reals(&self.shift.tv));
        kv.set("shift.pairs", naturals(self.shift.pairs.iter().copied()));
        kv.set("shift.bound", self.shift.bound);
        kv.set("verdict.random_maximal_noise", self.random_is_maximal_noise());
        kv.set("verdict.ordered_noiseless", self.ordered_is_noiseless());
        kv.set("verdict.shift_within_bound", self.shift.within_bound());
        kv
    }
}
