//! Run configuration: shipped presets and the flat `key = value` schema.
//!
//! Values use TOML syntax: strings are quoted, lists are arrays.
//!
//! | key | value |
//! |-----|-------|
//! | `preset` | `identity`, `delay-swap`, `controlled-not`, `controlled-z`, `random-regular` |
//! | `interaction.alpha` | array of three angles |
//! | `interaction.local.w2`, `.v2`, `.v1` | rotation vectors of the locals (default 0) |
//! | `interaction.unitary` | array of 32 reals, row-major `re, im` pairs |
//! | `interaction.random_seed` | instance seed for `random-regular` (default 0) |
//! | `memory.bloch` | initial memory Bloch vector (default `[0, 0, 0]`) |
//! | `ensemble.preset` | `pauli6` (default) or `tetrahedral` |
//! | `ensemble.explicit` | rows `[x, y, z, q]` |
//! | `povm.preset` | `tetrahedral` (default) or `pauli6` |
//! | `povm.explicit` | rows `[a, bx, by, bz]` for `E = ½(a I + b⃗·σ⃗)` |
//! | `run.n_steps`, `run.seed` | defaults 100000 and 0 |
//! | `run.mode` | `random` (default) or `ordered` |
//! | `run.block_size` | ordered-mode block length (default 100) |
//! | `run.record_memory` | `true` or `false` (default) |
//! | `thresholds.*` | `unitary`, `t_unital_tol`, `det_tol`, `degenerate_tol`, `s_min`, `m_min`, `min_pairs` |
//! | `sweep.n_steps` | array of run lengths (default `[10000, 100000, 1000000]`) |
//! | `sweep.seeds` | seeds per run length, counted from `run.seed` (default 20) |
//! | `oracle.horizon` | averaging horizon when the fixed point is not unique (default 10000) |

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cartan::{CartanParams, REGULAR_MARGIN};
use crate::error::{Error, Result};
use crate::kv::{field_error, natural_value, KeyValues};
use crate::qcore::{c, Mat4, Povm, QubitState, TestEnsemble, TwoQubitUnitary};
use crate::recovery::Thresholds;
use crate::rotation::unitary_from_rotation_vector;
use crate::simulator::{ExperimentConfig, Interaction, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Identity,
    DelaySwap,
    ControlledNot,
    ControlledZ,
    RandomRegular,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Identity,
        Preset::DelaySwap,
        Preset::ControlledNot,
        Preset::ControlledZ,
        Preset::RandomRegular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Identity => "identity",
            Preset::DelaySwap => "delay-swap",
            Preset::ControlledNot => "controlled-not",
            Preset::ControlledZ => "controlled-z",
            Preset::RandomRegular => "random-regular",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
            field_error("preset", format!("unknown preset `{name}` (expected one of {})", names.join(", ")))
        })
    }

    /// Interaction of this preset; `instance_seed` only affects `random-regular`.
    pub fn interaction(self, instance_seed: u64) -> Interaction {
        match self {
            Preset::Identity => Interaction::Unitary(TwoQubitUnitary::identity()),
            Preset::DelaySwap => Interaction::Unitary(TwoQubitUnitary::swap()),
            Preset::ControlledNot => Interaction::Unitary(TwoQubitUnitary::controlled_not()),
            Preset::ControlledZ => Interaction::Unitary(TwoQubitUnitary::controlled_z()),
            Preset::RandomRegular => {
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
                Interaction::Cartan(CartanParams::random_regular(&mut rng, REGULAR_MARGIN))
            }
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "preset",
    "interaction.alpha",
    "interaction.local.w2",
    "interaction.local.v2",
    "interaction.local.v1",
    "interaction.unitary",
    "interaction.random_seed",
    "memory.bloch",
    "ensemble.preset",
    "ensemble.explicit",
    "povm.preset",
    "povm.explicit",
    "run.n_steps",
    "run.seed",
    "run.mode",
    "run.block_size",
    "run.record_memory",
    "thresholds.unitary",
    "thresholds.t_unital_tol",
    "thresholds.det_tol",
    "thresholds.degenerate_tol",
    "thresholds.s_min",
    "thresholds.m_min",
    "thresholds.min_pairs",
    "sweep.n_steps",
    "sweep.seeds",
    "oracle.horizon",
];

/// Per-field replacements for the default [`Thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThresholdOverrides {
    pub unitary: Option<f64>,
    pub t_unital_tol: Option<f64>,
    pub det_tol: Option<f64>,
    pub degenerate_tol: Option<f64>,
    pub s_min: Option<f64>,
    pub m_min: Option<f64>,
    pub min_pairs: Option<u64>,
}

impl ThresholdOverrides {
    fn from_kv(kv: &KeyValues) -> Result<Self> {
        Ok(Self {
            unitary: kv.get_f64("thresholds.unitary")?,
            t_unital_tol: kv.get_f64("thresholds.t_unital_tol")?,
            det_tol: kv.get_f64("thresholds.det_tol")?,
            degenerate_tol: kv.get_f64("thresholds.degenerate_tol")?,
            s_min: kv.get_f64("thresholds.s_min")?,
            m_min: kv.get_f64("thresholds.m_min")?,
            min_pairs: kv.get_u64("thresholds.min_pairs")?,
        })
    }

    pub fn apply(&self, mut t: Thresholds) -> Thresholds {
        t.unitary = self.unitary.unwrap_or(t.unitary);
        t.t_unital_tol = self.t_unital_tol.unwrap_or(t.t_unital_tol);
        t.det_tol = self.det_tol.unwrap_or(t.det_tol);
        t.degenerate_tol = self.degenerate_tol.unwrap_or(t.degenerate_tol);
        t.s_min = self.s_min.unwrap_or(t.s_min);
        t.m_min = self.m_min.unwrap_or(t.m_min);
        t.min_pairs = self.min_pairs.unwrap_or(t.min_pairs);
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub preset: Option<Preset>,
    pub thresholds: ThresholdOverrides,
    pub sweep_n_steps: Vec<u64>,
    pub sweep_seeds: u64,
    pub oracle_horizon: usize,
    source: KeyValues,
}

fn vector3(kv: &KeyValues, key: &str) -> Result<Option<Vector3<f64>>> {
    Ok(kv.get_reals(key, Some(3))?.map(|v| Vector3::new(v[0], v[1], v[2])))
}

fn interaction(kv: &KeyValues, preset: Option<Preset>) -> Result<Interaction> {
    let explicit = [
        "interaction.alpha",
        "interaction.local.w2",
        "interaction.local.v2",
        "interaction.local.v1",
        "interaction.unitary",
    ];
    let given: Vec<&str> = explicit.iter().copied().filter(|k| kv.contains(k)).collect();
    if let Some(p) = preset {
        if let Some(k) = given.first() {
            return Err(field_error(k, format!("conflicts with preset `{}`", p.name())));
        }
        if p != Preset::RandomRegular && kv.contains("interaction.random_seed") {
            return Err(field_error("interaction.random_seed", "only used by the random-regular preset"));
        }
        return Ok(p.interaction(kv.get_u64("interaction.random_seed")?.unwrap_or(0)));
    }
    if kv.contains("interaction.random_seed") {
        return Err(field_error("interaction.random_seed", "only used by the random-regular preset"));
    }
    if let Some(values) = kv.get_reals("interaction.unitary", Some(32))? {
        if given.len() > 1 {
            return Err(field_error(
                "interaction.unitary",
                "cannot be combined with interaction.alpha or interaction.local.*",
            ));
        }
        let m = Mat4::from_fn(|i, j| {
            let o = 2 * (4 * i + j);
            c(values[o], values[o + 1])
        });
        return TwoQubitUnitary::new(m)
            .map(Interaction::Unitary)
            .map_err(|e| field_error("interaction.unitary", e));
    }
    let Some(alpha) = vector3(kv, "interaction.alpha")? else {
        if let Some(k) = given.first() {
            return Err(field_error(k, "requires interaction.alpha"));
        }
        return Err(field_error("interaction", "no preset, interaction.alpha or interaction.unitary given"));
    };
    let local = |key: &str| -> Result<_> { Ok(unitary_from_rotation_vector(&vector3(kv, key)?.unwrap_or_else(Vector3::zeros))) };
    let params = CartanParams::new(
        local("interaction.local.w2")?,
        local("interaction.local.v2")?,
        alpha,
        local("interaction.local.v1")?,
    )?;
    Ok(Interaction::Cartan(params))
}

fn ensemble(kv: &KeyValues) -> Result<TestEnsemble> {
    if let Some(rows) = kv.get_rows("ensemble.explicit", 4)? {
        if kv.contains("ensemble.preset") {
            return Err(field_error("ensemble.explicit", "conflicts with ensemble.preset"));
        }
        let entries = rows.iter().map(|r| (QubitState::new(r[0], r[1], r[2]), r[3])).collect();
        return TestEnsemble::new(entries).map_err(|e| field_error("ensemble.explicit", e));
    }
    match kv.get_str("ensemble.preset")?.unwrap_or("pauli6") {
        "pauli6" => Ok(TestEnsemble::pauli6()),
        "tetrahedral" => {
            let s = 1.0 / 3f64.sqrt();
            let dirs = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
            TestEnsemble::new(dirs.iter().map(|d| (QubitState::new(d[0], d[1], d[2]), 0.25)).collect())
        }
        other => Err(field_error(
            "ensemble.preset",
            format!("unknown ensemble `{other}` (expected pauli6 or tetrahedral)"),
        )),
    }
}

fn povm(kv: &KeyValues) -> Result<Povm> {
    if let Some(rows) = kv.get_rows("povm.explicit", 4)? {
        if kv.contains("povm.preset") {
            return Err(field_error("povm.explicit", "conflicts with povm.preset"));
        }
        let rows: Vec<[f64; 4]> = rows.iter().map(|r| [r[0], r[1], r[2], r[3]]).collect();
        return Povm::from_pauli_coefficients(&rows).map_err(|e| field_error("povm.explicit", e));
    }
    match kv.get_str("povm.preset")?.unwrap_or("tetrahedral") {
        "tetrahedral" => Ok(Povm::tetrahedral()),
        "pauli6" => {
            let third = 1.0 / 3.0;
            let mut rows = Vec::new();
            for j in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut row = [third, 0.0, 0.0, 0.0];
                    row[j + 1] = sign * third;
                    rows.push(row);
                }
            }
            Povm::from_pauli_coefficients(&rows)
        }
        other => Err(field_error("povm.preset", format!("unknown POVM `{other}` (expected tetrahedral or pauli6)"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KeyValues::parse(text)?)
    }

    pub fn from_preset(preset: Preset) -> Self {
        let mut kv = KeyValues::new();
        kv.set("preset", preset.name());
        Self::from_kv(kv).expect("bare presets are valid")
    }

    pub fn from_kv(kv: KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(field_error(k, "unknown key"));
        }
        let preset = kv.get_str("preset")?.map(Preset::parse).transpose()?;
        let interaction = interaction(&kv, preset)?;
        let memory = vector3(&kv, "memory.bloch")?.unwrap_or_else(Vector3::zeros);
        let mode = match kv.get_str("run.mode")?.unwrap_or("random") {
            "random" => {
                if kv.contains("run.block_size") {
                    return Err(field_error("run.block_size", "only used with run.mode = ordered"));
                }
                Mode::Random
            }
            "ordered" => Mode::Ordered {
                block_size: kv.get_u64("run.block_size")?.unwrap_or(100),
            },
            other => return Err(field_error("run.mode", format!("expected random or ordered, found `{other}`"))),
        };
        let experiment = ExperimentConfig {
            interaction,
            initial_memory: QubitState::from_bloch(memory),
            ensemble: ensemble(&kv)?,
            povm: povm(&kv)?,
            n_steps: kv.get_u64("run.n_steps")?.unwrap_or(100_000),
            seed: kv.get_u64("run.seed")?.unwrap_or(0),
            mode,
            record_memory_trajectory: kv.get_bool("run.record_memory")?.unwrap_or(false),
        };
        experiment.validate().map_err(|e| match e {
            Error::InvalidConfig(msg) if msg.contains("n_steps") => field_error("run.n_steps", msg),
            Error::InvalidConfig(msg) if msg.contains("block_size") => field_error("run.block_size", msg),
            Error::InvalidConfig(msg) if msg.contains("memory") => field_error("memory.bloch", msg),
            other => other,
        })?;

        let sweep_n_steps = kv.get_naturals("sweep.n_steps")?.unwrap_or_else(|| vec![10_000, 100_000, 1_000_000]);
        if sweep_n_steps.contains(&0) {
            return Err(field_error("sweep.n_steps", "run lengths must be at least 1"));
        }
        if sweep_n_steps.is_empty() {
            return Err(field_error("sweep.n_steps", "needs at least one run length"));
        }
        let sweep_seeds = kv.get_u64("sweep.seeds")?.unwrap_or(20);
        if sweep_seeds == 0 {
            return Err(field_error("sweep.seeds", "must be at least 1"));
        }
        let oracle_horizon = kv.get_u64("oracle.horizon")?.unwrap_or(10_000) as usize;
        Ok(Self {
            experiment,
            preset,
            thresholds: ThresholdOverrides::from_kv(&kv)?,
            sweep_n_steps,
            sweep_seeds,
            oracle_horizon: oracle_horizon.max(1),
            source: kv,
        })
    }

    /// Same configuration with the run seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut kv = self.source.clone();
        kv.set("run.seed", natural_value(seed));
        let mut out = self.clone();
        out.experiment.seed = seed;
        out.source = kv;
        out
    }

    /// Same configuration with the run length replaced.
    pub fn with_n_steps(&self, n_steps: u64) -> Result<Self> {
        let mut kv = self.source.clone();
        kv.set("run.n_steps", natural_value(n_steps));
        Self::from_kv(kv)
    }

    /// Thresholds for exact input (`None`) or an `n`-step dataset.
    pub fn thresholds_for(&self, sample_size: Option<u64>) -> Thresholds {
        self.thresholds.apply(sample_size.map_or_else(Thresholds::exact, Thresholds::sampled))
    }

    /// The configuration as given, with overrides applied.
    pub fn source(&self) -> &KeyValues {
        &self.source
    }

    pub fn render(&self) -> String {
        self.source.render()
    }
}
