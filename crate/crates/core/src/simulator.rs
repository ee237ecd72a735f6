//! Collision-model experiment engine.
//!
//! Each step picks a test setting, lets the input collide with the memory
//! through the fixed interaction, samples a POVM outcome by the Born rule and
//! updates the memory by the corresponding instrument.
//!
//! Randomness comes from ChaCha8 seeded with `seed`: stream 0 drives the
//! setting choice and stream 1 the outcome sampling, so random and ordered
//! runs under one seed see the same outcome draws.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::cartan::CartanParams;
use crate::error::{Error, Result};
use crate::fixedpoint::{cesaro_average, fixed_points, memory_map};
use crate::qcore::{memory_channel, InstrumentTable, Povm, QubitState, TestEnsemble, TwoQubitUnitary, PROBABILITY_FLOOR};
use crate::tomography::{Observations, WeightedFrequencies};

pub const DATASET_MAGIC: &str = "#memchan-dataset v1";

pub const SETTINGS_STREAM: u64 = 0;
pub const OUTCOMES_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Interaction {
    Cartan(CartanParams),
    Unitary(TwoQubitUnitary),
}

impl Interaction {
    pub fn unitary(&self) -> TwoQubitUnitary {
        match self {
            Interaction::Cartan(p) => p.assemble(),
            Interaction::Unitary(u) => *u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Random,
    /// Contiguous blocks of `block_size` steps per setting, cycling through
    /// the ensemble in order.
    Ordered {
        block_size: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub interaction: Interaction,
    pub initial_memory: QubitState,
    pub ensemble: TestEnsemble,
    pub povm: Povm,
    pub n_steps: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Oracle-only: the experimenter never sees the memory.
    pub record_memory_trajectory: bool,
}

impl ExperimentConfig {
    /// Randomized run of the six Pauli eigenstates against the tetrahedral POVM.
    pub fn preset(interaction: Interaction, initial_memory: QubitState, n_steps: u64, seed: u64) -> Self {
        Self {
            interaction,
            initial_memory,
            ensemble: TestEnsemble::pauli6(),
            povm: Povm::tetrahedral(),
            n_steps,
            seed,
            mode: Mode::Random,
            record_memory_trajectory: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        if let Mode::Ordered { block_size: 0 } = self.mode {
            return Err(Error::InvalidConfig("block_size must be at least 1".into()));
        }
        if !self.initial_memory.is_physical(crate::qcore::DEFAULT_TOLERANCE) {
            return Err(Error::InvalidConfig("initial memory lies outside the Bloch ball".into()));
        }
        Ok(())
    }

    /// Deterministic text rendering of every field that affects the data.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let u = self.interaction.unitary();
        s.push_str("unitary");
        for z in u.matrix().iter() {
            let _ = write!(s, " {:?} {:?}", z.re, z.im);
        }
        let m = self.initial_memory.bloch();
        let _ = write!(s, "\nmemory {:?} {:?} {:?}\nensemble", m[0], m[1], m[2]);
        for (st, q) in self.ensemble.entries() {
            let b = st.bloch();
            let _ = write!(s, " {:?} {:?} {:?} {:?}", b[0], b[1], b[2], q);
        }
        s.push_str("\npovm");
        for e in self.povm.effects() {
            for z in e.iter() {
                let _ = write!(s, " {:?} {:?}", z.re, z.im);
            }
        }
        let mode = match self.mode {
            Mode::Random => "random".to_string(),
            Mode::Ordered { block_size } => format!("ordered {block_size}"),
        };
        let _ = write!(s, "\nrun {} {} {}\n", self.n_steps, self.seed, mode);
        s
    }

    /// First 16 bytes of SHA-256 over [`Self::canonical_text`], hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().take(16).fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub step: u64,
    pub setting: usize,
    pub outcome: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub fingerprint: String,
    /// Memory state before each step, when recorded.
    pub memory_trajectory: Option<Vec<QubitState>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{DATASET_MAGIC} {}", self.fingerprint)?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.step, r.setting, r.outcome)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::with_capacity(self.records.len() * 10 + 64);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dataset text is ASCII")
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let io_err = |line: usize, e: io::Error| Error::DatasetFormat { line, message: e.to_string() };
        let header = match lines.next() {
            Some(l) => l.map_err(|e| io_err(1, e))?,
            None => {
                return Err(Error::DatasetFormat {
                    line: 1,
                    message: "empty input".into(),
                })
            }
        };
        let fingerprint = header
            .strip_prefix(DATASET_MAGIC)
            .and_then(|rest| rest.strip_prefix(' '))
            .filter(|fp| !fp.is_empty() && !fp.contains(char::is_whitespace))
            .ok_or_else(|| Error::DatasetFormat {
                line: 1,
                message: format!("expected header `{DATASET_MAGIC} <fingerprint>`"),
            })?
            .to_string();

        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| io_err(lineno, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |message: String| Error::DatasetFormat { line: lineno, message };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            }
            let parse = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
            let step = parse(fields[0])?;
            let setting = parse(fields[1])? as usize;
            let outcome = parse(fields[2])? as usize;
            if step != records.len() as u64 {
                return Err(bad(format!("step {step} out of sequence")));
            }
            records.push(Record { step, setting, outcome });
        }
        Ok(Self {
            records,
            fingerprint,
            memory_trajectory: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one experiment; deterministic in `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let u = config.interaction.unitary();
    let table = InstrumentTable::new(&u, &config.ensemble, &config.povm);
    let n_settings = config.ensemble.len();
    let n_outcomes = config.povm.len();
    let cumulative: Vec<f64> = config
        .ensemble
        .entries()
        .iter()
        .scan(0.0, |acc, (_, q)| {
            *acc += q;
            Some(*acc)
        })
        .collect();

    let mut settings_rng = stream_rng(config.seed, SETTINGS_STREAM);
    let mut outcomes_rng = stream_rng(config.seed, OUTCOMES_STREAM);
    let mut memory = config.initial_memory.bloch();
    let mut records = Vec::with_capacity(config.n_steps as usize);
    let mut trajectory = config.record_memory_trajectory.then(|| Vec::with_capacity(config.n_steps as usize));
    let mut probs = vec![0.0; n_outcomes];

    for step in 0..config.n_steps {
        let setting = match config.mode {
            Mode::Random => {
                let u: f64 = settings_rng.random::<f64>() * cumulative[n_settings - 1];
                cumulative.iter().position(|&c| u < c).unwrap_or(n_settings - 1)
            }
            Mode::Ordered { block_size } => ((step / block_size) % n_settings as u64) as usize,
        };
        if let Some(t) = trajectory.as_mut() {
            t.push(QubitState::from_bloch(memory));
        }

        let mut total = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = table.probability(setting, k, &memory).max(0.0);
            total += *p;
        }
        let draw: f64 = outcomes_rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut outcome = n_outcomes - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                outcome = k;
                break;
            }
        }
        let p = probs[outcome];
        if p < PROBABILITY_FLOOR {
            return Err(Error::ZeroProbabilityBranch { step, outcome, probability: p });
        }
        memory = table.update(setting, outcome, &memory, p);
        records.push(Record { step, setting, outcome });
    }

    Ok(Dataset {
        records,
        fingerprint: config.fingerprint(),
        memory_trajectory: trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactStatistics {
    /// Average memory state.
    pub xi_bar: QubitState,
    /// `probs[x][k] = Tr[U (ξ̄ ⊗ ρ_x) U† (I ⊗ E_k)]`.
    pub probs: Vec<Vec<f64>>,
    /// Set when the memory map has several fixed points, so `xi_bar` is the
    /// time average reached from the given initial memory.
    pub initial_state_dependent: bool,
}

/// Infinite-data limit of the randomized-setting statistics.
pub fn exact_statistics(u: &TwoQubitUnitary, initial_memory: &QubitState, ensemble: &TestEnsemble, povm: &Povm, horizon: usize) -> ExactStatistics {
    let map = memory_map(u, ensemble);
    let (xi_bar, dependent) = match fixed_points(&map) {
        Ok(report) if report.unique => (report.fixed_point, false),
        _ => (cesaro_average(&map, initial_memory, horizon), true),
    };
    let table = InstrumentTable::new(u, ensemble, povm);
    ExactStatistics {
        xi_bar,
        probs: outcome_table(&table, ensemble.len(), povm.len(), &xi_bar),
        initial_state_dependent: dependent,
    }
}

fn outcome_table(table: &InstrumentTable, settings: usize, outcomes: usize, memory: &QubitState) -> Vec<Vec<f64>> {
    (0..settings)
        .map(|x| (0..outcomes).map(|k| table.probability(x, k, &memory.bloch())).collect())
        .collect()
}

/// Exact `p(k | x at step j+1, conditioning setting at step j)`, with the
/// step-j outcome marginalized and memory `xi_bar` before step j.
pub fn exact_conditional_statistics(u: &TwoQubitUnitary, xi_bar: &QubitState, ensemble: &TestEnsemble, povm: &Povm, conditioning: usize) -> Vec<Vec<f64>> {
    let after = memory_channel(u, ensemble.state(conditioning)).apply_state(xi_bar);
    let table = InstrumentTable::new(u, ensemble, povm);
    outcome_table(&table, ensemble.len(), povm.len(), &after)
}

/// Exact single-step and conditional statistics for every setting, in the
/// form the estimation pipeline consumes.
pub fn exact_observations(u: &TwoQubitUnitary, initial_memory: &QubitState, ensemble: &TestEnsemble, povm: &Povm, horizon: usize) -> Observations {
    let stats = exact_statistics(u, initial_memory, ensemble, povm, horizon);
    let weights: Vec<f64> = ensemble.entries().iter().map(|(_, q)| *q).collect();
    let conditional = (0..ensemble.len())
        .map(|c| {
            let probs = exact_conditional_statistics(u, &stats.xi_bar, ensemble, povm, c);
            let w: Vec<f64> = weights.iter().map(|q| q * ensemble.weight(c)).collect();
            (c, WeightedFrequencies::new(w, probs))
        })
        .collect();
    Observations {
        single: WeightedFrequencies::new(weights, stats.probs),
        conditional,
        sample_size: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(interaction: Interaction, n: u64, seed: u64) -> ExperimentConfig {
        ExperimentConfig::preset(interaction, QubitState::new(0.0, 0.3, 0.4), n, seed)
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = small_config(Interaction::Unitary(TwoQubitUnitary::controlled_not()), 2000, 42);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        let other = run_experiment(&ExperimentConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn fingerprint_tracks_config() {
        let cfg = small_config(Interaction::Unitary(TwoQubitUnitary::swap()), 10, 1);
        assert_eq!(cfg.fingerprint().len(), 32);
        assert_ne!(cfg.fingerprint(), ExperimentConfig { seed: 2, ..cfg.clone() }.fingerprint());
        assert_ne!(
            cfg.fingerprint(),
            ExperimentConfig {
                mode: Mode::Ordered { block_size: 5 },
                ..cfg.clone()
            }
            .fingerprint()
        );
    }

    #[test]
    fn dataset_text_round_trip() {
        let cfg = small_config(Interaction::Unitary(TwoQubitUnitary::swap()), 50, 7);
        let d = run_experiment(&cfg).unwrap();
        let text = d.to_text();
        assert!(text.starts_with(&format!("{DATASET_MAGIC} {}\n0,", cfg.fingerprint())));
        let back = Dataset::parse(&text).unwrap();
        assert_eq!(back.records, d.records);
        assert_eq!(back.fingerprint, d.fingerprint);
    }

    #[test]
    fn dataset_parse_errors() {
        assert!(Dataset::parse("").is_err());
        assert!(Dataset::parse("#memchan-dataset v2 abc\n").is_err());
        assert!(matches!(
            Dataset::parse("#memchan-dataset v1 abc\n0,1\n"),
            Err(Error::DatasetFormat { line: 2, .. })
        ));
        assert!(Dataset::parse("#memchan-dataset v1 abc\n1,0,0\n").is_err());
        assert!(Dataset::parse("#memchan-dataset v1 abc\n0,x,0\n").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = small_config(Interaction::Unitary(TwoQubitUnitary::swap()), 0, 1);
        assert!(run_experiment(&cfg).is_err());
        let cfg = ExperimentConfig {
            n_steps: 5,
            mode: Mode::Ordered { block_size: 0 },
            ..cfg
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn identity_interaction_keeps_memory_constant() {
        let mut cfg = small_config(Interaction::Unitary(TwoQubitUnitary::identity()), 200, 3);
        cfg.record_memory_trajectory = true;
        let d = run_experiment(&cfg).unwrap();
        let traj = d.memory_trajectory.unwrap();
        assert_eq!(traj.len(), 200);
        assert!(traj.iter().all(|s| (s.bloch() - cfg.initial_memory.bloch()).norm() < 1e-12));
    }

    #[test]
    fn trajectory_is_opt_in() {
        let d = run_experiment(&small_config(Interaction::Unitary(TwoQubitUnitary::identity()), 10, 3)).unwrap();
        assert!(d.memory_trajectory.is_none());
    }

    #[test]
    fn ordered_mode_cycles_blocks() {
        let cfg = ExperimentConfig {
            mode: Mode::Ordered { block_size: 3 },
            ..small_config(Interaction::Unitary(TwoQubitUnitary::swap()), 40, 1)
        };
        let d = run_experiment(&cfg).unwrap();
        let settings: Vec<usize> = d.records.iter().map(|r| r.setting).collect();
        assert_eq!(&settings[..9], &[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(settings[18], 0);
        assert_eq!(settings[39], 1);
    }

    #[test]
    fn exact_statistics_memoryless() {
        let v = crate::rotation::unitary_from_rotation_vector(&nalgebra::Vector3::new(0.4, 0.1, -0.7));
        let u = TwoQubitUnitary::local(&crate::qcore::identity2(), &v);
        let e = TestEnsemble::pauli6();
        let povm = Povm::tetrahedral();
        let xi0 = QubitState::new(0.1, 0.2, 0.3);
        let stats = exact_statistics(&u, &xi0, &e, &povm, 1000);
        assert!(stats.initial_state_dependent);
        assert!((stats.xi_bar.bloch() - xi0.bloch()).norm() < 1e-12);
        for x in 0..e.len() {
            let out = e.state(x).conjugated(&v);
            for k in 0..povm.len() {
                assert!((stats.probs[x][k] - povm.probability(k, &out)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn exact_statistics_generic_is_unital() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = CartanParams::random_regular(&mut rng, 0.1);
        let stats = exact_statistics(
            &p.assemble(),
            &QubitState::new(0.0, 0.0, 1.0),
            &TestEnsemble::pauli6(),
            &Povm::tetrahedral(),
            1000,
        );
        assert!(!stats.initial_state_dependent);
        assert!(stats.xi_bar.bloch().norm() < 1e-12);
        for row in &stats.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_statistics_controlled_not_from_ground_state() {
        let zero = QubitState::new(0.0, 0.0, 1.0);
        let e = TestEnsemble::pauli6();
        let povm = Povm::tetrahedral();
        let stats = exact_statistics(&TwoQubitUnitary::controlled_not(), &zero, &e, &povm, 1000);
        assert!(stats.initial_state_dependent);
        assert!((stats.xi_bar.bloch() - zero.bloch()).norm() < 1e-12);
        for x in 0..e.len() {
            for k in 0..povm.len() {
                assert!((stats.probs[x][k] - povm.probability(k, e.state(x))).abs() < 1e-13);
            }
        }
        // Sampled agreement over 10⁴ steps: diagonal memory stays |0⟩.
        let mut cfg = small_config(Interaction::Unitary(TwoQubitUnitary::controlled_not()), 10_000, 5);
        cfg.initial_memory = zero;
        cfg.record_memory_trajectory = true;
        let d = run_experiment(&cfg).unwrap();
        assert!(d.memory_trajectory.unwrap().iter().all(|s| (s.bloch() - zero.bloch()).norm() < 1e-12));
    }

    #[test]
    fn swap_delays_inputs_by_one_step() {
        let mut cfg = small_config(Interaction::Unitary(TwoQubitUnitary::swap()), 100, 8);
        cfg.record_memory_trajectory = true;
        let d = run_experiment(&cfg).unwrap();
        let traj = d.memory_trajectory.unwrap();
        for (state, prev) in traj[1..].iter().zip(&d.records) {
            assert!((state.bloch() - cfg.ensemble.state(prev.setting).bloch()).norm() < 1e-12);
        }
    }

    #[test]
    fn impossible_outcomes_are_never_sampled() {
        let povm = Povm::new(vec![QubitState::new(0.0, 0.0, 1.0).density(), QubitState::new(0.0, 0.0, -1.0).density()]).unwrap();
        let cfg = ExperimentConfig {
            povm,
            ensemble: TestEnsemble::new(vec![(QubitState::new(0.0, 0.0, 1.0), 1.0)]).unwrap(),
            ..small_config(Interaction::Unitary(TwoQubitUnitary::identity()), 500, 4)
        };
        let d = run_experiment(&cfg).unwrap();
        assert!(d.records.iter().all(|r| r.outcome == 0));
    }
}
