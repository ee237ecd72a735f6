use memchan::cartan::{gauge_distance, random_su2, CartanParams, REGULAR_MARGIN};
use memchan::qcore::{InstrumentTable, Povm, QubitState, TestEnsemble, TwoQubitUnitary};
use memchan::recovery::{estimate_interaction, Branch, Thresholds};
use memchan::simulator::{exact_conditional_statistics, exact_statistics, run_experiment, ExperimentConfig, Interaction};
use memchan::tomography::{reconstruct_single, tally, tally_all_conditional, FrequencyTable};
use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn regular(seed: u64) -> TwoQubitUnitary {
    CartanParams::random_regular(&mut ChaCha8Rng::seed_from_u64(seed), REGULAR_MARGIN).assemble()
}

fn config(u: TwoQubitUnitary, memory: QubitState, n: u64, seed: u64) -> ExperimentConfig {
    ExperimentConfig::preset(Interaction::Unitary(u), memory, n, seed)
}

fn generic_estimate(cfg: &ExperimentConfig) -> TwoQubitUnitary {
    let d = run_experiment(cfg).unwrap();
    let r = estimate_interaction(&d, &cfg.ensemble, &cfg.povm, &Thresholds::sampled(cfg.n_steps)).unwrap();
    match r.branch {
        Branch::Generic(g) => g.params.assemble(),
        Branch::Controlled(_) => panic!("generic branch expected"),
    }
}

#[test]
fn estimates_are_invariant_under_a_memory_side_gauge() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for instance in 0..3 {
        let u = regular(instance);
        let v = random_su2(&mut rng);
        let xi = QubitState::new(0.2, -0.4, 0.5);
        let a = generic_estimate(&config(u, xi, 100_000, 9));
        let b = generic_estimate(&config(u.memory_conjugated(&v), xi.conjugated(&v), 100_000, 9));
        assert!(gauge_distance(&a, &b) <= 1e-6, "instance {instance}: {}", gauge_distance(&a, &b));
        assert!(gauge_distance(&a, &u) <= 0.2);
    }
}

#[test]
fn earlier_outcomes_ignore_later_settings() {
    let u = regular(4);
    let e = TestEnsemble::pauli6();
    let p = Povm::tetrahedral();
    let table = InstrumentTable::new(&u, &e, &p);
    let m0 = Vector3::new(0.1, 0.3, -0.2);
    let joint = |settings: &[usize], outcomes: &[usize]| {
        let mut v = Vector4::new(1.0, m0[0], m0[1], m0[2]);
        for (&x, &k) in settings.iter().zip(outcomes) {
            v = table.transfer(x, k) * v;
        }
        v[0]
    };
    let prefix = [2usize, 0, 5];
    for code in 0..64usize {
        let ks = [code % 4, (code / 4) % 4, code / 16];
        let marginal = joint(&prefix, &ks);
        for next in 0..e.len() {
            let settings = [prefix[0], prefix[1], prefix[2], next];
            let summed: f64 = (0..p.len()).map(|k| joint(&settings, &[ks[0], ks[1], ks[2], k])).sum();
            assert!((summed - marginal).abs() <= 1e-14);
        }
    }

    // Simulated runs of different length share their common prefix.
    let long = run_experiment(&config(u, QubitState::maximally_mixed(), 5_000, 3)).unwrap();
    let short = run_experiment(&config(u, QubitState::maximally_mixed(), 1_000, 3)).unwrap();
    assert_eq!(short.records[..], long.records[..1_000]);
}

#[test]
fn conditioning_aggregates_to_the_single_use_statistics() {
    let u = regular(6);
    let e = TestEnsemble::pauli6();
    let p = Povm::tetrahedral();
    let stats = exact_statistics(&u, &QubitState::maximally_mixed(), &e, &p, 1_000);
    let mut aggregate = vec![vec![0.0; p.len()]; e.len()];
    for c in 0..e.len() {
        let cond = exact_conditional_statistics(&u, &stats.xi_bar, &e, &p, c);
        for (row, crow) in aggregate.iter_mut().zip(&cond) {
            for (a, b) in row.iter_mut().zip(crow) {
                *a += e.weight(c) * b;
            }
        }
    }
    for (row, exact) in aggregate.iter().zip(&stats.probs) {
        for (a, b) in row.iter().zip(exact) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    let d = run_experiment(&config(u, QubitState::maximally_mixed(), 200_000, 1)).unwrap();
    let mut merged = FrequencyTable::zeros(e.len(), p.len());
    for t in tally_all_conditional(&d, e.len(), p.len()).unwrap() {
        merged.merge(&t);
    }
    let single = reconstruct_single(&tally(&d, e.len(), p.len()).unwrap(), &e, &p).unwrap();
    let aggregated = reconstruct_single(&merged, &e, &p).unwrap();
    assert!(single.distance(&aggregated) <= 0.01, "{}", single.distance(&aggregated));
}

#[test]
fn controlled_interactions_take_the_controlled_branch() {
    for u in [TwoQubitUnitary::controlled_not(), TwoQubitUnitary::controlled_z()] {
        let cfg = config(u, QubitState::maximally_mixed(), 50_000, 5);
        let d = run_experiment(&cfg).unwrap();
        let r = estimate_interaction(&d, &cfg.ensemble, &cfg.povm, &Thresholds::sampled(cfg.n_steps)).unwrap();
        assert!(r.controlled().is_some());
    }
}
