use std::collections::BTreeMap;

use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qdd_core::circuit::{validate, Gate};
use qdd_core::datagen::{
    build_dataset, dataset_circuit, random_circuit, recycle_dataset, write_records, DatasetSpec, MfMode, TargetedSet,
};
use qdd_core::simulator::HamiltonianSpec;
use qdd_core::vqe::VqeConfig;

fn specs() -> Vec<DatasetSpec> {
    vec![
        DatasetSpec::a_s(0),
        DatasetSpec::b_s(0),
        DatasetSpec::c_s(0),
        TargetedSet::RyCnot.spec(0),
        TargetedSet::XyY.spec(0),
    ]
}

fn quick() -> VqeConfig {
    VqeConfig {
        max_iterations: 80,
        ..VqeConfig::default()
    }
}

#[test]
fn thousand_draws_at_four_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for spec in specs() {
        let spec = DatasetSpec { mf_mode: MfMode::None, ..spec };
        for _ in 0..1000 {
            let c = random_circuit(&spec, 4, &mut rng).unwrap();
            assert_eq!(c.moment_count(), 4, "{}", c.serialize());
            assert!(validate(&c, &spec.gate_pool).is_empty());
        }
    }
}

#[test]
fn ry_cnot_pairs_are_adjacent() {
    let spec = TargetedSet::RyCnot.spec(9);
    for i in 0..300 {
        let c = dataset_circuit(&spec, i).unwrap();
        for g in c.gates().iter().filter(|g| g.gate == Gate::CNOT) {
            assert_eq!(g.target.abs_diff(g.control.unwrap()), 1);
        }
    }
}

proptest! {
    #[test]
    fn dataset_circuits_validate_and_cycle_moments(k in 0usize..5, seed: u64, i in 0usize..5000) {
        let spec = DatasetSpec { seed, ..specs()[k].clone() };
        let c = dataset_circuit(&spec, i).unwrap();
        prop_assert!(validate(&c, &spec.gate_pool).is_empty());
        let m = spec.moment_range[i % spec.moment_range.len()];
        let prefix = if spec.mf_mode == MfMode::None { 0 } else { 1 };
        prop_assert_eq!(c.moment_count(), m + prefix);
    }
}

#[test]
fn moment_counts_differ_by_at_most_one() {
    for spec in specs() {
        for size in [7, 23, 500] {
            let spec = DatasetSpec { size, ..spec.clone() };
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for i in 0..spec.size {
                *counts.entry(spec.moment_range[i % spec.moment_range.len()]).or_default() += 1;
            }
            let lo = spec.moment_range.iter().map(|m| counts.get(m).copied().unwrap_or(0)).min().unwrap();
            let hi = counts.values().copied().max().unwrap();
            assert!(hi - lo <= 1);
        }
    }
}

#[test]
fn datasets_are_byte_identical_and_above_ground() {
    let h = HamiltonianSpec::benchmark();
    let spec = DatasetSpec::b_s(17).scaled(0.004);
    let bytes = |recs: &[_]| {
        let mut v = Vec::new();
        write_records(&mut v, recs).unwrap();
        v
    };
    let a = build_dataset(&spec, &h, &quick()).unwrap();
    let b = build_dataset(&spec, &h, &quick()).unwrap();
    assert_eq!(a.len(), 20);
    assert_eq!(bytes(&a), bytes(&b));
    assert!(a.iter().all(|r| r.energy >= -7.296231));
    // The relaxed layer alone reaches the mean field, so labels sit near or below it.
    assert!(a.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min) <= -6.85);

    let recycled = recycle_dataset(&a, MfMode::Relaxed, &h, &quick(), "again").unwrap();
    for (x, y) in a.iter().zip(&recycled) {
        assert_eq!(x.circuit, y.circuit);
        assert!((x.energy - y.energy).abs() < 1e-9);
    }
    let fixed = recycle_dataset(&a, MfMode::Fixed, &h, &quick(), "fixed").unwrap();
    assert!(fixed.iter().all(|r| r.circuit.starts_with("RY=0=nop=0.87")));
}
