mod common;

use std::collections::{BTreeMap, BTreeSet};

use bytetr_core::abi::AbiSpec;
use bytetr_core::dataflow::{build_def_use, insert_dummy_defs, reaching_definitions};
use common::*;
use proptest::prelude::*;

fn check_reaching(seed: u64) {
    let abi = AbiSpec::sysv_x86_64();
    let f = insert_dummy_defs(&random_function(seed, "f", &GenConfig::default()), &abi);
    let rd = reaching_definitions(&f, &abi);
    for ((block, at), want) in oracle_reaching(&f, &abi) {
        let got = flatten_state(
            rd.before(&block, at)
                .or_else(|| rd.block_exit(&block))
                .unwrap(),
        );
        assert_eq!(got, want, "seed {seed}: point {block}:{at}");
    }
}

fn check_def_use(seed: u64) {
    let abi = AbiSpec::sysv_x86_64();
    let cfg = GenConfig {
        acyclic: true,
        ..GenConfig::default()
    };
    let f = insert_dummy_defs(&random_function(seed, "f", &cfg), &abi);
    let rd = reaching_definitions(&f, &abi);
    let du = build_def_use(&f, &rd);
    let want = oracle_def_use(&f, &abi);
    let got: BTreeMap<_, _> = du
        .uses
        .iter()
        .filter(|(_, u)| !u.is_empty())
        .map(|(d, u)| {
            (
                (d.block.clone(), d.index, d.key.text().to_string()),
                flatten_uses(u),
            )
        })
        .collect();
    assert_eq!(got, want, "seed {seed}");

    for d in du.uses.keys() {
        let root = (d.block.clone(), d.index, d.key.text().to_string());
        let chain: BTreeSet<_> = du
            .chain(d)
            .edges
            .iter()
            .map(|(a, u)| {
                (
                    (a.block.clone(), a.index, a.key.text().to_string()),
                    flatten_uses(&BTreeSet::from([u.clone()]))
                        .pop_first()
                        .unwrap(),
                )
            })
            .collect();
        assert_eq!(
            chain,
            oracle_chain(&f, &want, &root),
            "seed {seed}: chain of {d}"
        );
    }
}

#[test]
fn reaching_definitions_match_path_oracle() {
    for seed in 0..200 {
        check_reaching(seed);
    }
}

#[test]
fn def_use_matches_path_enumeration() {
    for seed in 1000..1200 {
        check_def_use(seed);
    }
}

#[test]
fn generator_is_deterministic() {
    let cfg = GenConfig::default();
    assert_eq!(random_function(7, "f", &cfg), random_function(7, "f", &cfg));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reaching_definitions_any_seed(seed in any::<u64>()) {
        check_reaching(seed);
    }

    #[test]
    fn fixpoint_is_stable(seed in any::<u64>()) {
        let abi = AbiSpec::sysv_x86_64();
        let f = insert_dummy_defs(&random_function(seed, "f", &GenConfig::default()), &abi);
        prop_assert_eq!(reaching_definitions(&f, &abi), reaching_definitions(&f, &abi));
    }
}
